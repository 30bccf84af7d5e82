#pragma once

#include <algorithm>
#include <boost/multiprecision/cpp_int.hpp>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "spahgc/hetgraph.hpp"
#include "spahgc/matrix.hpp"

namespace testing {

/// Brute-force neighbor oracles: full sorts over all pairs. Keys are long
/// doubles; near-equal keys are settled on exact rationals so ties are ties.
using Exact = boost::multiprecision::cpp_rational;

struct Ranked {
  long double key;
  std::size_t index;
};

template <class ExactKey>
void sort_ranked(std::vector<Ranked>& v, ExactKey exact_key) {
  std::map<std::size_t, Exact> cache;
  auto exact = [&](std::size_t i) -> const Exact& {
    auto it = cache.find(i);
    if (it == cache.end()) it = cache.emplace(i, exact_key(i)).first;
    return it->second;
  };
  std::sort(v.begin(), v.end(), [&](const Ranked& a, const Ranked& b) {
    const long double gap = a.key - b.key;
    if (std::abs(gap) > 1e-12L * (1.0L + std::abs(a.key))) return gap < 0;
    const Exact& x = exact(a.index);
    const Exact& y = exact(b.index);
    if (x != y) return x < y;
    return a.index < b.index;
  });
}

inline long double cosine(std::span<const double> a, std::span<const double> b) {
  long double ab = 0, aa = 0, bb = 0;
  for (std::size_t c = 0; c < a.size(); ++c) {
    ab += static_cast<long double>(a[c]) * b[c];
    aa += static_cast<long double>(a[c]) * a[c];
    bb += static_cast<long double>(b[c]) * b[c];
  }
  return ab / std::sqrt(aa * bb);
}

/// sign(cos) * cos^2, which orders pairs exactly as the cosine does.
inline Exact signed_cos2(std::span<const double> a, std::span<const double> b) {
  Exact ab = 0, aa = 0, bb = 0;
  for (std::size_t c = 0; c < a.size(); ++c) {
    const Exact x(a[c]), y(b[c]);
    ab += x * y;
    aa += x * x;
    bb += y * y;
  }
  const Exact c2 = ab * ab / (aa * bb);
  return ab < 0 ? Exact(-c2) : c2;
}

inline std::vector<spahgc::Edge> oracle_ts(const spahgc::Matrix& coords, std::size_t q) {
  std::vector<spahgc::Edge> out;
  for (std::size_t i = 0; i < coords.rows(); ++i) {
    std::vector<Ranked> all;
    for (std::size_t j = 0; j < coords.rows(); ++j) {
      if (j == i) continue;
      const long double dx = coords(i, 0) - static_cast<long double>(coords(j, 0));
      const long double dy = coords(i, 1) - static_cast<long double>(coords(j, 1));
      all.push_back({dx * dx + dy * dy, j});
    }
    sort_ranked(all, [&](std::size_t j) {
      const Exact dx = Exact(coords(i, 0)) - coords(j, 0), dy = Exact(coords(i, 1)) - coords(j, 1);
      return Exact(dx * dx + dy * dy);
    });
    for (std::size_t r = 0; r < q; ++r) out.push_back({i, all[r].index});
  }
  return out;
}

inline std::vector<spahgc::Edge> oracle_cs(const spahgc::Matrix& t, const spahgc::Matrix& r,
                                           std::size_t k,
                                           const std::vector<std::string>& slide_of,
                                           const std::set<std::string>& excluded) {
  std::vector<spahgc::Edge> out;
  for (std::size_t i = 0; i < t.rows(); ++i) {
    std::vector<Ranked> all;
    for (std::size_t j = 0; j < r.rows(); ++j) {
      if (excluded.count(slide_of[j]) == 0) all.push_back({-cosine(t.row(i), r.row(j)), j});
    }
    sort_ranked(all, [&](std::size_t j) { return Exact(-signed_cos2(t.row(i), r.row(j))); });
    for (std::size_t x = 0; x < k; ++x) out.push_back({i, all[x].index});
  }
  return out;
}

inline std::vector<spahgc::Edge> oracle_rs(const spahgc::Matrix& h, std::size_t k) {
  std::vector<spahgc::Edge> out;
  for (std::size_t j = 0; j < h.rows(); ++j) {
    std::vector<Ranked> all;
    for (std::size_t p = 0; p < h.rows(); ++p) {
      if (p != j) all.push_back({-cosine(h.row(j), h.row(p)), p});
    }
    sort_ranked(all, [&](std::size_t p) { return Exact(-signed_cos2(h.row(j), h.row(p))); });
    for (std::size_t x = 0; x < k; ++x) out.push_back({j, all[x].index});
  }
  return out;
}

inline std::set<spahgc::Edge> edge_set(const std::vector<spahgc::Edge>& e) {
  return {e.begin(), e.end()};
}

}  // namespace testing
