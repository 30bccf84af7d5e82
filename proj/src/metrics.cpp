#include "spahgc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>

#include "spahgc/error.hpp"

namespace spahgc {

namespace {
constexpr double kVarianceFloor = 1e-8;
constexpr std::size_t kExactLimit = 25;
constexpr std::size_t kMinNonzero = 5;

struct Moments {
  double mean_y = 0.0, mean_h = 0.0, syy = 0.0, shh = 0.0, syh = 0.0;
};

Moments moments(std::span<const double> y, std::span<const double> h) {
  Moments m;
  const double n = static_cast<double>(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    m.mean_y += y[i];
    m.mean_h += h[i];
  }
  m.mean_y /= n;
  m.mean_h /= n;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double a = y[i] - m.mean_y;
    const double b = h[i] - m.mean_h;
    m.syy += a * a;
    m.shh += b * b;
    m.syh += a * b;
  }
  return m;
}

bool degenerate(const Moments& m, std::size_t n) {
  const double dn = static_cast<double>(n);
  return m.syy / dn <= kVarianceFloor || m.shh / dn <= kVarianceFloor;
}

void check_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch");
  }
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

__int128 choose2(__int128 x) { return x * (x - 1) / 2; }

}  // namespace

double pcc(std::span<const double> y, std::span<const double> y_hat) {
  if (y.size() != y_hat.size()) throw DimensionError("pcc: length mismatch");
  if (y.size() < 2) throw DegenerateError("pcc: need at least two observations");
  const Moments m = moments(y, y_hat);
  if (degenerate(m, y.size())) throw DegenerateError("pcc: constant input vector");
  return m.syh / std::sqrt(m.syy * m.shh);
}

PccSummary pcc_mean(const Matrix& y, const Matrix& y_hat) {
  check_same_shape(y, y_hat, "pcc_mean");
  PccSummary s;
  double total = 0.0;
  std::size_t used = 0;
  std::vector<double> col_y(y.rows()), col_h(y.rows());
  for (std::size_t g = 0; g < y.cols(); ++g) {
    for (std::size_t r = 0; r < y.rows(); ++r) {
      col_y[r] = y(r, g);
      col_h[r] = y_hat(r, g);
    }
    const Moments m = moments(col_y, col_h);
    if (y.rows() < 2 || degenerate(m, y.rows())) {
      s.per_gene.push_back(std::nullopt);
      ++s.n_skipped;
      continue;
    }
    const double r = m.syh / std::sqrt(m.syy * m.shh);
    s.per_gene.push_back(r);
    total += r;
    ++used;
  }
  s.mean = used == 0 ? std::numeric_limits<double>::quiet_NaN()
                     : total / static_cast<double>(used);
  return s;
}

double rmse(const Matrix& y, const Matrix& y_hat) {
  check_same_shape(y, y_hat, "rmse");
  if (y.values().empty()) throw DimensionError("rmse: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < y.values().size(); ++i) {
    const double d = y.values()[i] - y_hat.values()[i];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(y.values().size()));
}

double ari(std::span<const std::size_t> labels_a, std::span<const std::size_t> labels_b) {
  if (labels_a.size() != labels_b.size()) throw DimensionError("ari: length mismatch");
  if (labels_a.size() < 2) throw DegenerateError("ari: need at least two items");
  std::map<std::pair<std::size_t, std::size_t>, __int128> cells;
  std::map<std::size_t, __int128> rows, cols;
  for (std::size_t i = 0; i < labels_a.size(); ++i) {
    ++cells[{labels_a[i], labels_b[i]}];
    ++rows[labels_a[i]];
    ++cols[labels_b[i]];
  }
  __int128 index = 0, a = 0, b = 0;
  for (const auto& [key, c] : cells) index += choose2(c);
  for (const auto& [key, c] : rows) a += choose2(c);
  for (const auto& [key, c] : cols) b += choose2(c);
  const __int128 pairs = choose2(static_cast<__int128>(labels_a.size()));
  // ARI = (index - a*b/pairs) / ((a+b)/2 - a*b/pairs), scaled by 2*pairs.
  const __int128 num = 2 * (index * pairs - a * b);
  const __int128 den = (a + b) * pairs - 2 * a * b;
  if (den == 0) throw DegenerateError("ari: both partitions are trivial");
  return static_cast<double>(static_cast<long double>(num) / static_cast<long double>(den));
}

KMeansResult kmeans_cluster(const Matrix& points, std::size_t k, std::uint64_t seed) {
  const std::size_t n = points.rows();
  if (k == 0) throw ConfigError("kmeans: k must be positive");
  if (k > n) {
    throw ConfigError("kmeans: k = " + std::to_string(k) + " exceeds " + std::to_string(n) +
                      " points");
  }
  const std::size_t dim = points.cols();
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> chosen;
  chosen.push_back(std::uniform_int_distribution<std::size_t>(0, n - 1)(rng));
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  while (chosen.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], squared_distance(points.row(i), points.row(chosen.back())));
      total += nearest[i];
    }
    std::size_t pick = n;
    if (total > 0.0) {
      double u = std::uniform_real_distribution<double>(0.0, total)(rng);
      for (std::size_t i = 0; i < n; ++i) {
        if (nearest[i] <= 0.0) continue;
        pick = i;
        if (u < nearest[i]) break;
        u -= nearest[i];
      }
    } else {
      for (std::size_t i = 0; i < n && pick == n; ++i) {
        if (std::find(chosen.begin(), chosen.end(), i) == chosen.end()) pick = i;
      }
    }
    chosen.push_back(pick);
  }

  KMeansResult res;
  res.centroids = points.select_rows(chosen);
  res.labels.assign(n, 0);
  for (std::size_t iter = 0; iter < 100; ++iter) {
    res.iterations = iter + 1;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double dist = squared_distance(points.row(i), res.centroids.row(c));
        if (dist < best) {
          best = dist;
          res.labels[i] = c;
        }
      }
    }
    Matrix next(k, dim);
    std::vector<std::size_t> count(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = res.labels[i];
      ++count[c];
      for (std::size_t j = 0; j < dim; ++j) next(c, j) += points(i, j);
    }
    double shift = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      for (std::size_t j = 0; j < dim; ++j) {
        next(c, j) = count[c] == 0 ? res.centroids(c, j)
                                   : next(c, j) / static_cast<double>(count[c]);
      }
      shift = std::max(shift, std::sqrt(squared_distance(next.row(c), res.centroids.row(c))));
    }
    res.centroids = std::move(next);
    if (shift < 1e-6) break;
  }
  res.inertia = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      const double dist = squared_distance(points.row(i), res.centroids.row(c));
      if (dist < best) {
        best = dist;
        res.labels[i] = c;
      }
    }
    res.inertia += best;
  }
  return res;
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> deltas) {
  std::vector<double> nz;
  for (double d : deltas) {
    if (!std::isfinite(d)) throw NumericError("wilcoxon: non-finite difference");
    if (d != 0.0) nz.push_back(d);
  }
  if (nz.empty()) throw DegenerateError("wilcoxon: every difference is zero");
  if (nz.size() < kMinNonzero) {
    throw DegenerateError("wilcoxon: need at least 5 nonzero differences, got " +
                          std::to_string(nz.size()));
  }
  const std::size_t n = nz.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return std::abs(nz[a]) < std::abs(nz[b]); });

  // Doubled ranks keep averaged ties integral.
  std::vector<long> rank2(n);
  double tie_term = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && std::abs(nz[order[j + 1]]) == std::abs(nz[order[i]])) ++j;
    const long sum_doubled = static_cast<long>(i + 1 + j + 1);
    for (std::size_t t = i; t <= j; ++t) rank2[order[t]] = sum_doubled;
    const double t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }
  long w2 = 0, total2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    total2 += rank2[i];
    if (nz[i] > 0) w2 += rank2[i];
  }

  WilcoxonResult res;
  res.n_used = n;
  res.w_plus = static_cast<double>(w2) / 2.0;
  if (n <= kExactLimit) {
    res.exact = true;
    std::vector<double> dist(static_cast<std::size_t>(total2) + 1, 0.0);
    dist[0] = 1.0;
    long reach = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (long s = reach; s >= 0; --s) {
        if (dist[s] != 0.0) dist[s + rank2[i]] += dist[s];
      }
      reach += rank2[i];
    }
    const double all = std::ldexp(1.0, static_cast<int>(n));
    double lower = 0.0, upper = 0.0;
    for (long s = 0; s <= total2; ++s) {
      if (s <= w2) lower += dist[s];
      if (s >= w2) upper += dist[s];
    }
    res.p_value = std::min(1.0, 2.0 * std::min(lower, upper) / all);
    return res;
  }
  const double dn = static_cast<double>(n);
  const double mean = dn * (dn + 1.0) / 4.0;
  const double var = dn * (dn + 1.0) * (2.0 * dn + 1.0) / 24.0 - tie_term / 48.0;
  const double z = (std::abs(res.w_plus - mean) - 0.5) / std::sqrt(var);
  res.p_value = z <= 0.0 ? 1.0 : std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  return res;
}

}  // namespace spahgc
