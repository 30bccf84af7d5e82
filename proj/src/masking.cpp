#include "spahgc/masking.hpp"

#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "spahgc/error.hpp"

namespace spahgc {

namespace {

void check_ratio(double r, const char* name) {
  if (!(r >= 0.0 && r <= 1.0)) {
    throw ConfigError(std::string("mask ratio ") + name + " must lie in [0, 1], got " +
                      std::to_string(r));
  }
}

// Fills (view1, view2) for `rows` nodes; each row gets an independent uniformly
// random subset of `zeros` positions switched off in view 1.
void fill_pair(Matrix& view1, Matrix& view2, std::size_t rows, std::size_t width,
               std::size_t zeros, std::mt19937_64& rng) {
  view1 = Matrix(rows, width, 1.0);
  view2 = Matrix(rows, width, 0.0);
  std::vector<std::size_t> perm(width);
  for (std::size_t i = 0; i < rows; ++i) {
    std::iota(perm.begin(), perm.end(), 0);
    // Partial Fisher-Yates: the first `zeros` slots become a uniform subset.
    for (std::size_t k = 0; k < zeros; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, width - 1);
      std::swap(perm[k], perm[pick(rng)]);
      view1(i, perm[k]) = 0.0;
      view2(i, perm[k]) = 1.0;
    }
  }
}

}  // namespace

std::size_t masked_count(double ratio, std::size_t width) {
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(width) + 1e-9));
}

MaskPair make_complementary_masks(std::size_t n, std::size_t m, std::size_t d,
                                  std::size_t reference_width, double alpha, double beta,
                                  std::uint64_t seed) {
  check_ratio(alpha, "alpha");
  check_ratio(beta, "beta");
  MaskPair p;
  p.alpha = alpha;
  p.beta = beta;
  p.seed = seed;
  std::mt19937_64 rng(seed);
  fill_pair(p.m1_target, p.m2_target, n, d, masked_count(alpha, d), rng);
  fill_pair(p.m1_reference, p.m2_reference, m, reference_width, masked_count(beta, reference_width),
            rng);
  return p;
}

Matrix apply_mask(const Matrix& features, const Matrix& mask) {
  if (features.rows() != mask.rows() || features.cols() != mask.cols()) {
    throw DimensionError("apply_mask: mask shape differs from features");
  }
  Matrix out = features;
  auto v = out.values();
  auto mv = mask.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] *= mv[i];
  return out;
}

}  // namespace spahgc
