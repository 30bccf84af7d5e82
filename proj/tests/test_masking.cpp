#include <doctest.h>

#include <cmath>

#include "spahgc/error.hpp"
#include "spahgc/masking.hpp"
#include "support.hpp"

using namespace spahgc;
using testing::Gen;

namespace {

std::size_t zeros_in_row(const Matrix& m, std::size_t r) {
  std::size_t z = 0;
  for (double v : m.row(r)) z += v == 0.0 ? 1 : 0;
  return z;
}

bool complementary(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a.values()[i], y = b.values()[i];
    if (x + y != 1.0 || x * y != 0.0) return false;
    if (x != 0.0 && x != 1.0) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("alpha zero keeps every target feature in view 1") {
  MaskPair p = make_complementary_masks(3, 2, 4, 6, 0.0, 0.5, 1);
  CHECK(p.m1_target == Matrix(3, 4, 1.0));
  CHECK(p.m2_target == Matrix(3, 4, 0.0));
}

TEST_CASE("masked counts per row") {
  MaskPair p = make_complementary_masks(5, 4, 10, 20, 0.8, 0.9, 7);
  for (std::size_t r = 0; r < 5; ++r) {
    CHECK(zeros_in_row(p.m1_target, r) == 8);
    CHECK(zeros_in_row(p.m2_target, r) == 2);
  }
  for (std::size_t r = 0; r < 4; ++r) CHECK(zeros_in_row(p.m1_reference, r) == 18);
  CHECK(masked_count(0.29, 100) == 29);
  CHECK(masked_count(1.0, 7) == 7);
  CHECK_THROWS_AS(make_complementary_masks(1, 1, 2, 2, 1.5, 0.5, 0), ConfigError);
  CHECK_THROWS_AS(make_complementary_masks(1, 1, 2, 2, 0.5, -0.1, 0), ConfigError);
}

TEST_CASE("complementarity over random configurations") {
  Gen g(31);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = g.index(0, 6), m = g.index(0, 6);
    const std::size_t d = g.index(1, 12), w = g.index(1, 15);
    const double alpha = g.uniform(0, 1), beta = g.uniform(0, 1);
    MaskPair p = make_complementary_masks(n, m, d, w, alpha, beta, g.engine()());
    CHECK(complementary(p.m1_target, p.m2_target));
    CHECK(complementary(p.m1_reference, p.m2_reference));
    for (std::size_t r = 0; r < n; ++r) CHECK(zeros_in_row(p.m1_target, r) == masked_count(alpha, d));
    for (std::size_t r = 0; r < m; ++r) {
      CHECK(zeros_in_row(p.m1_reference, r) == masked_count(beta, w));
    }
  }
}

TEST_CASE("apply_mask") {
  Gen g(2);
  const Matrix x = g.matrix(4, 5);
  CHECK(apply_mask(x, Matrix(4, 5, 1.0)) == x);
  CHECK(apply_mask(x, Matrix(4, 5, 0.0)) == Matrix(4, 5, 0.0));
  CHECK_THROWS_AS(apply_mask(x, Matrix(5, 4, 1.0)), DimensionError);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    MaskPair p = make_complementary_masks(4, 0, 5, 1, 0.6, 0.0, seed);
    const Matrix a = apply_mask(x, p.m1_target), b = apply_mask(x, p.m2_target);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(a.values()[i] + b.values()[i] == x.values()[i]);
  }
}

TEST_CASE("masks are deterministic per seed and vary across seeds") {
  MaskPair a = make_complementary_masks(6, 6, 16, 20, 0.5, 0.5, 123);
  MaskPair b = make_complementary_masks(6, 6, 16, 20, 0.5, 0.5, 123);
  CHECK(a.m1_target == b.m1_target);
  CHECK(a.m1_reference == b.m1_reference);
  for (std::uint64_t s = 0; s < 100; ++s) {
    MaskPair x = make_complementary_masks(1, 1, 8, 8, 0.5, 0.5, 2 * s);
    MaskPair y = make_complementary_masks(1, 1, 8, 8, 0.5, 0.5, 2 * s + 1);
    CHECK((x.m1_target != y.m1_target || x.m1_reference != y.m1_reference));
  }
}

TEST_CASE("masked positions are spread uniformly over features") {
  MaskPair p = make_complementary_masks(20000, 0, 10, 1, 0.3, 0.0, 5);
  for (std::size_t c = 0; c < 10; ++c) {
    double zeros = 0.0;
    for (std::size_t r = 0; r < 20000; ++r) zeros += p.m1_target(r, c) == 0.0 ? 1.0 : 0.0;
    // Expected 6000 per column with sd about 65.
    CHECK(std::abs(zeros - 6000.0) < 400.0);
  }
}
