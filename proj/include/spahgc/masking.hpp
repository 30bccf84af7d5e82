#pragma once

#include <cstddef>
#include <cstdint>

#include "spahgc/matrix.hpp"

namespace spahgc {

/// Feature-wise complementary masks for the two augmented views.
/// View 1 zeroes floor(alpha * d) target features (floor(beta * (d+M))
/// reference features) per row; view 2 is the exact complement.
struct MaskPair {
  Matrix m1_target;
  Matrix m2_target;
  Matrix m1_reference;
  Matrix m2_reference;
  double alpha = 0.0;
  double beta = 0.0;
  std::uint64_t seed = 0;
};

/// floor(ratio * width) with a small tolerance so that e.g. 0.29 * 100 is 29.
std::size_t masked_count(double ratio, std::size_t width);

MaskPair make_complementary_masks(std::size_t n, std::size_t m, std::size_t d,
                                  std::size_t reference_width, double alpha, double beta,
                                  std::uint64_t seed);

Matrix apply_mask(const Matrix& features, const Matrix& mask);

}  // namespace spahgc
