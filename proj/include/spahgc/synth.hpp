#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "spahgc/matrix.hpp"
#include "spahgc/metrics.hpp"
#include "spahgc/slide.hpp"

namespace spahgc {

struct SynthConfig {
  std::size_t n_slides = 6;
  std::size_t spots_per_slide = 200;
  std::size_t d = 32;
  std::size_t n_genes = 20;
  double noise_sigma = 0.1;
  double smoothing = 0.3;  // lambda
  std::uint64_t seed = 0;
  /// Linear planted map (y0 = zW) instead of softplus(zW).
  bool linear = false;
  /// Expression drawn independently of the embeddings.
  bool null_signal = false;

  void validate() const;
};

inline constexpr double kSynthLibrarySize = 1e4;

/// Everything the generator drew, for tests that need the planted truth.
struct SynthDetail {
  Dataset dataset;
  Matrix w;                       // d x M, shared across slides
  std::vector<Matrix> clean;      // y0 per slide
  std::vector<Matrix> target;     // smoothed, noisy, clamped y per slide
  std::vector<std::vector<std::vector<std::size_t>>> neighbors;  // grid 4-neighborhood
};

/// Slides on a jittered square grid with standard normal embeddings,
/// y = (1 - lambda) y0 + lambda * mean_grid_neighbors(y0) + noise, clamped at
/// zero. Counts are built so that CPM + log1p recovers y; one extra
/// "gene_filler" column absorbs the rest of the 1e4 library. Every slide's
/// expression is already normalized and restricted to the planted genes.
SynthDetail generate_detailed(const SynthConfig& cfg);
Dataset generate(const SynthConfig& cfg);

struct RidgeResult {
  Matrix predictions;
  PccSummary pcc;
};

/// Closed-form ridge per gene with an unpenalized intercept (fit on centered
/// data).
RidgeResult ridge_baseline(const Matrix& train_z, const Matrix& train_y, const Matrix& test_z,
                           const Matrix& test_y, double lambda = 1e-2);

}  // namespace spahgc
