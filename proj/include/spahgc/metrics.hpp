#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "spahgc/matrix.hpp"

namespace spahgc {

/// Pearson r with a standard-deviation denominator. Either side having
/// population variance <= 1e-8 raises DegenerateError.
double pcc(std::span<const double> y, std::span<const double> y_hat);

struct PccSummary {
  double mean = 0.0;  // NaN when every gene was skipped
  std::size_t n_skipped = 0;
  std::vector<std::optional<double>> per_gene;
};

/// Per-gene (column) Pearson r averaged over the non-degenerate genes.
PccSummary pcc_mean(const Matrix& y, const Matrix& y_hat);

/// sqrt of the mean over all entries of the squared residual.
double rmse(const Matrix& y, const Matrix& y_hat);

/// Adjusted Rand index from the contingency table in exact integer arithmetic.
double ari(std::span<const std::size_t> labels_a, std::span<const std::size_t> labels_b);

struct KMeansResult {
  std::vector<std::size_t> labels;
  Matrix centroids;
  double inertia = 0.0;
  std::size_t iterations = 0;
};

/// k-means++ seeding then Lloyd iterations until the largest centroid shift
/// drops below 1e-6 or 100 iterations. Distance ties go to the lower cluster.
KMeansResult kmeans_cluster(const Matrix& points, std::size_t k, std::uint64_t seed);

struct WilcoxonResult {
  double p_value = 1.0;
  double w_plus = 0.0;      // sum of ranks of positive differences
  std::size_t n_used = 0;   // nonzero differences
  bool exact = false;
};

/// Two-sided signed-rank test on paired differences. Zeros are dropped and
/// tied magnitudes share their average rank. Exact null distribution for up
/// to 25 differences, normal approximation with tie and continuity
/// correction beyond.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> deltas);

}  // namespace spahgc
