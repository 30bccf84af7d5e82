#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "spahgc/hetgraph.hpp"
#include "spahgc/model.hpp"
#include "spahgc/slide.hpp"
#include "spahgc/training.hpp"

namespace spahgc {

struct InnerFold {
  std::string validation;
  std::vector<std::string> training;
  std::set<std::string> excluded;  // test and validation slides
};

struct OuterFold {
  std::size_t index = 0;
  std::string test;
  std::vector<std::string> training;
  std::set<std::string> excluded;  // the test slide
  std::vector<InnerFold> inner;
};

struct FoldPlan {
  std::vector<OuterFold> outer;

  /// Throws ValidationError if a test slide leaks into its inner folds or an
  /// exclusion set misses its test or validation slide.
  void validate() const;
  nlohmann::json to_json() const;
};

/// Leave-one-slide-out outer folds, each with a leave-one-out inner split of
/// its training slides. Needs at least three slides.
FoldPlan plan_nested_loocv(std::span<const std::string> slide_ids);

struct MetricsReport {
  std::size_t fold = 0;
  std::string slide;
  std::vector<std::optional<double>> per_gene_pcc;
  double mean_pcc = 0.0;  // NaN when every gene is skipped
  std::size_t n_genes_skipped = 0;
  double rmse = 0.0;
  std::optional<double> ari;
  std::optional<double> wilcoxon_p;
};

/// PCC, RMSE and, when `n_clusters` > 0, the ARI between k-means partitions
/// of the predictions and of the truth. ARI is left empty when either side
/// cannot be clustered or both partitions are trivial.
MetricsReport evaluate_predictions(const Matrix& predictions, const Matrix& truth,
                                   std::size_t n_clusters, std::uint64_t seed);
/// Single unmasked forward pass, then evaluate_predictions.
MetricsReport evaluate_fold(const ModelParams& params, const HetGraph& graph, const Matrix& truth,
                            std::size_t n_clusters, std::uint64_t seed);

/// Graphs for one train/evaluate split. Each training slide becomes a target
/// whose references are the other training slides; the evaluation slide's
/// references are all training slides. Every graph excludes `excluded`.
struct FoldGraphs {
  std::vector<TrainingGraph> training;
  HetGraph evaluation;
  Matrix evaluation_truth;
};
FoldGraphs build_fold_graphs(const Dataset& dataset, std::span<const std::string> training_ids,
                             const std::string& evaluation_id,
                             const std::set<std::string>& excluded, std::size_t q,
                             std::size_t k);

/// Number of reference rows and CS edge endpoints that lie on an excluded slide.
std::size_t count_leaks(const HetGraph& graph, const std::set<std::string>& excluded);

/// Called for every graph the driver assembles, with the fold label
/// ("outer 2", "outer 2 inner 1") and that fold's exclusion set.
using GraphObserver =
    std::function<void(const std::string& label, const std::set<std::string>& excluded,
                       const HetGraph& graph)>;

struct LoocvConfig {
  TrainConfig train;
  std::size_t n_clusters = 4;
  /// Inner-fold tuning runs only when these span more than one combination.
  std::vector<std::size_t> grid_d_prime;
  std::vector<double> grid_learning_rate;
  std::size_t jobs = 1;
  GraphObserver observer;
  std::function<void(const std::string&)> log;
};

struct TuningChoice {
  std::size_t d_prime = 0;
  double learning_rate = 0.0;
  std::optional<double> inner_mean_pcc;
};

struct LoocvResult {
  FoldPlan plan;
  std::vector<MetricsReport> reports;  // one per outer fold, plan order
  std::vector<TuningChoice> choices;
  std::size_t graphs_audited = 0;
};

LoocvResult run_loocv(const Dataset& dataset, const LoocvConfig& cfg);

void write_report_csv(const std::filesystem::path& path, std::span<const MetricsReport> reports);

}  // namespace spahgc
