#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

#include "spahgc/hetgraph.hpp"
#include "spahgc/masking.hpp"
#include "spahgc/model.hpp"
#include "spahgc/tensor.hpp"

namespace spahgc {

struct TrainConfig {
  std::size_t epochs = 200;
  double learning_rate = 1e-4;
  double weight_decay = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double alpha = 0.8;  // target masking ratio of view 1
  double beta = 0.9;   // reference masking ratio of view 1
  std::uint64_t seed = 0;
  std::size_t d_prime = 512;
  std::size_t q = 5;
  std::size_t k = 7;
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  bool use_cs_edges = true;
  /// When false the epoch-0 masks are reused for every epoch.
  bool resample_masks = true;
  /// When true the gradient branch sees the complement masks (a 1-alpha
  /// fraction hidden) and the stop-gradient target sees the alpha/beta masks.
  bool swap_views = true;

  void validate() const;
  nlohmann::json to_json() const;
};

struct LossReport {
  double l_mse = 0.0;
  double l_pcc = 0.0;
  double l_con_t = 0.0;
  double l_con_r = 0.0;
  double l_total = 0.0;
};

/// Mean over spots of the squared residual row norm.
Tensor loss_mse(const Tensor& y, const Tensor& y_hat);
/// 1 - mean per-gene Pearson r. Genes where either side has population
/// variance <= 1e-8 are skipped; if every gene is skipped DegenerateError.
Tensor loss_pcc(const Tensor& y, const Tensor& y_hat);
/// Mean of 2 - 2 cos(e1_j, e2_j). e2 is detached.
Tensor loss_contrastive(const Tensor& e1, const Tensor& e2);

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::size_t t = 0;
};

/// One Adam update with decoupled weight decay. State is sized on first use.
void adam_step(std::span<Tensor> params, std::span<const std::vector<double>> grads,
               AdamState& state, const TrainConfig& cfg);

/// A graph whose target slide has known expression.
struct TrainingGraph {
  HetGraph graph;
  Matrix target_expression;  // n x M
};

struct TrainResult {
  ModelParams params;
  std::vector<LossReport> history;  // one entry per epoch, averaged over graphs
};

/// The composite objective of one masked step on one graph. Parameters get
/// gradients when a Tape is active.
struct StepLosses {
  Tensor l_mse, l_pcc, l_con_t, l_con_r, l_total;
};
/// View 1 (m1 masks) carries gradients and supervision unless `swap_views`.
StepLosses step_losses(const GraphIndex& index, const HetGraph& graph, const Matrix& truth,
                       const MaskPair& masks, const ModelParams& params,
                       bool swap_views = false);

ModelConfig model_config_for(const TrainConfig& cfg, std::size_t embed_dim,
                             std::size_t n_genes);

/// Each epoch takes one Adam step per training graph. A non-finite value
/// raises DivergenceError naming the epoch.
TrainResult train_fold(std::span<const TrainingGraph> graphs, const TrainConfig& cfg);
TrainResult train_fold(const HetGraph& graph, const Matrix& target_expression,
                       const TrainConfig& cfg);

void write_loss_history_csv(const std::filesystem::path& path,
                            std::span<const LossReport> history);

/// Finite-difference check of the whole objective on a small random
/// heterogeneous graph (4 target spots, 6 reference spots). Returns the max
/// relative error over every parameter coordinate.
double full_model_grad_check(std::uint64_t seed, double h = 1e-5);

}  // namespace spahgc
