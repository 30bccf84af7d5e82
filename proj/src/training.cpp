#include "spahgc/training.hpp"

#include <cmath>
#include <random>
#include <string>

#include "spahgc/error.hpp"
#include "spahgc/grad_check.hpp"
#include "spahgc/rng.hpp"
#include "spahgc/table_io.hpp"

namespace spahgc {

namespace {
constexpr double kVarianceFloor = 1e-8;

double population_variance(const Tensor& t, std::size_t col) {
  const std::size_t n = t.rows();
  double mean = 0.0;
  for (std::size_t r = 0; r < n; ++r) mean += t(r, col);
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t r = 0; r < n; ++r) ss += (t(r, col) - mean) * (t(r, col) - mean);
  return ss / static_cast<double>(n);
}

Tensor center_columns(const Tensor& x) { return add_row(x, scale(col_mean(x), -1.0)); }
}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be a finite non-negative number");
  }
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
  if (!(alpha >= 0.0 && alpha <= 1.0) || !(beta >= 0.0 && beta <= 1.0)) {
    throw ConfigError("mask ratios must lie in [0, 1]");
  }
  if (d_prime == 0 || n_heads == 0 || d_prime % n_heads != 0) {
    throw ConfigError("d_prime must be a positive multiple of n_heads");
  }
  if (n_layers == 0) throw ConfigError("n_layers must be positive");
  if (q == 0 || k == 0) throw ConfigError("Q and K must be positive");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},         {"learning_rate", learning_rate},
          {"weight_decay", weight_decay}, {"adam_beta1", adam_beta1},
          {"adam_beta2", adam_beta2}, {"adam_eps", adam_eps},
          {"alpha", alpha},           {"beta", beta},
          {"seed", seed},             {"d_prime", d_prime},
          {"q", q},                   {"k", k},
          {"n_layers", n_layers},     {"n_heads", n_heads},
          {"use_cs_edges", use_cs_edges}, {"resample_masks", resample_masks},
          {"swap_views", swap_views}};
}

Tensor loss_mse(const Tensor& y, const Tensor& y_hat) {
  if (y.rows() != y_hat.rows() || y.cols() != y_hat.cols()) {
    throw DimensionError("loss_mse: shape mismatch");
  }
  Tensor r = sub(y_hat, y);
  return scale(sum_all(mul(r, r)), 1.0 / static_cast<double>(y.rows()));
}

Tensor loss_pcc(const Tensor& y, const Tensor& y_hat) {
  if (y.rows() != y_hat.rows() || y.cols() != y_hat.cols()) {
    throw DimensionError("loss_pcc: shape mismatch");
  }
  std::vector<std::size_t> keep;
  for (std::size_t g = 0; g < y.cols(); ++g) {
    if (population_variance(y, g) > kVarianceFloor &&
        population_variance(y_hat, g) > kVarianceFloor) {
      keep.push_back(g);
    }
  }
  if (keep.empty()) throw DegenerateError("loss_pcc: every gene has degenerate variance");
  Tensor a = center_columns(select_cols(y, keep));
  Tensor b = center_columns(select_cols(y_hat, keep));
  Tensor cov = col_sum(mul(a, b));
  Tensor denom = sqrt(mul(col_sum(mul(a, a)), col_sum(mul(b, b))));
  return add_scalar(scale(mean_all(div(cov, denom)), -1.0), 1.0);
}

Tensor loss_contrastive(const Tensor& e1, const Tensor& e2) {
  if (e1.rows() != e2.rows() || e1.cols() != e2.cols()) {
    throw DimensionError("loss_contrastive: shape mismatch");
  }
  return add_scalar(scale(mean_all(cosine_rows(e1, e2.detach())), -2.0), 2.0);
}

void adam_step(std::span<Tensor> params, std::span<const std::vector<double>> grads,
               AdamState& state, const TrainConfig& cfg) {
  if (params.size() != grads.size()) throw DimensionError("adam_step: params/grads mismatch");
  if (state.m.empty()) {
    for (const Tensor& p : params) {
      state.m.emplace_back(p.size(), 0.0);
      state.v.emplace_back(p.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw DimensionError("adam_step: state mismatch");
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(cfg.adam_beta1, t);
  const double c2 = 1.0 - std::pow(cfg.adam_beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto values = params[i].mutable_values();
    const auto& g = grads[i];
    if (g.size() != values.size()) throw DimensionError("adam_step: gradient shape mismatch");
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      m[j] = cfg.adam_beta1 * m[j] + (1.0 - cfg.adam_beta1) * g[j];
      v[j] = cfg.adam_beta2 * v[j] + (1.0 - cfg.adam_beta2) * g[j] * g[j];
      values[j] -= cfg.learning_rate * cfg.weight_decay * values[j];
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      values[j] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
    }
  }
}

namespace {

StepLosses objective(const GraphIndex& index, const Tensor& view1_target,
                     const Tensor& view1_reference, const Tensor& truth,
                     const Tensor& e2_target, const Tensor& e2_reference,
                     const ModelParams& params) {
  ForwardState s = encode_view(index, view1_target, view1_reference, params);
  StepLosses out;
  out.l_mse = loss_mse(truth, s.y_hat);
  try {
    out.l_pcc = loss_pcc(truth, s.y_hat);
  } catch (const DegenerateError&) {
    // Constant predictions carry no correlation signal; count them as r = 0.
    out.l_pcc = Tensor::scalar(1.0);
  }
  out.l_con_t = loss_contrastive(s.lhat_target, e2_target);
  out.l_con_r = loss_contrastive(s.lhat_reference, e2_reference);
  out.l_total = add(add(out.l_mse, out.l_pcc), add(out.l_con_t, out.l_con_r));
  return out;
}

}  // namespace

StepLosses step_losses(const GraphIndex& index, const HetGraph& graph, const Matrix& truth,
                       const MaskPair& masks, const ModelParams& params, bool swap_views) {
  const Matrix& online_t = swap_views ? masks.m2_target : masks.m1_target;
  const Matrix& online_r = swap_views ? masks.m2_reference : masks.m1_reference;
  const Matrix& target_t = swap_views ? masks.m1_target : masks.m2_target;
  const Matrix& target_r = swap_views ? masks.m1_reference : masks.m2_reference;
  Tensor e2_target, e2_reference;
  {
    NoGradGuard no_grad;
    ForwardState v2 = encode_view(index, Tensor(apply_mask(graph.target_features, target_t)),
                                  Tensor(apply_mask(graph.reference_features, target_r)), params);
    e2_target = v2.lhat_target;
    e2_reference = v2.lhat_reference;
  }
  return objective(index, Tensor(apply_mask(graph.target_features, online_t)),
                   Tensor(apply_mask(graph.reference_features, online_r)),
                   Tensor(truth), e2_target, e2_reference, params);
}

ModelConfig model_config_for(const TrainConfig& cfg, std::size_t embed_dim,
                             std::size_t n_genes) {
  ModelConfig mc;
  mc.embed_dim = embed_dim;
  mc.n_genes = n_genes;
  mc.hidden = cfg.d_prime;
  mc.n_layers = cfg.n_layers;
  mc.n_heads = cfg.n_heads;
  mc.use_cs_edges = cfg.use_cs_edges;
  return mc;
}

TrainResult train_fold(std::span<const TrainingGraph> graphs, const TrainConfig& cfg) {
  cfg.validate();
  if (graphs.empty()) throw ConfigError("train_fold: no training graphs");
  const std::size_t d = graphs.front().graph.target_features.cols();
  const std::size_t genes = graphs.front().target_expression.cols();
  std::vector<GraphIndex> indices;
  for (const auto& tg : graphs) {
    if (tg.graph.target_features.cols() != d || tg.target_expression.cols() != genes ||
        tg.graph.reference_features.cols() != d + genes) {
      throw DimensionError("train_fold: graphs disagree on embedding or gene dimensions");
    }
    if (tg.target_expression.rows() != tg.graph.n_target) {
      throw DimensionError("train_fold: expression rows do not match target spots");
    }
    indices.push_back(GraphIndex::from(tg.graph));
  }

  TrainResult result{init_params(model_config_for(cfg, d, genes),
                                 derive_seed(cfg.seed, SeedStage::kInit)),
                     {}};
  std::vector<Tensor> params = result.params.tensors();
  AdamState adam;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    LossReport mean;
    try {
      for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
        const HetGraph& g = graphs[gi].graph;
        const std::size_t mask_epoch = cfg.resample_masks ? epoch : 0;
        const MaskPair masks = make_complementary_masks(
            g.n_target, g.n_reference, d, d + genes, cfg.alpha, cfg.beta,
            derive_seed(cfg.seed, SeedStage::kMask, mask_epoch * graphs.size() + gi));
        for (Tensor& p : params) p.zero_grad();
        Tape tape;
        StepLosses l = step_losses(indices[gi], g, graphs[gi].target_expression, masks,
                                   result.params, cfg.swap_views);
        tape.backward(l.l_total);
        std::vector<std::vector<double>> grads;
        grads.reserve(params.size());
        for (const Tensor& p : params) grads.emplace_back(p.grad().begin(), p.grad().end());
        adam_step(params, grads, adam, cfg);
        mean.l_mse += l.l_mse.item();
        mean.l_pcc += l.l_pcc.item();
        mean.l_con_t += l.l_con_t.item();
        mean.l_con_r += l.l_con_r.item();
        mean.l_total += l.l_total.item();
      }
    } catch (const NumericError& e) {
      throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ": " +
                            e.what());
    }
    const double inv = 1.0 / static_cast<double>(graphs.size());
    mean.l_mse *= inv;
    mean.l_pcc *= inv;
    mean.l_con_t *= inv;
    mean.l_con_r *= inv;
    mean.l_total *= inv;
    result.history.push_back(mean);
  }
  return result;
}

TrainResult train_fold(const HetGraph& graph, const Matrix& target_expression,
                       const TrainConfig& cfg) {
  std::vector<TrainingGraph> one{{graph, target_expression}};
  return train_fold(one, cfg);
}

void write_loss_history_csv(const std::filesystem::path& path,
                            std::span<const LossReport> history) {
  std::string out = "epoch,l_mse,l_pcc,l_con_t,l_con_r,l_total\n";
  for (std::size_t e = 0; e < history.size(); ++e) {
    const LossReport& l = history[e];
    out += std::to_string(e) + "," + format_f64(l.l_mse) + "," + format_f64(l.l_pcc) + "," +
           format_f64(l.l_con_t) + "," + format_f64(l.l_con_r) + "," + format_f64(l.l_total) +
           "\n";
  }
  write_text_file(path, out);
}

double full_model_grad_check(std::uint64_t seed, double h) {
  constexpr std::size_t n = 4, m = 6, d = 3, genes = 2;
  std::mt19937_64 rng(derive_seed(seed, SeedStage::kGradCheck));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 10.0);
  auto random_matrix = [&](std::size_t r, std::size_t c, bool positive) {
    Matrix x(r, c);
    for (double& v : x.values()) v = positive ? unif(rng) : normal(rng);
    return x;
  };

  HetGraph g;
  g.target_slide = "target";
  g.n_target = n;
  g.n_reference = m;
  const Matrix coords = random_matrix(n, 2, true);
  g.target_features = random_matrix(n, d, false);
  g.reference_features = random_matrix(m, d + genes, false);
  g.reference_slide_of.assign(m, "reference");
  g.ts_edges = build_ts_edges(coords, 2);
  const std::vector<std::size_t> embed_cols{0, 1, 2};
  const Matrix ref_embed = g.reference_features.select_cols(embed_cols);
  g.cs_edges = build_cs_edges(g.target_features, ref_embed, 2, g.reference_slide_of, {});
  g.rs_edges = build_rs_edges(g.reference_features, 2);
  const Matrix truth = random_matrix(n, genes, false);

  ModelConfig mc;
  mc.embed_dim = d;
  mc.n_genes = genes;
  mc.hidden = 8;
  mc.n_heads = 4;
  ModelParams params = init_params(mc, derive_seed(seed, SeedStage::kInit));
  const GraphIndex index = GraphIndex::from(g);
  const MaskPair masks = make_complementary_masks(n, m, d, d + genes, 0.34, 0.4,
                                                  derive_seed(seed, SeedStage::kMask));

  Tensor e2_target, e2_reference;
  {
    NoGradGuard no_grad;
    ForwardState v2 =
        encode_view(index, Tensor(apply_mask(g.target_features, masks.m2_target)),
                    Tensor(apply_mask(g.reference_features, masks.m2_reference)), params);
    e2_target = v2.lhat_target;
    e2_reference = v2.lhat_reference;
  }
  const Tensor view1_target(apply_mask(g.target_features, masks.m1_target));
  const Tensor view1_reference(apply_mask(g.reference_features, masks.m1_reference));
  const Tensor truth_t(truth);
  std::vector<Tensor> leaves = params.tensors();
  return grad_check_params(
      [&] {
        return objective(index, view1_target, view1_reference, truth_t, e2_target,
                         e2_reference, params)
            .l_total;
      },
      leaves, h);
}

}  // namespace spahgc
