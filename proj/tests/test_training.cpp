#include <doctest.h>

#include <boost/multiprecision/cpp_dec_float.hpp>
#include <cmath>

#include "fixtures.hpp"
#include "spahgc/error.hpp"
#include "spahgc/grad_check.hpp"
#include "spahgc/loocv.hpp"
#include "spahgc/masking.hpp"
#include "spahgc/rng.hpp"
#include "spahgc/synth.hpp"
#include "spahgc/table_io.hpp"
#include "spahgc/training.hpp"
#include "support.hpp"

using namespace spahgc;
using testing::Gen;
using testing::TempDir;

namespace {

TrainConfig tiny_train(std::size_t epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.d_prime = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.q = 2;
  c.k = 3;
  c.seed = 11;
  c.learning_rate = 1e-3;
  return c;
}

TrainingGraph tiny_training_graph(std::uint64_t seed) {
  Gen g(seed);
  HetGraph graph = testing::random_graph(g, 6, 8, 3, 2, 2, 3);
  Matrix y = g.matrix(6, 2);
  return {graph, y};
}

double pearson_oracle(const std::vector<double>& a, const std::vector<double>& b) {
  using boost::multiprecision::cpp_dec_float_50;
  cpp_dec_float_50 ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= a.size();
  mb /= b.size();
  cpp_dec_float_50 sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return static_cast<double>(sab / sqrt(saa * sbb));
}

bool same_params(const ModelParams& a, const ModelParams& b) {
  const auto x = a.tensors(), y = b.tensors();
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!testing::bitwise_equal(x[i].values(), y[i].values())) return false;
  }
  return x.size() == y.size();
}

}  // namespace

TEST_CASE("loss_mse") {
  Tensor y = Tensor::from_rows({{0, 0}});
  CHECK(loss_mse(y, y).item() == 0.0);
  CHECK(loss_mse(y, Tensor::from_rows({{1, 1}})).item() == 2.0);
  Gen g(1);
  Tensor a = g.tensor(5, 3), b = g.tensor(5, 3);
  double oracle = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < 3; ++j) row += (a(i, j) - b(i, j)) * (a(i, j) - b(i, j));
    oracle += row;
  }
  CHECK(std::abs(loss_mse(a, b).item() - oracle / 5.0) < 1e-12);
}

TEST_CASE("loss_pcc") {
  Tensor y = Tensor::from_rows({{1, 4}, {2, -1}, {3, 0.5}});
  CHECK(std::abs(loss_pcc(y, y).item()) < 1e-12);
  CHECK(std::abs(loss_pcc(y, add_scalar(scale(y, -1.0), 3.0)).item() - 2.0) < 1e-12);

  const double r = pearson_oracle({1, 2, 3}, {1, 2, 2});
  CHECK(std::abs(r - std::sqrt(3.0) / 2.0) < 1e-15);
  const double l = loss_pcc(Tensor::from_rows({{1}, {2}, {3}}), Tensor::from_rows({{1}, {2}, {2}})).item();
  CHECK(std::abs(l - (1.0 - r)) < 1e-14);

  // A constant gene is skipped; all constant raises.
  Tensor mixed = Tensor::from_rows({{1, 5}, {2, 5}, {3, 5}});
  CHECK(std::abs(loss_pcc(mixed, mixed).item()) < 1e-12);
  Tensor flat = Tensor::from_rows({{5}, {5}, {5}});
  CHECK_THROWS_AS(loss_pcc(flat, flat), DegenerateError);
}

TEST_CASE("loss_pcc matches the high-precision oracle on random genes") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Gen g(seed);
    const std::size_t n = g.index(3, 30), genes = g.index(1, 6);
    Tensor a = g.tensor(n, genes), b = g.tensor(n, genes);
    double mean_r = 0.0;
    for (std::size_t j = 0; j < genes; ++j) {
      std::vector<double> x, y;
      for (std::size_t i = 0; i < n; ++i) {
        x.push_back(a(i, j));
        y.push_back(b(i, j));
      }
      mean_r += pearson_oracle(x, y);
    }
    mean_r /= static_cast<double>(genes);
    const double l = loss_pcc(a, b).item();
    CHECK(std::abs(l - (1.0 - mean_r)) < 1e-12);
    CHECK(l >= 0.0);
    CHECK(l <= 2.0);
  }
}

TEST_CASE("loss_contrastive") {
  Tensor e = Tensor::from_rows({{1, 2}, {-3, 1}});
  CHECK(std::abs(loss_contrastive(e, e).item()) < 1e-15);
  CHECK(loss_contrastive(Tensor::from_rows({{1, 0}}), Tensor::from_rows({{0, 3}})).item() == 2.0);
  CHECK(loss_contrastive(Tensor::from_rows({{1, 1}}), Tensor::from_rows({{-2, -2}})).item() ==
        doctest::Approx(4.0).epsilon(1e-15));
  CHECK_THROWS_AS(loss_contrastive(Tensor::from_rows({{0, 0}}), Tensor::from_rows({{1, 0}})),
                  DegenerateError);
}

TEST_CASE("loss ranges on random inputs") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Gen g(seed);
    const std::size_t n = g.index(2, 10), c = g.index(1, 5);
    Tensor a = g.tensor(n, c), b = g.tensor(n, c);
    CHECK(loss_mse(a, b).item() >= 0.0);
    const double con = loss_contrastive(a, b).item();
    CHECK(con >= 0.0);
    CHECK(con <= 4.0);
  }
}

TEST_CASE("the contrastive target receives no gradient") {
  Gen g(5);
  Tensor e1 = g.tensor(4, 3), e2 = g.tensor(4, 3);
  e1.set_requires_grad(true);
  e2.set_requires_grad(true);
  const double base = [&] {
    Tape tape;
    Tensor l = loss_contrastive(e1, e2);
    tape.backward(l);
    return l.item();
  }();
  for (double v : e2.grad()) CHECK(v == 0.0);
  bool any = false;
  for (double v : e1.grad()) any = any || v != 0.0;
  CHECK(any);
  CHECK(grad_check([&](const Tensor& x) { return loss_contrastive(x, e2); }, e1) < 1e-6);

  Tensor bumped = e2.detach();
  bumped.mutable_values()[0] += 0.5;
  CHECK(loss_contrastive(e1, bumped).item() != base);
}

TEST_CASE("the stop-gradient view does not feed parameter gradients") {
  TrainingGraph tg = tiny_training_graph(3);
  ModelParams p = init_params(model_config_for(tiny_train(1), 3, 2), 4);
  const GraphIndex idx = GraphIndex::from(tg.graph);
  const MaskPair masks = make_complementary_masks(6, 8, 3, 5, 0.34, 0.4, 9);
  std::vector<Tensor> params = p.tensors();
  for (Tensor& t : params) t.set_requires_grad(true);
  std::size_t ops = 0;
  {
    Tape tape;
    StepLosses l = step_losses(idx, tg.graph, tg.target_expression, masks, p);
    ops = tape.num_ops();
    tape.backward(l.l_total);
    CHECK(std::abs(l.l_total.item() -
                   (l.l_mse.item() + l.l_pcc.item() + l.l_con_t.item() + l.l_con_r.item())) <
          1e-9);
  }
  // A second encoder pass on the tape would roughly double the op count.
  Tape probe;
  ForwardState once = encode_view(idx, Tensor(tg.graph.target_features),
                                  Tensor(tg.graph.reference_features), p);
  (void)once;
  CHECK(ops < 2 * probe.num_ops());
}

TEST_CASE("swapping views exchanges the mask roles") {
  TrainingGraph tg = tiny_training_graph(4);
  ModelParams p = init_params(model_config_for(tiny_train(1), 3, 2), 4);
  const GraphIndex idx = GraphIndex::from(tg.graph);
  MaskPair masks = make_complementary_masks(6, 8, 3, 5, 0.7, 0.6, 2);
  MaskPair flipped = masks;
  std::swap(flipped.m1_target, flipped.m2_target);
  std::swap(flipped.m1_reference, flipped.m2_reference);
  NoGradGuard no_grad;
  const double a = step_losses(idx, tg.graph, tg.target_expression, masks, p, true).l_total.item();
  const double b = step_losses(idx, tg.graph, tg.target_expression, flipped, p, false).l_total.item();
  CHECK(a == b);
}

TEST_CASE("adam_step") {
  TrainConfig cfg;
  cfg.learning_rate = 0.01;
  cfg.weight_decay = 0.0;
  std::vector<Tensor> params{Tensor::from_rows({{1.0, -2.0}})};
  {
    AdamState s;
    std::vector<std::vector<double>> zero{{0.0, 0.0}};
    adam_step(params, zero, s, cfg);
    CHECK(params[0](0, 0) == 1.0);
    CHECK(params[0](0, 1) == -2.0);
  }
  {
    AdamState s;
    std::vector<std::vector<double>> g{{0.5, -3.0}};
    adam_step(params, g, s, cfg);
    CHECK(std::abs(params[0](0, 0) - (1.0 - 0.01 * 0.5 / (0.5 + 1e-8))) < 1e-15);
    CHECK(std::abs(params[0](0, 1) - (-2.0 + 0.01 * 3.0 / (3.0 + 1e-8))) < 1e-15);
  }
}

TEST_CASE("adam_step matches a scalar oracle over ten steps") {
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.weight_decay = 0.1;
  Gen g(8);
  std::vector<Tensor> params{g.tensor(2, 3), g.tensor(1, 4)};
  std::vector<std::vector<double>> oracle;
  for (const Tensor& p : params) oracle.emplace_back(p.values().begin(), p.values().end());
  std::vector<std::vector<double>> m(2), v(2);
  for (std::size_t i = 0; i < 2; ++i) {
    m[i].assign(oracle[i].size(), 0.0);
    v[i].assign(oracle[i].size(), 0.0);
  }
  AdamState state;
  for (int step = 1; step <= 10; ++step) {
    std::vector<std::vector<double>> grads;
    for (const Tensor& p : params) {
      std::vector<double> gr(p.size());
      for (double& x : gr) x = g.normal();
      grads.push_back(gr);
    }
    adam_step(params, grads, state, cfg);
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t j = 0; j < oracle[i].size(); ++j) {
        const double gj = grads[i][j];
        m[i][j] = 0.9 * m[i][j] + 0.1 * gj;
        v[i][j] = 0.999 * v[i][j] + 0.001 * gj * gj;
        const double mh = m[i][j] / (1.0 - std::pow(0.9, step));
        const double vh = v[i][j] / (1.0 - std::pow(0.999, step));
        oracle[i][j] = oracle[i][j] * (1.0 - 0.05 * 0.1) - 0.05 * mh / (std::sqrt(vh) + 1e-8);
      }
    }
  }
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < oracle[i].size(); ++j) {
      CHECK(std::abs(params[i].values()[j] - oracle[i][j]) < 1e-10);
    }
  }
}

TEST_CASE("train_fold with zero epochs returns the initialization") {
  TrainingGraph tg = tiny_training_graph(1);
  TrainConfig cfg = tiny_train(0);
  TrainResult r = train_fold(tg.graph, tg.target_expression, cfg);
  CHECK(r.history.empty());
  CHECK(same_params(r.params, init_params(model_config_for(cfg, 3, 2),
                                          derive_seed(cfg.seed, SeedStage::kInit))));
}

TEST_CASE("train_fold with a zero learning rate is stationary") {
  TrainingGraph tg = tiny_training_graph(2);
  TrainConfig cfg = tiny_train(4);
  cfg.learning_rate = 0.0;
  cfg.resample_masks = false;
  TrainResult r = train_fold(tg.graph, tg.target_expression, cfg);
  REQUIRE(r.history.size() == 4);
  CHECK(same_params(r.params, init_params(model_config_for(cfg, 3, 2),
                                          derive_seed(cfg.seed, SeedStage::kInit))));
  for (const LossReport& l : r.history) {
    CHECK(l.l_total == r.history.front().l_total);
    CHECK(l.l_mse == r.history.front().l_mse);
  }
}

TEST_CASE("loss history is deterministic and sums its parts") {
  std::vector<TrainingGraph> graphs{tiny_training_graph(5), tiny_training_graph(6)};
  TrainConfig cfg = tiny_train(5);
  TrainResult a = train_fold(graphs, cfg), b = train_fold(graphs, cfg);
  REQUIRE(a.history.size() == 5);
  for (std::size_t e = 0; e < 5; ++e) {
    const LossReport& x = a.history[e];
    CHECK(x.l_total == b.history[e].l_total);
    CHECK(x.l_mse == b.history[e].l_mse);
    CHECK(std::abs(x.l_total - (x.l_mse + x.l_pcc + x.l_con_t + x.l_con_r)) < 1e-9);
  }
  CHECK(same_params(a.params, b.params));
}

TEST_CASE("train_fold reports divergence with its epoch") {
  TrainingGraph tg = tiny_training_graph(7);
  TrainConfig cfg = tiny_train(5);
  cfg.learning_rate = 1e200;
  CHECK_THROWS_WITH_AS(train_fold(tg.graph, tg.target_expression, cfg),
                       doctest::Contains("epoch"), DivergenceError);
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  cfg.alpha = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.d_prime = 10;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.learning_rate = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK(TrainConfig{}.to_json().at("epochs") == 200);
}

TEST_CASE("loss history csv") {
  TempDir dir("loss");
  std::vector<LossReport> h{{1.0, 0.5, 0.25, 0.125, 1.875}};
  write_loss_history_csv(dir / "l.csv", h);
  CHECK(read_text_file(dir / "l.csv") ==
        "epoch,l_mse,l_pcc,l_con_t,l_con_r,l_total\n0,1,0.5,0.25,0.125,1.875\n");
}

TEST_CASE("whole objective gradient check") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) CHECK(full_model_grad_check(seed) < 1e-4);
}

TEST_CASE("training on planted data halves the reconstruction loss") {
  SynthConfig sc;
  sc.n_slides = 3;
  sc.spots_per_slide = 36;
  sc.d = 8;
  sc.n_genes = 5;
  sc.seed = 2;
  const Dataset ds = generate(sc);
  const std::vector<std::string> train_ids{ds.slides[1].slide_id, ds.slides[2].slide_id};
  FoldGraphs fg = build_fold_graphs(ds, train_ids, ds.slides[0].slide_id,
                                    {ds.slides[0].slide_id}, 5, 7);
  TrainConfig cfg;
  cfg.epochs = 120;
  cfg.learning_rate = 3e-3;
  cfg.d_prime = 16;
  cfg.seed = 3;
  TrainResult r = train_fold(fg.training, cfg);
  CHECK(r.history.back().l_mse < 0.5 * r.history.front().l_mse);
  CHECK(r.history.back().l_total < r.history.front().l_total);
}

TEST_CASE("constant predictions count as zero correlation during training") {
  TrainingGraph tg = tiny_training_graph(9);
  ModelParams p = init_params(model_config_for(tiny_train(1), 3, 2), 4);
  Tensor w = p.head_out.weight;
  for (double& v : w.mutable_values()) v = 0.0;
  const GraphIndex idx = GraphIndex::from(tg.graph);
  const MaskPair masks = make_complementary_masks(6, 8, 3, 5, 0.5, 0.5, 1);
  NoGradGuard no_grad;
  StepLosses l = step_losses(idx, tg.graph, tg.target_expression, masks, p);
  CHECK(l.l_pcc.item() == 1.0);
}
