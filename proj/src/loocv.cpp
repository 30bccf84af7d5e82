#include "spahgc/loocv.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

#include "spahgc/error.hpp"
#include "spahgc/metrics.hpp"
#include "spahgc/rng.hpp"
#include "spahgc/table_io.hpp"

namespace spahgc {

void FoldPlan::validate() const {
  for (const OuterFold& o : outer) {
    if (!o.excluded.contains(o.test)) {
      throw ValidationError("fold " + std::to_string(o.index) + " does not exclude its test slide");
    }
    if (std::find(o.training.begin(), o.training.end(), o.test) != o.training.end()) {
      throw ValidationError("fold " + std::to_string(o.index) + " trains on its test slide");
    }
    for (const InnerFold& in : o.inner) {
      if (in.validation == o.test ||
          std::find(in.training.begin(), in.training.end(), o.test) != in.training.end()) {
        throw ValidationError("test slide " + o.test + " appears in an inner fold");
      }
      if (!in.excluded.contains(o.test) || !in.excluded.contains(in.validation)) {
        throw ValidationError("inner fold of " + o.test + " misses an exclusion");
      }
    }
  }
}

nlohmann::json FoldPlan::to_json() const {
  nlohmann::json folds = nlohmann::json::array();
  for (const OuterFold& o : outer) {
    nlohmann::json inner = nlohmann::json::array();
    for (const InnerFold& in : o.inner) {
      inner.push_back({{"validation", in.validation},
                       {"training", in.training},
                       {"excluded", in.excluded}});
    }
    folds.push_back({{"fold", o.index},
                     {"test", o.test},
                     {"training", o.training},
                     {"excluded", o.excluded},
                     {"inner", inner}});
  }
  return {{"outer", folds}};
}

FoldPlan plan_nested_loocv(std::span<const std::string> slide_ids) {
  if (slide_ids.size() < 3) {
    throw ConfigError("nested LOOCV needs at least 3 slides, got " +
                      std::to_string(slide_ids.size()));
  }
  std::set<std::string> unique(slide_ids.begin(), slide_ids.end());
  if (unique.size() != slide_ids.size()) throw ConfigError("nested LOOCV: duplicate slide ids");
  FoldPlan plan;
  for (std::size_t t = 0; t < slide_ids.size(); ++t) {
    OuterFold o;
    o.index = t;
    o.test = slide_ids[t];
    o.excluded = {o.test};
    for (std::size_t i = 0; i < slide_ids.size(); ++i) {
      if (i != t) o.training.push_back(slide_ids[i]);
    }
    for (const std::string& v : o.training) {
      InnerFold in;
      in.validation = v;
      in.excluded = {o.test, v};
      for (const std::string& s : o.training) {
        if (s != v) in.training.push_back(s);
      }
      o.inner.push_back(std::move(in));
    }
    plan.outer.push_back(std::move(o));
  }
  plan.validate();
  return plan;
}

MetricsReport evaluate_predictions(const Matrix& predictions, const Matrix& truth,
                                   std::size_t n_clusters, std::uint64_t seed) {
  MetricsReport r;
  const PccSummary p = pcc_mean(truth, predictions);
  r.per_gene_pcc = p.per_gene;
  r.mean_pcc = p.mean;
  r.n_genes_skipped = p.n_skipped;
  r.rmse = rmse(truth, predictions);
  if (n_clusters > 0 && n_clusters <= truth.rows()) {
    const auto a = kmeans_cluster(predictions, n_clusters, seed).labels;
    const auto b = kmeans_cluster(truth, n_clusters, seed).labels;
    try {
      r.ari = ari(a, b);
    } catch (const DegenerateError&) {
      r.ari.reset();
    }
  }
  return r;
}

MetricsReport evaluate_fold(const ModelParams& params, const HetGraph& graph, const Matrix& truth,
                            std::size_t n_clusters, std::uint64_t seed) {
  MetricsReport r = evaluate_predictions(predict(graph, params), truth, n_clusters, seed);
  r.slide = graph.target_slide;
  return r;
}

FoldGraphs build_fold_graphs(const Dataset& dataset, std::span<const std::string> training_ids,
                             const std::string& evaluation_id,
                             const std::set<std::string>& excluded, std::size_t q,
                             std::size_t k) {
  std::vector<Slide> training;
  for (const std::string& id : training_ids) {
    if (excluded.contains(id)) {
      throw StructuralError("slide " + id + " is both training and excluded");
    }
    training.push_back(dataset.find(id));
  }
  GraphConfig gc;
  gc.q = q;
  gc.k = k;
  gc.excluded_slides = excluded;
  FoldGraphs out;
  for (const Slide& s : training) {
    out.training.push_back({assemble_graph(s, training, gc), s.expression});
  }
  const Slide& eval = dataset.find(evaluation_id);
  out.evaluation = assemble_graph(eval, training, gc);
  out.evaluation_truth = eval.expression;
  return out;
}

std::size_t count_leaks(const HetGraph& graph, const std::set<std::string>& excluded) {
  std::size_t leaks = 0;
  for (const std::string& s : graph.reference_slide_of) leaks += excluded.contains(s) ? 1 : 0;
  for (const Edge& e : graph.cs_edges) {
    if (e.to >= graph.reference_slide_of.size() ||
        excluded.contains(graph.reference_slide_of[e.to])) {
      ++leaks;
    }
  }
  return leaks;
}

namespace {

struct FoldOutcome {
  MetricsReport report;
  TuningChoice choice;
  std::size_t audited = 0;
};

class Auditor {
 public:
  explicit Auditor(const LoocvConfig& cfg) : cfg_(cfg) {}

  void check(const std::string& label, const std::set<std::string>& excluded,
             const FoldGraphs& graphs, std::size_t& audited) {
    auto one = [&](const HetGraph& g) {
      if (count_leaks(g, excluded) != 0) {
        throw StructuralError(label + ": graph for " + g.target_slide +
                              " references an excluded slide");
      }
      if (cfg_.observer) {
        std::lock_guard<std::mutex> lock(mutex_);
        cfg_.observer(label, excluded, g);
      }
      ++audited;
    };
    for (const auto& tg : graphs.training) one(tg.graph);
    one(graphs.evaluation);
  }

  void log(const std::string& msg) {
    if (!cfg_.log) return;
    std::lock_guard<std::mutex> lock(mutex_);
    cfg_.log(msg);
  }

 private:
  const LoocvConfig& cfg_;
  std::mutex mutex_;
};

FoldOutcome run_outer_fold(const Dataset& dataset, const OuterFold& fold, const LoocvConfig& cfg,
                           Auditor& auditor) {
  FoldOutcome out;
  TrainConfig tc = cfg.train;
  tc.seed = derive_seed(cfg.train.seed, SeedStage::kInit, fold.index + 1);

  std::vector<std::size_t> dims = cfg.grid_d_prime;
  std::vector<double> rates = cfg.grid_learning_rate;
  if (dims.empty()) dims.push_back(cfg.train.d_prime);
  if (rates.empty()) rates.push_back(cfg.train.learning_rate);
  out.choice.d_prime = dims.front();
  out.choice.learning_rate = rates.front();

  if (dims.size() * rates.size() > 1) {
    std::vector<FoldGraphs> inner_graphs;
    for (std::size_t i = 0; i < fold.inner.size(); ++i) {
      const InnerFold& in = fold.inner[i];
      inner_graphs.push_back(build_fold_graphs(dataset, in.training, in.validation, in.excluded,
                                               tc.q, tc.k));
      auditor.check("outer " + std::to_string(fold.index) + " inner " + std::to_string(i),
                    in.excluded, inner_graphs.back(), out.audited);
    }
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t dp : dims) {
      for (double lr : rates) {
        TrainConfig trial = tc;
        trial.d_prime = dp;
        trial.learning_rate = lr;
        double total = 0.0;
        std::size_t used = 0;
        for (const FoldGraphs& fg : inner_graphs) {
          const TrainResult tr = train_fold(fg.training, trial);
          const double pcc = evaluate_fold(tr.params, fg.evaluation, fg.evaluation_truth, 0, 0)
                                 .mean_pcc;
          if (std::isfinite(pcc)) {
            total += pcc;
            ++used;
          }
        }
        const double mean = used == 0 ? -std::numeric_limits<double>::infinity()
                                      : total / static_cast<double>(used);
        auditor.log("fold " + std::to_string(fold.index) + " d'=" + std::to_string(dp) +
                    " lr=" + format_f64(lr) + " inner PCC " + format_f64(mean));
        if (mean > best) {
          best = mean;
          out.choice = {dp, lr, mean};
        }
      }
    }
  }

  tc.d_prime = out.choice.d_prime;
  tc.learning_rate = out.choice.learning_rate;
  const FoldGraphs graphs =
      build_fold_graphs(dataset, fold.training, fold.test, fold.excluded, tc.q, tc.k);
  auditor.check("outer " + std::to_string(fold.index), fold.excluded, graphs, out.audited);
  const TrainResult tr = train_fold(graphs.training, tc);
  out.report = evaluate_fold(tr.params, graphs.evaluation, graphs.evaluation_truth,
                             cfg.n_clusters,
                             derive_seed(cfg.train.seed, SeedStage::kCluster, fold.index));
  out.report.fold = fold.index;
  auditor.log("fold " + std::to_string(fold.index) + " test " + fold.test + " mean PCC " +
              format_f64(out.report.mean_pcc));
  return out;
}

}  // namespace

LoocvResult run_loocv(const Dataset& dataset, const LoocvConfig& cfg) {
  cfg.train.validate();
  LoocvResult result;
  result.plan = plan_nested_loocv(dataset.slide_ids());
  const std::size_t n_folds = result.plan.outer.size();
  std::vector<FoldOutcome> outcomes(n_folds);
  std::vector<std::exception_ptr> errors(n_folds);
  Auditor auditor(cfg);

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t f = next++; f < n_folds; f = next++) {
      try {
        outcomes[f] = run_outer_fold(dataset, result.plan.outer[f], cfg, auditor);
      } catch (...) {
        errors[f] = std::current_exception();
      }
    }
  };
  const std::size_t jobs = std::clamp<std::size_t>(cfg.jobs, 1, n_folds);
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t j = 0; j < jobs; ++j) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  for (auto& o : outcomes) {
    result.reports.push_back(std::move(o.report));
    result.choices.push_back(o.choice);
    result.graphs_audited += o.audited;
  }
  return result;
}

void write_report_csv(const std::filesystem::path& path, std::span<const MetricsReport> reports) {
  std::string out = "fold,slide,mean_pcc,rmse,ari,n_genes_skipped\n";
  for (const MetricsReport& r : reports) {
    out += std::to_string(r.fold) + "," + r.slide + "," + format_f64(r.mean_pcc) + "," +
           format_f64(r.rmse) + "," + (r.ari ? format_f64(*r.ari) : std::string()) + "," +
           std::to_string(r.n_genes_skipped) + "\n";
  }
  write_text_file(path, out);
}

}  // namespace spahgc
