#include "spahgc/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>

#include <CLI11.hpp>
#include <json.hpp>

#include "spahgc/error.hpp"
#include "spahgc/hetgraph.hpp"
#include "spahgc/loocv.hpp"
#include "spahgc/metrics.hpp"
#include "spahgc/model.hpp"
#include "spahgc/rng.hpp"
#include "spahgc/slide.hpp"
#include "spahgc/synth.hpp"
#include "spahgc/table_io.hpp"
#include "spahgc/training.hpp"

namespace spahgc {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
  std::string config_path;
  bool quiet = false;
  std::size_t jobs = 1;
  std::uint64_t seed = 0;

  SynthConfig synth;
  TrainConfig train;
  std::size_t n_top = 1000;
  std::size_t n_clusters = 4;
  std::vector<std::size_t> grid_d_prime;
  std::vector<double> grid_lr;

  std::string out;
  std::string data_dir;
  std::vector<std::string> bundles;
  std::string target;
  std::vector<std::string> references;
  std::vector<std::string> exclude;
  std::string test_slide;
  std::string checkpoint;
  std::string loss_csv;
  std::string pred;
  std::string truth;
  std::string gene;
  std::size_t n_seeds = 20;
  double tolerance = 1e-4;
};

void log(const Options& o, std::ostream& err, const std::string& msg) {
  if (!o.quiet) err << msg << "\n";
}

std::vector<fs::path> bundle_dirs(const Options& o, const std::vector<std::string>& explicit_dirs) {
  std::vector<fs::path> dirs(explicit_dirs.begin(), explicit_dirs.end());
  if (!o.data_dir.empty()) {
    if (!fs::is_directory(o.data_dir)) throw IoError("not a directory: " + o.data_dir);
    std::vector<fs::path> found;
    for (const auto& entry : fs::directory_iterator(o.data_dir)) {
      if (fs::exists(entry.path() / "manifest.json")) found.push_back(entry.path());
    }
    std::sort(found.begin(), found.end());
    dirs.insert(dirs.end(), found.begin(), found.end());
  }
  if (dirs.empty()) throw ConfigError("no slide bundles given (use --bundle or --data)");
  return dirs;
}

Dataset load_dataset(const std::vector<fs::path>& dirs) {
  Dataset ds;
  for (const auto& d : dirs) {
    Slide s = load_bundle(d);
    if (s.expression.empty()) {
      throw SchemaError("bundle " + d.string() + " has no expression; run preprocess first");
    }
    ds.slides.push_back(std::move(s));
  }
  ds.shared_genes = ds.slides.front().expression_genes;
  return ds;
}

Table expression_table(const std::vector<std::string>& spots,
                       const std::vector<std::string>& genes, const Matrix& values) {
  return Table{"spot_id", genes, spots, values};
}

void apply_train_overrides(Options& o) { o.train.seed = o.seed; }

// Fills options not given on the command line from a JSON object whose keys
// are long option names with '_' in place of '-'.
void apply_config(CLI::App& app, CLI::App* sub, const std::string& path) {
  const json j = json::parse(read_text_file(path), nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw FormatError(path + ": not a JSON object");
  for (const auto& [key, value] : j.items()) {
    std::string flag = key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    CLI::Option* opt = sub->get_option_no_throw("--" + flag);
    if (opt == nullptr) opt = app.get_option_no_throw("--" + flag);
    if (opt == nullptr || flag == "config") {
      throw ValidationError(path + ": unknown configuration key '" + key + "'");
    }
    if (opt->count() > 0) continue;
    auto to_text = [&](const json& v) {
      if (v.is_string()) return v.get<std::string>();
      if (v.is_boolean()) return std::string(v.get<bool>() ? "true" : "false");
      return v.dump();
    };
    if (value.is_array()) {
      for (const auto& v : value) opt->add_result(to_text(v));
    } else {
      opt->add_result(to_text(value));
    }
    opt->run_callback();
  }
}

void add_train_flags(CLI::App* sub, Options& o) {
  sub->add_option("--epochs", o.train.epochs, "Training epochs")->capture_default_str();
  sub->add_option("--learning-rate", o.train.learning_rate, "Adam learning rate")
      ->capture_default_str();
  sub->add_option("--weight-decay", o.train.weight_decay, "Decoupled weight decay")
      ->capture_default_str();
  sub->add_option("--alpha", o.train.alpha, "Target feature masking ratio")->capture_default_str();
  sub->add_option("--beta", o.train.beta, "Reference feature masking ratio")
      ->capture_default_str();
  sub->add_option("--d-prime", o.train.d_prime, "Hidden width")->capture_default_str();
  sub->add_option("--layers", o.train.n_layers, "GraphSAGE/CNDA layers")->capture_default_str();
  sub->add_option("--heads", o.train.n_heads, "CNAP attention heads")->capture_default_str();
  sub->add_option("--q", o.train.q, "Spatial neighbors per target spot")->capture_default_str();
  sub->add_option("--k", o.train.k, "Reference neighbors per spot")->capture_default_str();
  sub->add_option("--use-cs-edges", o.train.use_cs_edges,
                  "Keep cross-slide edges (false runs the ablation)")
      ->capture_default_str();
  sub->add_option("--swap-views", o.train.swap_views,
                  "Supervise the lightly masked view")
      ->capture_default_str();
}

int cmd_synth(const Options& o, std::ostream& err) {
  SynthConfig sc = o.synth;
  sc.seed = o.seed;
  const Dataset ds = generate(sc);
  for (const Slide& s : ds.slides) save_bundle(s, fs::path(o.out) / s.slide_id);
  log(o, err, "wrote " + std::to_string(ds.slides.size()) + " bundles to " + o.out);
  return 0;
}

int cmd_preprocess(const Options& o, std::ostream& err) {
  Dataset ds;
  for (const auto& d : bundle_dirs(o, o.bundles)) ds.slides.push_back(load_bundle(d));
  for (Slide& s : ds.slides) {
    const std::size_t dropped = drop_degenerate_spots(s);
    if (dropped > 0) log(o, err, s.slide_id + ": dropped " + std::to_string(dropped) + " empty spots");
    normalize_slide(s);
  }
  const auto genes = select_shared_hvgs(ds, o.n_top);
  for (const Slide& s : ds.slides) save_bundle(s, fs::path(o.out) / s.slide_id);
  log(o, err, std::to_string(genes.size()) + " shared genes kept");
  return 0;
}

int cmd_build_graph(const Options& o, std::ostream& err) {
  const Slide target = load_bundle(o.target);
  std::vector<Slide> refs;
  json sources = {{"target", o.target}, {"references", json::array()}};
  for (const auto& d : bundle_dirs(o, o.references)) {
    refs.push_back(load_bundle(d));
    sources["references"].push_back(d.string());
  }
  GraphConfig gc;
  gc.q = o.train.q;
  gc.k = o.train.k;
  gc.excluded_slides.insert(o.exclude.begin(), o.exclude.end());
  const HetGraph g = assemble_graph(target, refs, gc);
  write_text_file(o.out, graph_to_json(g, sources).dump(1) + "\n");
  log(o, err, "graph with " + std::to_string(g.n_target) + " target and " +
                  std::to_string(g.n_reference) + " reference spots written to " + o.out);
  return 0;
}

int cmd_train(Options& o, std::ostream& err) {
  apply_train_overrides(o);
  const Dataset ds = load_dataset(bundle_dirs(o, o.bundles));
  std::vector<std::string> training;
  for (const auto& id : ds.slide_ids()) {
    if (id != o.test_slide) training.push_back(id);
  }
  if (training.size() < 2) throw ConfigError("train needs at least two training slides");
  std::set<std::string> excluded;
  if (!o.test_slide.empty()) excluded.insert(o.test_slide);
  std::vector<TrainingGraph> graphs;
  {
    std::vector<Slide> slides;
    for (const auto& id : training) slides.push_back(ds.find(id));
    GraphConfig gc;
    gc.q = o.train.q;
    gc.k = o.train.k;
    gc.excluded_slides = excluded;
    for (const Slide& s : slides) graphs.push_back({assemble_graph(s, slides, gc), s.expression});
  }
  const TrainResult tr = train_fold(graphs, o.train);
  json extra = {{"seed", o.seed}, {"train", o.train.to_json()}, {"genes", ds.shared_genes},
                {"training_slides", training}};
  save_checkpoint(o.out, tr.params, extra);
  if (!o.loss_csv.empty()) write_loss_history_csv(o.loss_csv, tr.history);
  if (!tr.history.empty()) {
    log(o, err, "final l_total " + format_f64(tr.history.back().l_total));
  }
  return 0;
}

int cmd_loocv(Options& o, std::ostream& err) {
  apply_train_overrides(o);
  const Dataset ds = load_dataset(bundle_dirs(o, o.bundles));
  LoocvConfig cfg;
  cfg.train = o.train;
  cfg.n_clusters = o.n_clusters;
  cfg.grid_d_prime = o.grid_d_prime;
  cfg.grid_learning_rate = o.grid_lr;
  cfg.jobs = o.jobs;
  if (!o.quiet) cfg.log = [&err](const std::string& m) { err << m << "\n"; };
  const LoocvResult res = run_loocv(ds, cfg);
  fs::create_directories(o.out);
  json folds = res.plan.to_json();
  for (std::size_t i = 0; i < res.choices.size(); ++i) {
    folds["outer"][i]["d_prime"] = res.choices[i].d_prime;
    folds["outer"][i]["learning_rate"] = res.choices[i].learning_rate;
  }
  write_text_file(fs::path(o.out) / "folds.json", folds.dump(1) + "\n");
  write_report_csv(fs::path(o.out) / "report.csv", res.reports);
  log(o, err, std::to_string(res.graphs_audited) + " graphs passed the leakage audit");
  return 0;
}

int cmd_predict(const Options& o, std::ostream& err) {
  json manifest;
  const ModelParams params = load_checkpoint(o.checkpoint, &manifest);
  const Slide target = load_bundle(o.target);
  std::vector<Slide> refs;
  for (const auto& d : bundle_dirs(o, o.references)) refs.push_back(load_bundle(d));
  GraphConfig gc;
  gc.q = o.train.q;
  gc.k = o.train.k;
  gc.excluded_slides.insert(o.exclude.begin(), o.exclude.end());
  const HetGraph g = assemble_graph(target, refs, gc);
  const Matrix y = predict(g, params);
  std::vector<std::string> genes = refs.front().expression_genes;
  const auto& extra = manifest.at("extra");
  if (extra.contains("genes")) genes = extra.at("genes").get<std::vector<std::string>>();
  write_table_csv(o.out, expression_table(target.spot_ids, genes, y));
  log(o, err, "predictions for " + std::to_string(y.rows()) + " spots written to " + o.out);
  return 0;
}

int cmd_eval(const Options& o, std::ostream& out) {
  const Table pred = read_table_csv(o.pred);
  const Table truth = read_table_csv(o.truth);
  if (pred.columns != truth.columns || pred.row_ids != truth.row_ids) {
    throw SchemaError("prediction and truth tables differ in spots or genes");
  }
  const MetricsReport r =
      evaluate_predictions(pred.values, truth.values, o.n_clusters,
                           derive_seed(o.seed, SeedStage::kCluster));
  json per_gene = json::object();
  for (std::size_t g = 0; g < r.per_gene_pcc.size(); ++g) {
    per_gene[pred.columns[g]] = r.per_gene_pcc[g] ? json(*r.per_gene_pcc[g]) : json(nullptr);
  }
  json j = {{"mean_pcc", std::isfinite(r.mean_pcc) ? json(r.mean_pcc) : json(nullptr)},
            {"rmse", r.rmse},
            {"ari", r.ari ? json(*r.ari) : json(nullptr)},
            {"n_genes_skipped", r.n_genes_skipped},
            {"per_gene_pcc", per_gene}};
  if (o.out.empty()) {
    out << j.dump(2) << "\n";
  } else {
    write_text_file(o.out, j.dump(2) + "\n");
  }
  return 0;
}

int cmd_grad_check(const Options& o, std::ostream& out) {
  double worst = 0.0;
  for (std::size_t s = 0; s < o.n_seeds; ++s) {
    worst = std::max(worst, full_model_grad_check(o.seed + s));
  }
  out << "max_rel_err " << format_f64(worst) << "\n";
  return worst < o.tolerance ? 0 : 1;
}

int cmd_plot_data(const Options& o, std::ostream& err) {
  const Slide s = load_bundle(o.target);
  const auto it = std::find(s.expression_genes.begin(), s.expression_genes.end(), o.gene);
  if (it == s.expression_genes.end()) throw SchemaError("gene " + o.gene + " not in " + s.slide_id);
  const std::size_t g = static_cast<std::size_t>(it - s.expression_genes.begin());
  std::optional<Table> pred;
  std::size_t pg = 0;
  if (!o.pred.empty()) {
    pred = read_table_csv(o.pred);
    const auto pit = std::find(pred->columns.begin(), pred->columns.end(), o.gene);
    if (pit == pred->columns.end() || pred->row_ids != s.spot_ids) {
      throw SchemaError(o.pred + " does not match the bundle's spots and gene");
    }
    pg = static_cast<std::size_t>(pit - pred->columns.begin());
  }
  std::string text = "spot_id,x,y,truth";
  text += pred ? ",predicted\n" : "\n";
  for (std::size_t i = 0; i < s.n_spots(); ++i) {
    text += s.spot_ids[i] + "," + format_f64(s.coords(i, 0)) + "," + format_f64(s.coords(i, 1)) +
            "," + format_f64(s.expression(i, g));
    if (pred) text += "," + format_f64(pred->values(i, pg));
    text += "\n";
  }
  write_text_file(o.out, text);
  log(o, err, "plot data for " + o.gene + " written to " + o.out);
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Spatial gene expression prediction on heterogeneous slide graphs", "spahgc"};
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--config", o.config_path, "JSON file of option values; flags override it");
  app.add_flag("--quiet", o.quiet, "Suppress log output on standard error");
  app.add_option("--jobs", o.jobs, "Parallel outer folds for loocv")->capture_default_str();
  app.add_option("--seed", o.seed, "Base seed for every random stage")->capture_default_str();

  auto* synth = app.add_subcommand("synth", "Generate synthetic slide bundles");
  synth->add_option("--out", o.out, "Output directory")->required();
  synth->add_option("--slides", o.synth.n_slides, "Number of slides")->capture_default_str();
  synth->add_option("--spots", o.synth.spots_per_slide, "Spots per slide")->capture_default_str();
  synth->add_option("--dim", o.synth.d, "Embedding dimension")->capture_default_str();
  synth->add_option("--genes", o.synth.n_genes, "Planted genes")->capture_default_str();
  synth->add_option("--noise", o.synth.noise_sigma, "Gaussian noise sigma")->capture_default_str();
  synth->add_option("--smoothing", o.synth.smoothing, "Spatial smoothing weight in [0,1]")
      ->capture_default_str();

  auto* prep = app.add_subcommand("preprocess", "Normalize counts and select shared HVGs");
  prep->add_option("--bundle", o.bundles, "Input bundle directory (repeatable)");
  prep->add_option("--data", o.data_dir, "Directory whose subdirectories are bundles");
  prep->add_option("--out", o.out, "Output directory")->required();
  prep->add_option("--n-top", o.n_top, "Top variable genes per slide")->capture_default_str();

  auto* graph = app.add_subcommand("build-graph", "Assemble a heterogeneous graph as JSON");
  graph->add_option("--target", o.target, "Target bundle directory")->required();
  graph->add_option("--reference", o.references, "Reference bundle directory (repeatable)");
  graph->add_option("--data", o.data_dir, "Directory whose subdirectories are references");
  graph->add_option("--exclude", o.exclude, "Slide ids barred from the reference bank");
  graph->add_option("--q", o.train.q, "Spatial neighbors per target spot")->capture_default_str();
  graph->add_option("--k", o.train.k, "Reference neighbors per spot")->capture_default_str();
  graph->add_option("--out", o.out, "Output JSON path")->required();

  auto* train = app.add_subcommand("train", "Train one fold and write a checkpoint");
  train->add_option("--bundle", o.bundles, "Bundle directory (repeatable)");
  train->add_option("--data", o.data_dir, "Directory whose subdirectories are bundles");
  train->add_option("--test-slide", o.test_slide, "Slide held out of training and references");
  train->add_option("--out", o.out, "Checkpoint path")->required();
  train->add_option("--loss-csv", o.loss_csv, "Per-epoch loss history CSV");
  add_train_flags(train, o);

  auto* loocv = app.add_subcommand("loocv", "Nested leave-one-slide-out evaluation");
  loocv->add_option("--bundle", o.bundles, "Bundle directory (repeatable)");
  loocv->add_option("--data", o.data_dir, "Directory whose subdirectories are bundles");
  loocv->add_option("--out", o.out, "Output directory for folds.json and report.csv")
      ->required();
  loocv->add_option("--clusters", o.n_clusters, "k-means clusters for ARI (0 disables)")
      ->capture_default_str();
  loocv->add_option("--grid-d-prime", o.grid_d_prime, "Hidden widths tried in inner folds");
  loocv->add_option("--grid-lr", o.grid_lr, "Learning rates tried in inner folds");
  add_train_flags(loocv, o);

  auto* pred = app.add_subcommand("predict", "Predict target expression from a checkpoint");
  pred->add_option("--checkpoint", o.checkpoint, "Checkpoint path")->required();
  pred->add_option("--target", o.target, "Target bundle directory")->required();
  pred->add_option("--reference", o.references, "Reference bundle directory (repeatable)");
  pred->add_option("--data", o.data_dir, "Directory whose subdirectories are references");
  pred->add_option("--exclude", o.exclude, "Slide ids barred from the reference bank");
  pred->add_option("--q", o.train.q, "Spatial neighbors per target spot")->capture_default_str();
  pred->add_option("--k", o.train.k, "Reference neighbors per spot")->capture_default_str();
  pred->add_option("--out", o.out, "Prediction CSV path")->required();

  auto* eval = app.add_subcommand("eval", "Metrics of a prediction CSV against a truth CSV");
  eval->add_option("--pred", o.pred, "Prediction CSV")->required();
  eval->add_option("--truth", o.truth, "Truth CSV")->required();
  eval->add_option("--clusters", o.n_clusters, "k-means clusters for ARI (0 disables)")
      ->capture_default_str();
  eval->add_option("--out", o.out, "JSON output path (default: standard output)");

  auto* gc = app.add_subcommand("grad-check", "Finite-difference check of the full model");
  gc->add_option("--seeds", o.n_seeds, "Random instances")->capture_default_str();
  gc->add_option("--tolerance", o.tolerance, "Pass threshold on max relative error")
      ->capture_default_str();

  auto* plot = app.add_subcommand("plot-data", "Per-spot values of one gene for plotting");
  plot->add_option("--target", o.target, "Bundle directory")->required();
  plot->add_option("--gene", o.gene, "Gene name")->required();
  plot->add_option("--pred", o.pred, "Optional prediction CSV to add as a column");
  plot->add_option("--out", o.out, "Output CSV path")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  CLI::App* chosen = app.get_subcommands().front();
  try {
    if (!o.config_path.empty()) apply_config(app, chosen, o.config_path);
    const std::string name = chosen->get_name();
    if (name == "synth") return cmd_synth(o, err);
    if (name == "preprocess") return cmd_preprocess(o, err);
    if (name == "build-graph") return cmd_build_graph(o, err);
    if (name == "train") return cmd_train(o, err);
    if (name == "loocv") return cmd_loocv(o, err);
    if (name == "predict") return cmd_predict(o, err);
    if (name == "eval") return cmd_eval(o, out);
    if (name == "grad-check") return cmd_grad_check(o, out);
    if (name == "plot-data") return cmd_plot_data(o, err);
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const CLI::Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace spahgc
