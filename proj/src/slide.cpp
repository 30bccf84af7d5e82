#include "spahgc/slide.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "spahgc/error.hpp"
#include "spahgc/table_io.hpp"

namespace spahgc {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_label(const std::string& label, const char* what) {
  if (label.empty() || label.find_first_of(",\n\r") != std::string::npos) {
    throw ValidationError(std::string(what) + " '" + label + "' is empty or contains a separator");
  }
}

}  // namespace

void Slide::validate() const {
  const std::size_t n = coords.rows();
  if (coords.cols() != 2) throw DimensionError(slide_id + ": coords must have 2 columns");
  if (spot_ids.size() != n) throw DimensionError(slide_id + ": spot id count differs from coords");
  if (counts.rows() != n) throw DimensionError(slide_id + ": counts rows differ from coords");
  if (embeddings.rows() != n) throw DimensionError(slide_id + ": embedding rows differ from coords");
  if (counts.cols() != gene_names.size()) {
    throw DimensionError(slide_id + ": counts columns differ from gene list");
  }
  for (double v : counts.values()) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw ValidationError(slide_id + ": counts must be finite and nonnegative");
    }
  }
  std::unordered_set<std::string> seen;
  for (const auto& g : gene_names) {
    if (!seen.insert(g).second) throw ValidationError(slide_id + ": duplicate gene " + g);
  }
  if (!expression.empty() || !expression_genes.empty()) {
    if (expression.rows() != n || expression.cols() != expression_genes.size()) {
      throw DimensionError(slide_id + ": expression shape does not match spots x genes");
    }
  }
}

const Slide& Dataset::find(const std::string& slide_id) const {
  for (const auto& s : slides) {
    if (s.slide_id == slide_id) return s;
  }
  throw ConfigError("unknown slide id " + slide_id);
}

std::vector<std::string> Dataset::slide_ids() const {
  std::vector<std::string> ids;
  for (const auto& s : slides) ids.push_back(s.slide_id);
  return ids;
}

Slide load_bundle(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  json manifest;
  try {
    manifest = json::parse(read_text_file(manifest_path));
  } catch (const json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  Slide s;
  std::size_t n_spots = 0, n_genes = 0, embed_dim = 0;
  json files;
  try {
    s.slide_id = manifest.at("slide_id").get<std::string>();
    n_spots = manifest.at("n_spots").get<std::size_t>();
    n_genes = manifest.at("n_genes").get<std::size_t>();
    embed_dim = manifest.at("embed_dim").get<std::size_t>();
    files = manifest.at("files");
    files.at("coords").get<std::string>();
    files.at("counts").get<std::string>();
    files.at("embed").get<std::string>();
  } catch (const json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }

  const Table coords = read_table_csv(dir / files["coords"].get<std::string>());
  if (coords.id_column != "spot_id" || coords.columns != std::vector<std::string>{"x", "y"}) {
    throw FormatError(s.slide_id + ": coords.csv header must be spot_id,x,y");
  }
  if (coords.row_ids.size() != n_spots) {
    throw FormatError(s.slide_id + ": coords.csv rows differ from manifest n_spots");
  }
  s.spot_ids = coords.row_ids;
  s.coords = coords.values;

  const Table counts = read_table_csv(dir / files["counts"].get<std::string>());
  if (counts.id_column != "spot_id") throw FormatError(s.slide_id + ": counts.csv must start with spot_id");
  if (counts.columns.size() != n_genes) {
    throw FormatError(s.slide_id + ": counts.csv genes differ from manifest n_genes");
  }
  if (counts.row_ids != s.spot_ids) {
    throw FormatError(s.slide_id + ": counts.csv rows are not aligned with coords.csv");
  }
  s.gene_names = counts.columns;
  s.counts = counts.values;

  s.embeddings = read_embed_bin(dir / files["embed"].get<std::string>());
  if (s.embeddings.rows() != n_spots || s.embeddings.cols() != embed_dim) {
    throw FormatError(s.slide_id + ": embed.bin shape differs from manifest");
  }

  if (files.contains("expression")) {
    const Table expr = read_table_csv(dir / files["expression"].get<std::string>());
    if (expr.row_ids != s.spot_ids) {
      throw FormatError(s.slide_id + ": expression.csv rows are not aligned with coords.csv");
    }
    s.expression_genes = expr.columns;
    s.expression = expr.values;
  }
  s.validate();
  return s;
}

void save_bundle(const Slide& slide, const fs::path& dir) {
  if (slide.n_spots() == 0) throw ValidationError(slide.slide_id + ": cannot save an empty slide");
  slide.validate();
  check_label(slide.slide_id, "slide id");
  for (const auto& id : slide.spot_ids) check_label(id, "spot id");
  for (const auto& g : slide.gene_names) check_label(g, "gene name");
  for (const auto& g : slide.expression_genes) check_label(g, "gene name");

  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  json files = {{"coords", "coords.csv"}, {"counts", "counts.csv"}, {"embed", "embed.bin"}};
  write_table_csv(dir / "coords.csv", Table{"spot_id", {"x", "y"}, slide.spot_ids, slide.coords});
  write_table_csv(dir / "counts.csv",
                  Table{"spot_id", slide.gene_names, slide.spot_ids, slide.counts});
  write_embed_bin(dir / "embed.bin", slide.embeddings);
  if (!slide.expression.empty()) {
    files["expression"] = "expression.csv";
    write_table_csv(dir / "expression.csv",
                    Table{"spot_id", slide.expression_genes, slide.spot_ids, slide.expression});
  }
  const json manifest = {{"slide_id", slide.slide_id},
                         {"n_spots", slide.n_spots()},
                         {"n_genes", slide.gene_names.size()},
                         {"embed_dim", slide.embed_dim()},
                         {"files", files}};
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

Matrix normalize_expression(const Matrix& counts) {
  Matrix out(counts.rows(), counts.cols());
  for (std::size_t i = 0; i < counts.rows(); ++i) {
    const auto row = counts.row(i);
    const double total = std::accumulate(row.begin(), row.end(), 0.0);
    if (!(total > 0.0)) {
      throw DegenerateError("normalize_expression: spot " + std::to_string(i) + " has zero total count");
    }
    for (std::size_t g = 0; g < row.size(); ++g) out(i, g) = std::log1p(row[g] / total * 1e6);
  }
  return out;
}

void normalize_slide(Slide& slide) {
  slide.expression = normalize_expression(slide.counts);
  slide.expression_genes = slide.gene_names;
}

std::size_t drop_degenerate_spots(Slide& slide) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < slide.n_spots(); ++i) {
    const auto row = slide.counts.row(i);
    if (std::accumulate(row.begin(), row.end(), 0.0) > 0.0) keep.push_back(i);
  }
  const std::size_t dropped = slide.n_spots() - keep.size();
  if (dropped == 0) return 0;
  std::vector<std::string> ids;
  for (std::size_t i : keep) ids.push_back(slide.spot_ids[i]);
  slide.spot_ids = std::move(ids);
  slide.coords = slide.coords.select_rows(keep);
  slide.counts = slide.counts.select_rows(keep);
  slide.embeddings = slide.embeddings.select_rows(keep);
  if (!slide.expression.empty()) slide.expression = slide.expression.select_rows(keep);
  return dropped;
}

std::vector<std::string> select_shared_hvgs(Dataset& dataset, std::size_t n_top) {
  if (dataset.slides.empty()) throw ConfigError("select_shared_hvgs: no slides");
  std::set<std::string> shared;
  bool first = true;
  for (const auto& s : dataset.slides) {
    if (s.expression.empty()) throw ConfigError(s.slide_id + ": slide is not normalized");
    const std::size_t n = s.expression.rows(), genes = s.expression.cols();
    if (n_top > genes) {
      throw ConfigError(s.slide_id + ": n_top " + std::to_string(n_top) + " exceeds " +
                        std::to_string(genes) + " genes");
    }
    std::vector<double> var(genes, 0.0);
    for (std::size_t g = 0; g < genes; ++g) {
      double mean = 0.0;
      for (std::size_t i = 0; i < n; ++i) mean += s.expression(i, g);
      mean /= static_cast<double>(n);
      double ss = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = s.expression(i, g) - mean;
        ss += d * d;
      }
      var[g] = ss / static_cast<double>(n);
    }
    std::vector<std::size_t> order(genes);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return var[a] > var[b]; });
    std::set<std::string> top;
    for (std::size_t k = 0; k < n_top; ++k) top.insert(s.expression_genes[order[k]]);
    if (first) {
      shared = std::move(top);
      first = false;
    } else {
      std::set<std::string> both;
      std::set_intersection(shared.begin(), shared.end(), top.begin(), top.end(),
                            std::inserter(both, both.end()));
      shared = std::move(both);
    }
  }
  if (shared.empty()) throw DegenerateError("select_shared_hvgs: empty shared gene set");

  std::vector<std::string> genes(shared.begin(), shared.end());
  for (auto& s : dataset.slides) {
    std::unordered_map<std::string, std::size_t> column;
    for (std::size_t g = 0; g < s.expression_genes.size(); ++g) column[s.expression_genes[g]] = g;
    std::vector<std::size_t> idx;
    for (const auto& g : genes) idx.push_back(column.at(g));
    s.expression = s.expression.select_cols(idx);
    s.expression_genes = genes;
  }
  dataset.shared_genes = genes;
  return genes;
}

}  // namespace spahgc
