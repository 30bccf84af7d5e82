#include "spahgc/hetgraph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "spahgc/error.hpp"

namespace spahgc {

namespace {

struct Candidate {
  double key;  // smaller is better
  std::size_t index;
};

void take_best(std::vector<Candidate>& cands, std::size_t k, std::size_t from,
               std::vector<Edge>& out) {
  auto better = [](const Candidate& a, const Candidate& b) {
    return a.key < b.key || (a.key == b.key && a.index < b.index);
  };
  std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(k), cands.end(),
                    better);
  for (std::size_t r = 0; r < k; ++r) out.push_back({from, cands[r].index});
}

std::vector<double> row_norms(const Matrix& x, const char* what) {
  std::vector<double> out(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double ss = 0.0;
    for (double v : x.row(i)) ss += v * v;
    if (ss == 0.0) {
      throw DegenerateError(std::string(what) + ": zero-norm row " + std::to_string(i));
    }
    out[i] = std::sqrt(ss);
  }
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t c = 0; c < a.size(); ++c) s += a[c] * b[c];
  return s;
}

void check_out_degree(std::span<const Edge> edges, std::size_t n_nodes, std::size_t degree,
                      std::size_t n_targets, bool no_self, const char* family) {
  std::vector<std::size_t> deg(n_nodes, 0);
  for (const auto& e : edges) {
    if (e.from >= n_nodes || e.to >= n_targets) {
      throw StructuralError(std::string(family) + " edge index out of range");
    }
    if (no_self && e.from == e.to) throw StructuralError(std::string(family) + " self-loop");
    ++deg[e.from];
  }
  for (std::size_t i = 0; i < n_nodes; ++i) {
    if (deg[i] != degree) {
      throw StructuralError(std::string(family) + " node " + std::to_string(i) + " has out-degree " +
                            std::to_string(deg[i]) + ", expected " + std::to_string(degree));
    }
  }
}

}  // namespace

void GraphConfig::validate() const {
  if (q < 1) throw ConfigError("graph config: Q must be at least 1");
  if (k < 1) throw ConfigError("graph config: K must be at least 1");
}

void HetGraph::validate(std::size_t q, std::size_t k) const {
  check_out_degree(ts_edges, n_target, q, n_target, true, "TS");
  check_out_degree(cs_edges, n_target, k, n_reference, false, "CS");
  check_out_degree(rs_edges, n_reference, k, n_reference, true, "RS");
  if (reference_slide_of.size() != n_reference) {
    throw StructuralError("reference provenance length differs from reference count");
  }
}

std::vector<Edge> build_ts_edges(const Matrix& coords, std::size_t q) {
  const std::size_t n = coords.rows();
  if (coords.cols() != 2) throw DimensionError("build_ts_edges: coords must be n x 2");
  if (q < 1) throw ConfigError("build_ts_edges: Q must be at least 1");
  if (n < 2 || q > n - 1) {
    throw ConfigError("build_ts_edges: Q=" + std::to_string(q) + " needs at least " +
                      std::to_string(q + 1) + " spots, got " + std::to_string(n));
  }
  std::vector<Edge> edges;
  edges.reserve(n * q);
  std::vector<Candidate> cands;
  for (std::size_t i = 0; i < n; ++i) {
    cands.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double dx = coords(i, 0) - coords(j, 0);
      const double dy = coords(i, 1) - coords(j, 1);
      cands.push_back({dx * dx + dy * dy, j});
    }
    take_best(cands, q, i, edges);
  }
  return edges;
}

std::vector<Edge> build_cs_edges(const Matrix& target_embed, const Matrix& reference_embed,
                                 std::size_t k, std::span<const std::string> reference_slide_of,
                                 const std::set<std::string>& excluded_slides) {
  if (target_embed.cols() != reference_embed.cols()) {
    throw DimensionError("build_cs_edges: embedding dimensions differ");
  }
  if (reference_slide_of.size() != reference_embed.rows()) {
    throw DimensionError("build_cs_edges: provenance length differs from reference rows");
  }
  if (k < 1) throw ConfigError("build_cs_edges: K must be at least 1");
  std::vector<std::size_t> eligible;
  for (std::size_t j = 0; j < reference_embed.rows(); ++j) {
    if (!excluded_slides.contains(reference_slide_of[j])) eligible.push_back(j);
  }
  if (eligible.size() < k) {
    throw ConfigError("build_cs_edges: " + std::to_string(eligible.size()) +
                      " eligible references for K=" + std::to_string(k));
  }
  const Matrix& t = target_embed;
  const Matrix r = reference_embed.select_rows(eligible);
  const std::vector<double> tn = row_norms(t, "build_cs_edges");
  const std::vector<double> rn = row_norms(r, "build_cs_edges");
  std::vector<Edge> edges;
  edges.reserve(t.rows() * k);
  std::vector<Candidate> cands;
  for (std::size_t i = 0; i < t.rows(); ++i) {
    cands.clear();
    for (std::size_t e = 0; e < eligible.size(); ++e) {
      cands.push_back({-dot(t.row(i), r.row(e)) / (tn[i] * rn[e]), eligible[e]});
    }
    take_best(cands, k, i, edges);
  }
  return edges;
}

std::vector<Edge> build_rs_edges(const Matrix& reference_features, std::size_t k) {
  const std::size_t m = reference_features.rows();
  if (k < 1) throw ConfigError("build_rs_edges: K must be at least 1");
  if (m < k + 1) {
    throw ConfigError("build_rs_edges: K=" + std::to_string(k) + " needs at least " +
                      std::to_string(k + 1) + " references, got " + std::to_string(m));
  }
  const Matrix& h = reference_features;
  const std::vector<double> hn = row_norms(h, "build_rs_edges");
  std::vector<Edge> edges;
  edges.reserve(m * k);
  std::vector<Candidate> cands;
  for (std::size_t j = 0; j < m; ++j) {
    cands.clear();
    for (std::size_t p = 0; p < m; ++p) {
      if (p == j) continue;
      cands.push_back({-dot(h.row(j), h.row(p)) / (hn[j] * hn[p]), p});
    }
    take_best(cands, k, j, edges);
  }
  return edges;
}

HetGraph assemble_graph(const Slide& target, std::span<const Slide> references,
                        const GraphConfig& cfg) {
  cfg.validate();
  std::set<std::string> excluded = cfg.excluded_slides;
  excluded.insert(target.slide_id);

  HetGraph g;
  g.target_slide = target.slide_id;
  g.n_target = target.n_spots();
  g.target_features = target.embeddings;

  std::vector<Matrix> blocks;
  const std::vector<std::string>* genes = nullptr;
  for (const auto& ref : references) {
    if (excluded.contains(ref.slide_id)) continue;
    if (ref.expression.empty()) throw SchemaError(ref.slide_id + ": reference slide has no expression");
    if (ref.embed_dim() != target.embed_dim()) {
      throw SchemaError(ref.slide_id + ": embedding dimension differs from target");
    }
    if (genes == nullptr) {
      genes = &ref.expression_genes;
    } else if (*genes != ref.expression_genes) {
      throw SchemaError(ref.slide_id + ": gene list differs from other references");
    }
    blocks.push_back(hstack(ref.embeddings, ref.expression));
    for (std::size_t i = 0; i < ref.n_spots(); ++i) g.reference_slide_of.push_back(ref.slide_id);
  }
  if (genes == nullptr) throw ConfigError("assemble_graph: no eligible reference slides");
  if (!target.expression_genes.empty() && target.expression_genes != *genes) {
    throw SchemaError(target.slide_id + ": gene list differs from references");
  }
  g.reference_features = vstack(blocks);
  g.n_reference = g.reference_features.rows();

  const std::size_t d = target.embed_dim();
  std::vector<std::size_t> embed_cols(d);
  std::iota(embed_cols.begin(), embed_cols.end(), 0);
  const Matrix reference_embed = g.reference_features.select_cols(embed_cols);

  g.ts_edges = build_ts_edges(target.coords, cfg.q);
  g.cs_edges = build_cs_edges(target.embeddings, reference_embed, cfg.k, g.reference_slide_of,
                              excluded);
  g.rs_edges = build_rs_edges(g.reference_features, cfg.k);
  g.validate(cfg.q, cfg.k);
  return g;
}

namespace {

nlohmann::json edges_json(std::span<const Edge> edges) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : edges) arr.push_back({e.from, e.to});
  return arr;
}

std::vector<Edge> edges_from(const nlohmann::json& arr) {
  std::vector<Edge> out;
  for (const auto& p : arr) {
    if (!p.is_array() || p.size() != 2) throw FormatError("graph json: edge must be an index pair");
    out.push_back({p[0].get<std::size_t>(), p[1].get<std::size_t>()});
  }
  return out;
}

}  // namespace

nlohmann::json graph_to_json(const HetGraph& graph, const nlohmann::json& bundles) {
  nlohmann::json j = {{"target_slide", graph.target_slide},
                      {"n_target", graph.n_target},
                      {"n_reference", graph.n_reference},
                      {"reference_slide_of", graph.reference_slide_of},
                      {"edges",
                       {{"ts", edges_json(graph.ts_edges)},
                        {"cs", edges_json(graph.cs_edges)},
                        {"rs", edges_json(graph.rs_edges)}}}};
  if (!bundles.is_null()) j["bundles"] = bundles;
  return j;
}

HetGraph graph_from_json(const nlohmann::json& j) {
  try {
    HetGraph g;
    g.target_slide = j.at("target_slide").get<std::string>();
    g.n_target = j.at("n_target").get<std::size_t>();
    g.n_reference = j.at("n_reference").get<std::size_t>();
    g.reference_slide_of = j.at("reference_slide_of").get<std::vector<std::string>>();
    const auto& e = j.at("edges");
    g.ts_edges = edges_from(e.at("ts"));
    g.cs_edges = edges_from(e.at("cs"));
    g.rs_edges = edges_from(e.at("rs"));
    return g;
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(std::string("graph json: ") + ex.what());
  }
}

}  // namespace spahgc
