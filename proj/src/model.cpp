#include "spahgc/model.hpp"

#include <cmath>
#include <random>

#include "spahgc/error.hpp"
#include "spahgc/table_io.hpp"

namespace spahgc {

using nlohmann::json;

void ModelConfig::validate() const {
  if (embed_dim == 0 || n_genes == 0 || hidden == 0) {
    throw ConfigError("model config: embed_dim, n_genes and hidden must be positive");
  }
  if (n_layers == 0) throw ConfigError("model config: n_layers must be positive");
  if (n_heads == 0 || hidden % n_heads != 0) {
    throw ConfigError("model config: hidden width " + std::to_string(hidden) +
                      " is not divisible by " + std::to_string(n_heads) + " heads");
  }
}

json ModelConfig::to_json() const {
  return {{"embed_dim", embed_dim}, {"n_genes", n_genes},   {"hidden", hidden},
          {"n_layers", n_layers},   {"n_heads", n_heads}, {"use_cs_edges", use_cs_edges}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  c.embed_dim = j.at("embed_dim").get<std::size_t>();
  c.n_genes = j.at("n_genes").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.use_cs_edges = j.at("use_cs_edges").get<bool>();
  return c;
}

namespace {

// Visits every learnable tensor in checkpoint order.
template <class Params, class F>
void visit(Params& p, F&& f) {
  f("input_target.weight", p.input_target.weight);
  f("input_target.bias", p.input_target.bias);
  f("input_reference.weight", p.input_reference.weight);
  f("input_reference.bias", p.input_reference.bias);
  auto sage = [&](const std::string& prefix, auto& layers) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::string base = prefix + "." + std::to_string(l) + ".";
      f(base + "w_self", layers[l].w_self);
      f(base + "w_neigh", layers[l].w_neigh);
      f(base + "bias", layers[l].bias);
    }
  };
  sage("sage_target", p.sage_target);
  sage("sage_reference", p.sage_reference);
  for (std::size_t l = 0; l < p.cnda.size(); ++l) {
    const std::string base = "cnda." + std::to_string(l) + ".";
    f(base + "wq_target", p.cnda[l].wq_target);
    f(base + "wk_reference", p.cnda[l].wk_reference);
    f(base + "wv_reference", p.cnda[l].wv_reference);
    f(base + "wq_reference", p.cnda[l].wq_reference);
    f(base + "wk_target", p.cnda[l].wk_target);
    f(base + "wv_target", p.cnda[l].wv_target);
  }
  f("cnap.wq_target", p.cnap.wq_target);
  f("cnap.wk_reference", p.cnap.wk_reference);
  f("cnap.wv_reference", p.cnap.wv_reference);
  f("cnap.w_out", p.cnap.w_out);
  f("head_hidden.weight", p.head_hidden.weight);
  f("head_hidden.bias", p.head_hidden.bias);
  f("head_out.weight", p.head_out.weight);
  f("head_out.bias", p.head_out.bias);
}

Tensor leaf(std::size_t rows, std::size_t cols) {
  Tensor t(rows, cols);
  t.set_requires_grad(true);
  return t;
}

Linear zero_linear(std::size_t in, std::size_t out) { return {leaf(in, out), leaf(1, out)}; }

ModelParams zero_params(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t h = cfg.hidden;
  ModelParams p;
  p.config = cfg;
  p.input_target = zero_linear(cfg.embed_dim, h);
  p.input_reference = zero_linear(cfg.embed_dim + cfg.n_genes, h);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    p.sage_target.push_back({leaf(h, h), leaf(h, h), leaf(1, h)});
    p.sage_reference.push_back({leaf(h, h), leaf(h, h), leaf(1, h)});
    p.cnda.push_back({leaf(h, h), leaf(h, h), leaf(h, h), leaf(h, h), leaf(h, h), leaf(h, h)});
  }
  p.cnap = {leaf(h, h), leaf(h, h), leaf(h, h), leaf(h, h)};
  p.head_hidden = zero_linear(h, h);
  p.head_out = zero_linear(h, cfg.n_genes);
  return p;
}

Tensor linear(const Tensor& x, const Linear& l) {
  return add_row(matmul(x, l.weight), l.bias);
}

// Attention of each `query_side` row over its edge neighbors on `key_side`.
// Edges are (query index, key index) pairs given as parallel vectors.
Tensor edge_attention(const Tensor& queries, const Tensor& keys, const Tensor& values,
                      std::span<const std::size_t> query_idx,
                      std::span<const std::size_t> key_idx, std::size_t n_queries,
                      double inv_scale) {
  Tensor scores = scale(row_dot(gather_rows(queries, query_idx), gather_rows(keys, key_idx)),
                        inv_scale);
  Tensor weights = segment_softmax(scores, query_idx, n_queries);
  return segment_sum(mul_col(gather_rows(values, key_idx), weights), query_idx, n_queries);
}

void require_cs_coverage(std::span<const std::size_t> cs_target, std::size_t n_target) {
  std::vector<bool> seen(n_target, false);
  for (std::size_t t : cs_target) {
    if (t >= n_target) throw IndexError("CS edge target index out of range");
    seen[t] = true;
  }
  for (std::size_t i = 0; i < n_target; ++i) {
    if (!seen[i]) throw StructuralError("target node " + std::to_string(i) + " has no CS edge");
  }
}

}  // namespace

std::vector<NamedTensor> ModelParams::named() const {
  std::vector<NamedTensor> out;
  visit(*this, [&](const std::string& name, const Tensor& t) { out.push_back({name, t}); });
  return out;
}

std::vector<Tensor> ModelParams::tensors() const {
  std::vector<Tensor> out;
  visit(*this, [&](const std::string&, const Tensor& t) { out.push_back(t); });
  return out;
}

ModelParams ModelParams::clone() const {
  ModelParams copy = zero_params(config);
  const auto src = tensors();
  std::size_t k = 0;
  visit(copy, [&](const std::string&, Tensor& t) {
    auto dst = t.mutable_values();
    auto from = src[k++].values();
    std::copy(from.begin(), from.end(), dst.begin());
  });
  return copy;
}

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams p = zero_params(cfg);
  std::mt19937_64 rng(seed);
  // Biases share the fan-in of the weight visited just before them.
  std::size_t fan_in = 1;
  visit(p, [&](const std::string& name, Tensor& t) {
    const bool is_bias = t.rows() == 1 && name.ends_with("bias");
    if (!is_bias) fan_in = t.rows();
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : t.mutable_values()) v = dist(rng);
  });
  return p;
}

GraphIndex GraphIndex::from(const HetGraph& g) {
  GraphIndex idx;
  idx.n_target = g.n_target;
  idx.n_reference = g.n_reference;
  for (const auto& e : g.ts_edges) {
    idx.ts_node.push_back(e.from);
    idx.ts_neighbor.push_back(e.to);
  }
  for (const auto& e : g.rs_edges) {
    idx.rs_node.push_back(e.from);
    idx.rs_neighbor.push_back(e.to);
  }
  for (const auto& e : g.cs_edges) {
    idx.cs_target.push_back(e.from);
    idx.cs_reference.push_back(e.to);
  }
  return idx;
}

Tensor graphsage_layer(const Tensor& h, std::span<const std::size_t> node,
                       std::span<const std::size_t> neighbor, const SageLayer& layer) {
  if (node.size() != neighbor.size()) throw DimensionError("graphsage_layer: ragged edge list");
  for (std::size_t j : neighbor) {
    if (j >= h.rows()) throw IndexError("graphsage_layer: neighbor index out of range");
  }
  Tensor self = matmul(h, layer.w_self);
  Tensor neigh_mean = segment_mean(gather_rows(h, neighbor), node, h.rows());
  Tensor agg = matmul(neigh_mean, layer.w_neigh);
  return relu(add_row(add(self, agg), layer.bias));
}

CndaOutput cnda_forward(const Tensor& target, const Tensor& reference,
                        std::span<const std::size_t> cs_target,
                        std::span<const std::size_t> cs_reference, const CndaLayer& layer) {
  if (cs_target.size() != cs_reference.size()) throw DimensionError("cnda_forward: ragged CS edges");
  require_cs_coverage(cs_target, target.rows());
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(layer.wq_target.cols()));
  CndaOutput out;
  out.target = edge_attention(matmul(target, layer.wq_target), matmul(reference, layer.wk_reference),
                              matmul(reference, layer.wv_reference), cs_target, cs_reference,
                              target.rows(), inv_scale);
  out.reference =
      edge_attention(matmul(reference, layer.wq_reference), matmul(target, layer.wk_target),
                     matmul(target, layer.wv_target), cs_reference, cs_target, reference.rows(),
                     inv_scale);
  return out;
}

Tensor fuse(const Tensor& local, const Tensor& cross) { return scale(add(local, cross), 0.5); }

Tensor cnap_forward(const Tensor& lhat_target, const Tensor& lhat_reference,
                    std::span<const std::size_t> cs_target,
                    std::span<const std::size_t> cs_reference, const CnapBlock& block,
                    std::size_t n_heads) {
  const std::size_t width = block.wq_target.cols();
  if (n_heads == 0 || width % n_heads != 0) {
    throw ConfigError("cnap_forward: width " + std::to_string(width) + " not divisible by " +
                      std::to_string(n_heads) + " heads");
  }
  if (cs_target.size() != cs_reference.size()) throw DimensionError("cnap_forward: ragged CS edges");
  require_cs_coverage(cs_target, lhat_target.rows());
  const std::size_t head_dim = width / n_heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  Tensor q = matmul(lhat_target, block.wq_target);
  Tensor k = matmul(lhat_reference, block.wk_reference);
  Tensor v = matmul(lhat_reference, block.wv_reference);
  std::vector<Tensor> heads;
  heads.reserve(n_heads);
  for (std::size_t i = 0; i < n_heads; ++i) {
    const std::size_t b = i * head_dim, e = b + head_dim;
    heads.push_back(edge_attention(slice_cols(q, b, e), slice_cols(k, b, e), slice_cols(v, b, e),
                                   cs_target, cs_reference, lhat_target.rows(), inv_scale));
  }
  return matmul(concat_cols(heads), block.w_out);
}

Tensor predict_head(const Tensor& lhat_target, const Tensor& hhat_target, const Linear& hidden,
                    const Linear& out) {
  return linear(relu(linear(add(lhat_target, hhat_target), hidden)), out);
}

ForwardState encode_view(const GraphIndex& graph, const Tensor& target_features,
                         const Tensor& reference_features, const ModelParams& params) {
  const ModelConfig& cfg = params.config;
  if (target_features.rows() != graph.n_target || target_features.cols() != cfg.embed_dim) {
    throw DimensionError("encode_view: target features do not match graph and model");
  }
  if (reference_features.rows() != graph.n_reference ||
      reference_features.cols() != cfg.embed_dim + cfg.n_genes) {
    throw DimensionError("encode_view: reference features do not match graph and model");
  }
  ForwardState s;
  Tensor xt = linear(target_features, params.input_target);
  Tensor xr = linear(reference_features, params.input_reference);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    s.l_target = graphsage_layer(xt, graph.ts_node, graph.ts_neighbor, params.sage_target[l]);
    s.l_reference =
        graphsage_layer(xr, graph.rs_node, graph.rs_neighbor, params.sage_reference[l]);
    if (cfg.use_cs_edges) {
      CndaOutput c = cnda_forward(xt, xr, graph.cs_target, graph.cs_reference, params.cnda[l]);
      s.lbar_target = c.target;
      s.lbar_reference = c.reference;
      xt = fuse(s.l_target, s.lbar_target);
      xr = fuse(s.l_reference, s.lbar_reference);
    } else {
      xt = s.l_target;
      xr = s.l_reference;
    }
  }
  s.lhat_target = xt;
  s.lhat_reference = xr;
  if (cfg.use_cs_edges) {
    s.hhat_target = cnap_forward(xt, xr, graph.cs_target, graph.cs_reference, params.cnap,
                                 cfg.n_heads);
  } else {
    s.hhat_target = Tensor(graph.n_target, cfg.hidden);
  }
  s.y_hat = predict_head(s.lhat_target, s.hhat_target, params.head_hidden, params.head_out);
  return s;
}

Matrix predict(const HetGraph& graph, const ModelParams& params) {
  NoGradGuard no_grad;
  const GraphIndex idx = GraphIndex::from(graph);
  return encode_view(idx, Tensor(graph.target_features), Tensor(graph.reference_features), params)
      .y_hat.to_matrix();
}

namespace {
constexpr std::string_view kCheckpointMagic = "SPAHGCP1";
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     const json& extra) {
  json manifest = {{"format", std::string(kCheckpointMagic)},
                   {"config", params.config.to_json()},
                   {"extra", extra}};
  json entries = json::array();
  std::string payload;
  for (const auto& [name, t] : params.named()) {
    entries.push_back({{"name", name}, {"shape", {t.rows(), t.cols()}}});
    for (double v : t.values()) append_f32_le(payload, static_cast<float>(v));
  }
  manifest["tensors"] = entries;
  const std::string header = manifest.dump();
  std::string bytes(kCheckpointMagic);
  append_u32_le(bytes, static_cast<std::uint32_t>(header.size()));
  bytes += header;
  bytes += payload;
  write_text_file(path, bytes);
}

ModelParams load_checkpoint(const std::filesystem::path& path, json* manifest_out) {
  const std::string bytes = read_text_file(path);
  const std::string_view view(bytes);
  if (view.size() < 12 || view.substr(0, 8) != kCheckpointMagic) {
    throw FormatError(path.string() + ": missing SPAHGCP1 header");
  }
  const std::size_t header_len = read_u32_le(view, 8);
  if (12 + header_len > view.size()) throw FormatError(path.string() + ": truncated manifest");
  json manifest;
  ModelParams p;
  try {
    manifest = json::parse(view.substr(12, header_len));
    p = zero_params(ModelConfig::from_json(manifest.at("config")));
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  const auto& entries = manifest.at("tensors");
  std::size_t k = 0;
  std::size_t offset = 12 + header_len;
  visit(p, [&](const std::string& name, Tensor& t) {
    if (k >= entries.size() || entries[k].at("name").get<std::string>() != name ||
        entries[k].at("shape")[0].get<std::size_t>() != t.rows() ||
        entries[k].at("shape")[1].get<std::size_t>() != t.cols()) {
      throw FormatError(path.string() + ": manifest entry " + std::to_string(k) +
                        " does not match expected tensor " + name);
    }
    for (double& v : t.mutable_values()) {
      v = read_f32_le(view, offset);
      offset += 4;
    }
    ++k;
  });
  if (k != entries.size() || offset != view.size()) {
    throw FormatError(path.string() + ": payload size does not match manifest");
  }
  if (manifest_out != nullptr) *manifest_out = manifest;
  return p;
}

}  // namespace spahgc
