#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "spahgc/hetgraph.hpp"
#include "spahgc/tensor.hpp"

namespace spahgc {

struct ModelConfig {
  std::size_t embed_dim = 1024;  // d
  std::size_t n_genes = 0;       // M
  std::size_t hidden = 512;      // d'
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  /// When false the cross-slide block is removed: no CNDA exchange (the fused
  /// embedding is the GraphSAGE output) and no CNAP pooling.
  bool use_cs_edges = true;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

/// Affine map x * weight + bias with weight in x out and bias 1 x out.
struct Linear {
  Tensor weight;
  Tensor bias;
};

struct SageLayer {
  Tensor w_self;   // d' x d'
  Tensor w_neigh;  // d' x d'
  Tensor bias;     // 1 x d'
};

/// Projections of one cross-node dual attention layer.
struct CndaLayer {
  Tensor wq_target;
  Tensor wk_reference;
  Tensor wv_reference;
  Tensor wq_reference;
  Tensor wk_target;
  Tensor wv_target;
};

/// Multi-head pooling. Head i uses columns [i*d'/h, (i+1)*d'/h) of the three
/// d' x d' projection matrices.
struct CnapBlock {
  Tensor wq_target;
  Tensor wk_reference;
  Tensor wv_reference;
  Tensor w_out;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct ModelParams {
  ModelConfig config;
  Linear input_target;     // d -> d'
  Linear input_reference;  // d + M -> d'
  std::vector<SageLayer> sage_target;
  std::vector<SageLayer> sage_reference;
  std::vector<CndaLayer> cnda;
  CnapBlock cnap;
  Linear head_hidden;  // d' -> d'
  Linear head_out;     // d' -> M

  /// Every learnable tensor, in checkpoint order. Handles alias the params.
  std::vector<NamedTensor> named() const;
  std::vector<Tensor> tensors() const;
  /// Deep copy with fresh leaves.
  ModelParams clone() const;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);

/// Index vectors of a graph's edge families, ready for gather/segment ops.
struct GraphIndex {
  std::size_t n_target = 0;
  std::size_t n_reference = 0;
  std::vector<std::size_t> ts_node, ts_neighbor;
  std::vector<std::size_t> rs_node, rs_neighbor;
  std::vector<std::size_t> cs_target, cs_reference;

  static GraphIndex from(const HetGraph& g);
};

struct ForwardState {
  Tensor l_target, l_reference;        // GraphSAGE outputs, last layer
  Tensor lbar_target, lbar_reference;  // CNDA outputs, last layer
  Tensor lhat_target, lhat_reference;  // fused, last layer
  Tensor hhat_target;                  // CNAP output
  Tensor y_hat;                        // n x M
};

/// relu(h W_self + mean_{(i,j) in edges} h_j W_neigh + bias). Nodes without
/// out-edges see a zero neighbor mean.
Tensor graphsage_layer(const Tensor& h, std::span<const std::size_t> node,
                       std::span<const std::size_t> neighbor, const SageLayer& layer);

struct CndaOutput {
  Tensor target;
  Tensor reference;
};

/// Bidirectional attention restricted to CS edges. Every target must have at
/// least one CS edge; references without one receive a zero row.
CndaOutput cnda_forward(const Tensor& target, const Tensor& reference,
                        std::span<const std::size_t> cs_target,
                        std::span<const std::size_t> cs_reference, const CndaLayer& layer);

Tensor fuse(const Tensor& local, const Tensor& cross);

/// Multi-head target-over-reference attention on CS edges, scale sqrt(d'/h).
Tensor cnap_forward(const Tensor& lhat_target, const Tensor& lhat_reference,
                    std::span<const std::size_t> cs_target,
                    std::span<const std::size_t> cs_reference, const CnapBlock& block,
                    std::size_t n_heads);

/// MLP(lhat + hhat) with MLP = Linear -> ReLU -> Linear.
Tensor predict_head(const Tensor& lhat_target, const Tensor& hhat_target, const Linear& hidden,
                    const Linear& out);

/// Full encoder on one (possibly masked) view of the graph.
ForwardState encode_view(const GraphIndex& graph, const Tensor& target_features,
                         const Tensor& reference_features, const ModelParams& params);

/// Single unmasked pass without gradient recording.
Matrix predict(const HetGraph& graph, const ModelParams& params);

/// Binary checkpoint: magic "SPAHGCP1", u32 LE manifest length, UTF-8 JSON
/// manifest, then every tensor as f32 LE in manifest order.
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     const nlohmann::json& extra = nlohmann::json::object());
ModelParams load_checkpoint(const std::filesystem::path& path,
                            nlohmann::json* manifest_out = nullptr);

}  // namespace spahgc
