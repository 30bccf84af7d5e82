#pragma once

#include <compare>
#include <cstddef>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "spahgc/matrix.hpp"
#include "spahgc/slide.hpp"

namespace spahgc {

/// Directed edge from a node to one of its selected neighbors. Messages flow
/// from `to` into `from` during aggregation.
struct Edge {
  std::size_t from = 0;
  std::size_t to = 0;
  auto operator<=>(const Edge&) const = default;
};

struct GraphConfig {
  std::size_t q = 5;  // spatial neighbors per target spot
  std::size_t k = 7;  // reference neighbors per target spot and per reference spot
  std::set<std::string> excluded_slides;

  void validate() const;
};

/// Target spots, a pooled reference bank and the three edge families:
/// TS (target-target spatial kNN), CS (target-reference cosine top-K) and
/// RS (reference-reference cosine top-K over [embedding || expression]).
struct HetGraph {
  std::string target_slide;
  std::size_t n_target = 0;
  std::size_t n_reference = 0;
  Matrix target_features;     // n x d
  Matrix reference_features;  // m x (d + M)
  std::vector<Edge> ts_edges;
  std::vector<Edge> cs_edges;  // from target index to reference index
  std::vector<Edge> rs_edges;
  std::vector<std::string> reference_slide_of;

  /// Checks degree regularity, index ranges and self-loop freedom.
  void validate(std::size_t q, std::size_t k) const;
};

/// Q nearest spots by Euclidean distance, j != i, ties by lower index. Sorted
/// by (i, distance, j).
std::vector<Edge> build_ts_edges(const Matrix& coords, std::size_t q);

/// K most cosine-similar eligible reference rows per target row, ties by lower
/// reference index. References on an excluded slide are never selected.
std::vector<Edge> build_cs_edges(const Matrix& target_embed, const Matrix& reference_embed,
                                 std::size_t k, std::span<const std::string> reference_slide_of,
                                 const std::set<std::string>& excluded_slides);

/// K most cosine-similar peers per reference row, excluding itself.
std::vector<Edge> build_rs_edges(const Matrix& reference_features, std::size_t k);

/// Pools the non-excluded reference slides into a bank (the target's own slide
/// is always excluded), forms [z || y] reference features and builds all edges.
HetGraph assemble_graph(const Slide& target, std::span<const Slide> references,
                        const GraphConfig& cfg);

/// Serializes counts, edges and reference provenance. Features are not
/// duplicated; `bundles` records where they come from.
nlohmann::json graph_to_json(const HetGraph& graph, const nlohmann::json& bundles = nullptr);
/// Restores topology only; feature matrices are left empty.
HetGraph graph_from_json(const nlohmann::json& j);

}  // namespace spahgc
