#pragma once

#include <string>
#include <vector>

#include "spahgc/hetgraph.hpp"
#include "spahgc/model.hpp"
#include "support.hpp"

namespace testing {

/// Random heterogeneous graph built with the library's edge builders, with a
/// single reference slide "ref".
inline spahgc::HetGraph random_graph(Gen& g, std::size_t n, std::size_t m, std::size_t d,
                                     std::size_t genes, std::size_t q, std::size_t k) {
  spahgc::HetGraph graph;
  graph.target_slide = "target";
  graph.n_target = n;
  graph.n_reference = m;
  graph.target_features = g.matrix(n, d);
  graph.reference_features = g.matrix(m, d + genes);
  graph.reference_slide_of.assign(m, "ref");
  graph.ts_edges = spahgc::build_ts_edges(g.matrix(n, 2), q);
  std::vector<std::size_t> zcols(d);
  for (std::size_t c = 0; c < d; ++c) zcols[c] = c;
  graph.cs_edges = spahgc::build_cs_edges(graph.target_features,
                                          graph.reference_features.select_cols(zcols), k,
                                          graph.reference_slide_of, {});
  graph.rs_edges = spahgc::build_rs_edges(graph.reference_features, k);
  return graph;
}

inline spahgc::ModelConfig small_config(std::size_t d, std::size_t genes, std::size_t hidden,
                                        std::size_t layers, std::size_t heads) {
  spahgc::ModelConfig c;
  c.embed_dim = d;
  c.n_genes = genes;
  c.hidden = hidden;
  c.n_layers = layers;
  c.n_heads = heads;
  return c;
}

}  // namespace testing
