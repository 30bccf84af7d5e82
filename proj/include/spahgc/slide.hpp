#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "spahgc/matrix.hpp"

namespace spahgc {

/// One tissue section.
///
/// `counts` columns follow `gene_names`. `expression` is empty until the slide
/// is normalized; afterwards its columns follow `expression_genes` (all genes
/// after normalization, the shared HVG list after selection).
struct Slide {
  std::string slide_id;
  std::vector<std::string> spot_ids;
  Matrix coords;      // n x 2
  Matrix counts;      // n x G, raw counts
  std::vector<std::string> gene_names;
  Matrix embeddings;  // n x d
  Matrix expression;  // n x M, log-normalized
  std::vector<std::string> expression_genes;

  std::size_t n_spots() const { return coords.rows(); }
  std::size_t embed_dim() const { return embeddings.cols(); }

  /// Throws ValidationError (or DimensionError for shape problems) when an
  /// invariant is broken.
  void validate() const;
};

struct Dataset {
  std::vector<Slide> slides;
  std::vector<std::string> shared_genes;

  const Slide& find(const std::string& slide_id) const;
  std::vector<std::string> slide_ids() const;
};

/// Bundle directory: manifest.json, coords.csv, counts.csv, embed.bin and, once
/// preprocessed, expression.csv.
Slide load_bundle(const std::filesystem::path& dir);
void save_bundle(const Slide& slide, const std::filesystem::path& dir);

/// log1p(counts / row_total * 1e6). A spot with zero total raises DegenerateError.
Matrix normalize_expression(const Matrix& counts);

/// Sets expression to the normalized counts over all genes.
void normalize_slide(Slide& slide);

/// Removes spots whose total count is zero; returns how many were removed.
std::size_t drop_degenerate_spots(Slide& slide);

/// Ranks each slide's genes by variance of normalized expression (ties: lower
/// gene index first), intersects the per-slide top `n_top` sets, sorts the
/// result by name and projects every slide's expression onto it.
std::vector<std::string> select_shared_hvgs(Dataset& dataset, std::size_t n_top = 1000);

}  // namespace spahgc
