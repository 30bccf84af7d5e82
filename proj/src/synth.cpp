#include "spahgc/synth.hpp"

#include <cmath>
#include <cstdio>
#include <random>

#include <Eigen/Dense>

#include "spahgc/error.hpp"
#include "spahgc/rng.hpp"

namespace spahgc {

namespace {

constexpr double kGridSpacing = 100.0;
constexpr double kJitter = 10.0;

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

std::string numbered(const char* prefix, std::size_t i, int width) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%0*zu", prefix, width, i);
  return buf;
}

std::vector<std::vector<std::size_t>> grid_neighbors(std::size_t n, std::size_t cols) {
  std::vector<std::vector<std::size_t>> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = i / cols, c = i % cols;
    if (r > 0) out[i].push_back(i - cols);
    if (c > 0) out[i].push_back(i - 1);
    if (c + 1 < cols && i + 1 < n) out[i].push_back(i + 1);
    if (i + cols < n) out[i].push_back(i + cols);
  }
  return out;
}

using EigenMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

EigenMatrix to_eigen(const Matrix& m) {
  return Eigen::Map<const EigenMatrix>(m.data().data(), static_cast<Eigen::Index>(m.rows()),
                                       static_cast<Eigen::Index>(m.cols()));
}

}  // namespace

void SynthConfig::validate() const {
  if (n_slides == 0 || spots_per_slide == 0 || d == 0 || n_genes == 0) {
    throw ConfigError("synth: slide, spot, embedding and gene counts must be at least 1");
  }
  if (!(smoothing >= 0.0 && smoothing <= 1.0)) throw ConfigError("synth: lambda must lie in [0, 1]");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
    throw ConfigError("synth: noise_sigma must be finite and non-negative");
  }
}

SynthDetail generate_detailed(const SynthConfig& cfg) {
  cfg.validate();
  SynthDetail out;
  const std::size_t n = cfg.spots_per_slide, d = cfg.d, genes = cfg.n_genes;

  std::mt19937_64 w_rng(derive_seed(cfg.seed, SeedStage::kSynth, 0));
  std::normal_distribution<double> w_dist(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
  out.w = Matrix(d, genes);
  for (double& v : out.w.values()) v = w_dist(w_rng);

  std::vector<std::string> real_genes;
  for (std::size_t g = 0; g < genes; ++g) real_genes.push_back(numbered("gene_", g, 3));
  std::vector<std::string> all_genes = real_genes;
  all_genes.push_back("gene_filler");
  out.dataset.shared_genes = real_genes;

  const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
  const auto neighbors = grid_neighbors(n, cols);

  for (std::size_t s = 0; s < cfg.n_slides; ++s) {
    std::mt19937_64 rng(derive_seed(cfg.seed, SeedStage::kSynth, s + 1));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> jitter(-kJitter, kJitter);

    Slide slide;
    slide.slide_id = numbered("slide_", s, 2);
    slide.coords = Matrix(n, 2);
    for (std::size_t i = 0; i < n; ++i) {
      slide.spot_ids.push_back(numbered("spot_", i, 4));
      slide.coords(i, 0) = static_cast<double>(i % cols) * kGridSpacing + jitter(rng);
      slide.coords(i, 1) = static_cast<double>(i / cols) * kGridSpacing + jitter(rng);
    }
    slide.embeddings = Matrix(n, d);
    for (double& v : slide.embeddings.values()) v = normal(rng);

    Matrix y0(n, genes);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t g = 0; g < genes; ++g) {
        double a = 0.0;
        if (cfg.null_signal) {
          a = normal(rng);
        } else {
          for (std::size_t j = 0; j < d; ++j) a += slide.embeddings(i, j) * out.w(j, g);
        }
        y0(i, g) = cfg.linear ? a : softplus(a);
      }
    }

    Matrix y(n, genes);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t g = 0; g < genes; ++g) {
        double avg = y0(i, g);
        if (!neighbors[i].empty()) {
          avg = 0.0;
          for (std::size_t j : neighbors[i]) avg += y0(j, g);
          avg /= static_cast<double>(neighbors[i].size());
        }
        const double noise = cfg.noise_sigma > 0.0 ? cfg.noise_sigma * normal(rng) : 0.0;
        y(i, g) = std::max(0.0, (1.0 - cfg.smoothing) * y0(i, g) + cfg.smoothing * avg + noise);
      }
    }

    slide.counts = Matrix(n, genes + 1);
    for (std::size_t i = 0; i < n; ++i) {
      double used = 0.0;
      for (std::size_t g = 0; g < genes; ++g) {
        slide.counts(i, g) = std::expm1(y(i, g)) * kSynthLibrarySize / 1e6;
        used += slide.counts(i, g);
      }
      const double filler = kSynthLibrarySize - used;
      if (!(filler > 0.0)) {
        throw ConfigError("synth: planted expression exceeds the library size at " +
                          slide.slide_id + " spot " + std::to_string(i));
      }
      slide.counts(i, genes) = filler;
    }
    slide.gene_names = all_genes;
    std::vector<std::size_t> real_cols(genes);
    for (std::size_t g = 0; g < genes; ++g) real_cols[g] = g;
    slide.expression = normalize_expression(slide.counts).select_cols(real_cols);
    slide.expression_genes = real_genes;
    slide.validate();

    out.dataset.slides.push_back(std::move(slide));
    out.clean.push_back(std::move(y0));
    out.target.push_back(std::move(y));
    out.neighbors.push_back(neighbors);
  }
  return out;
}

Dataset generate(const SynthConfig& cfg) { return generate_detailed(cfg).dataset; }

RidgeResult ridge_baseline(const Matrix& train_z, const Matrix& train_y, const Matrix& test_z,
                           const Matrix& test_y, double lambda) {
  if (train_z.rows() != train_y.rows() || train_z.rows() == 0) {
    throw DimensionError("ridge: training rows mismatch or empty");
  }
  if (test_z.cols() != train_z.cols() || test_y.cols() != train_y.cols() ||
      test_z.rows() != test_y.rows()) {
    throw DimensionError("ridge: test shapes do not match training shapes");
  }
  if (!(lambda > 0.0)) throw ConfigError("ridge: lambda must be positive");
  const EigenMatrix z = to_eigen(train_z);
  const EigenMatrix y = to_eigen(train_y);
  const Eigen::RowVectorXd z_mean = z.colwise().mean();
  const Eigen::RowVectorXd y_mean = y.colwise().mean();
  const Eigen::MatrixXd zc = z.rowwise() - z_mean;
  const Eigen::MatrixXd yc = y.rowwise() - y_mean;
  Eigen::MatrixXd gram = zc.transpose() * zc;
  gram.diagonal().array() += lambda;
  const Eigen::MatrixXd beta = gram.ldlt().solve(zc.transpose() * yc);
  const EigenMatrix pred =
      ((to_eigen(test_z).rowwise() - z_mean) * beta).rowwise() + y_mean;

  RidgeResult res;
  res.predictions = Matrix(test_z.rows(), train_y.cols(),
                           std::vector<double>(pred.data(), pred.data() + pred.size()));
  res.pcc = pcc_mean(test_y, res.predictions);
  return res;
}

}  // namespace spahgc
