#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <random>
#include <vector>

#include "spahgc/matrix.hpp"
#include "spahgc/tensor.hpp"

namespace testing {

/// Small seeded generator for property tests.
class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  double normal() { return std::normal_distribution<double>(0.0, 1.0)(rng_); }
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng_);
  }
  std::size_t index(std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng_);
  }
  bool coin() { return index(0, 1) == 1; }

  spahgc::Matrix matrix(std::size_t r, std::size_t c) {
    spahgc::Matrix m(r, c);
    for (double& v : m.values()) v = normal();
    return m;
  }
  spahgc::Tensor tensor(std::size_t r, std::size_t c) { return spahgc::Tensor(matrix(r, c)); }
  /// Entries with |x| in [0.1, 2] and random sign, away from relu kinks.
  spahgc::Tensor away_from_zero(std::size_t r, std::size_t c) {
    spahgc::Tensor t(r, c);
    for (double& v : t.mutable_values()) v = (coin() ? 1.0 : -1.0) * uniform(0.1, 2.0);
    return t;
  }
  std::vector<std::size_t> ids(std::size_t n, std::size_t bound) {
    std::vector<std::size_t> out(n);
    for (auto& v : out) v = index(0, bound - 1);
    return out;
  }
  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("spahgc_test_" + tag + "_" + std::to_string(std::random_device{}()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline bool bitwise_equal(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) return false;
  }
  return true;
}

}  // namespace testing
