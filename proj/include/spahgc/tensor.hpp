#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <vector>

#include "spahgc/matrix.hpp"

namespace spahgc {

namespace detail {
struct Node;
struct Access;
}  // namespace detail

/// Rank-2 dense tensor of doubles taking part in reverse-mode differentiation.
///
/// A Tensor is a shared handle: copies alias the same storage. Values of a
/// tensor produced by an operation are immutable; only leaves (tensors built
/// directly from values) may be edited in place, and only between tapes.
/// Scalars are 1x1 and vectors are n x 1.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> values);
  explicit Tensor(const Matrix& m);
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  std::size_t rows() const;
  std::size_t cols() const;
  std::size_t size() const;

  std::span<const double> values() const;
  /// Writable view of a leaf's values. Throws for tensors produced by an op.
  std::span<double> mutable_values();
  double operator()(std::size_t r, std::size_t c) const;
  double item() const;
  Matrix to_matrix() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  /// Accumulated gradient; empty span when the tensor does not require grad.
  std::span<const double> grad() const;
  void zero_grad();

  /// Copy of the values with no gradient history.
  Tensor detach() const;

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
  friend struct detail::Access;
};

/// Records differentiable operations issued on this thread while alive.
///
/// Tapes nest: constructing a Tape makes it the active recorder until it is
/// destroyed. Operations are recorded only when at least one input requires a
/// gradient and no NoGradGuard is in effect. backward() may be called once.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Seeds d(root)/d(root) = 1 and runs every recorded backward rule in
  /// reverse order, accumulating into the grad of each participating tensor.
  void backward(const Tensor& root);
  std::size_t num_ops() const { return ops_.size(); }

  static Tape* active();

  struct Op {
    std::shared_ptr<detail::Node> output;
    std::vector<std::shared_ptr<detail::Node>> inputs;
    std::function<void()> backward;
  };

 private:
  std::vector<Op> ops_;
  Tape* previous_ = nullptr;
  bool consumed_ = false;
  friend struct detail::Access;
};

/// Disables recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

  static bool enabled();

 private:
  bool previous_;
};

// Linear algebra and elementwise arithmetic.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double c);
/// a[r, :] + row[0, :] for every r.
Tensor add_row(const Tensor& a, const Tensor& row);
/// a[r, :] * col[r, 0] for every r.
Tensor mul_col(const Tensor& a, const Tensor& col);
Tensor relu(const Tensor& a);
Tensor log1p(const Tensor& a);
Tensor sqrt(const Tensor& a);

// Reductions.
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor col_sum(const Tensor& a);
Tensor col_mean(const Tensor& a);
/// Per-row inner product of two same-shape tensors, n x 1.
Tensor row_dot(const Tensor& a, const Tensor& b);
/// Per-row cosine similarity, n x 1. Zero-norm rows raise DegenerateError.
Tensor cosine_rows(const Tensor& a, const Tensor& b);
Tensor softmax_rows(const Tensor& x);

// Shape manipulation.
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
Tensor select_cols(const Tensor& a, std::span<const std::size_t> idx);
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> idx);

// Segment (scatter) operations over row-wise segment ids.
Tensor segment_sum(const Tensor& values, std::span<const std::size_t> segment_ids,
                   std::size_t n_segments);
/// Empty segments yield zero rows.
Tensor segment_mean(const Tensor& values, std::span<const std::size_t> segment_ids,
                    std::size_t n_segments);
/// Softmax of an E x 1 score column within each segment.
Tensor segment_softmax(const Tensor& scores, std::span<const std::size_t> segment_ids,
                       std::size_t n_segments);

}  // namespace spahgc
