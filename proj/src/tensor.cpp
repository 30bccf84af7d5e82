#include "spahgc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>

#include "spahgc/error.hpp"

namespace spahgc {

namespace detail {

struct Node {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool is_leaf = true;
  // Set once any gradient has been accumulated during the current backward pass.
  bool grad_touched = false;

  Node(std::size_t r, std::size_t c, std::vector<double> v)
      : rows(r), cols(c), value(std::move(v)) {}

  double* grad_ptr() { return requires_grad ? grad.data() : nullptr; }
  void touch() { grad_touched = true; }
};

using NodePtr = std::shared_ptr<Node>;

struct Access {
  static const NodePtr& node(const Tensor& t) {
    if (!t.node_) throw DimensionError("operation on an undefined tensor");
    return t.node_;
  }
  static Tensor wrap(NodePtr n) { return Tensor(std::move(n)); }
  static void push(Tape& tape, Tape::Op op) { tape.ops_.push_back(std::move(op)); }
};

}  // namespace detail

namespace {

using detail::Access;
using detail::Node;
using detail::NodePtr;

thread_local Tape* t_active_tape = nullptr;
thread_local bool t_no_grad = false;

std::string shape_str(const Node& n) {
  return std::to_string(n.rows) + "x" + std::to_string(n.cols);
}

NodePtr make_node(std::size_t rows, std::size_t cols, double fill = 0.0) {
  return std::make_shared<Node>(rows, cols, std::vector<double>(rows * cols, fill));
}

void check_finite(const Node& n, const char* op) {
  for (double v : n.value) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite value produced");
  }
}

void require_same_shape(const Node& a, const Node& b, const char* op) {
  if (a.rows != b.rows || a.cols != b.cols) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                         shape_str(b));
  }
}

void check_segments(std::span<const std::size_t> ids, std::size_t rows, std::size_t n_segments,
                    const char* op) {
  if (ids.size() != rows) {
    throw DimensionError(std::string(op) + ": segment id count does not match row count");
  }
  for (std::size_t id : ids) {
    if (id >= n_segments) {
      throw IndexError(std::string(op) + ": segment id " + std::to_string(id) +
                       " out of range for " + std::to_string(n_segments) + " segments");
    }
  }
}

// Registers `out` on the active tape when any input needs a gradient. The
// backward closure receives the output node and must accumulate into the grads
// of inputs that have one.
template <class Backward>
Tensor finish(NodePtr out, std::initializer_list<NodePtr> inputs, const char* op,
              Backward&& backward) {
  out->is_leaf = false;
  check_finite(*out, op);
  Tape* tape = t_active_tape;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const NodePtr& n) { return n->requires_grad; });
  if (tape != nullptr && !t_no_grad && any) {
    out->requires_grad = true;
    out->grad.assign(out->value.size(), 0.0);
    Node* raw = out.get();
    Access::push(*tape, Tape::Op{out, std::vector<NodePtr>(inputs),
                                 [raw, bw = std::forward<Backward>(backward)]() { bw(*raw); }});
  }
  return Access::wrap(std::move(out));
}

void accumulate(Node& n, const std::vector<double>& delta) {
  if (!n.requires_grad) return;
  for (std::size_t i = 0; i < delta.size(); ++i) n.grad[i] += delta[i];
  n.touch();
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill)
    : node_(make_node(rows, cols, fill)) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> values) {
  if (values.size() != rows * cols) {
    throw DimensionError("tensor: " + std::to_string(values.size()) + " values for shape " +
                         std::to_string(rows) + "x" + std::to_string(cols));
  }
  node_ = std::make_shared<Node>(rows, cols, std::move(values));
  check_finite(*node_, "tensor");
}

Tensor::Tensor(const Matrix& m) : Tensor(m.rows(), m.cols(), m.data()) {}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  return Tensor(Matrix::from_rows(rows));
}

Tensor Tensor::scalar(double value) { return Tensor(1, 1, std::vector<double>{value}); }

std::size_t Tensor::rows() const { return Access::node(*this)->rows; }
std::size_t Tensor::cols() const { return Access::node(*this)->cols; }
std::size_t Tensor::size() const { return Access::node(*this)->value.size(); }

std::span<const double> Tensor::values() const { return Access::node(*this)->value; }

std::span<double> Tensor::mutable_values() {
  auto& n = *Access::node(*this);
  if (!n.is_leaf) throw StructuralError("mutable_values: tensor was produced by an operation");
  return n.value;
}

double Tensor::operator()(std::size_t r, std::size_t c) const {
  const auto& n = *Access::node(*this);
  if (r >= n.rows || c >= n.cols) throw IndexError("tensor index out of range");
  return n.value[r * n.cols + c];
}

double Tensor::item() const {
  const auto& n = *Access::node(*this);
  if (n.value.size() != 1) throw DimensionError("item: tensor is " + shape_str(n));
  return n.value[0];
}

Matrix Tensor::to_matrix() const {
  const auto& n = *Access::node(*this);
  return Matrix(n.rows, n.cols, n.value);
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  auto& n = *Access::node(*this);
  if (!n.is_leaf) throw StructuralError("set_requires_grad: only leaves can be toggled");
  n.requires_grad = on;
  if (on) {
    n.grad.assign(n.value.size(), 0.0);
  } else {
    n.grad.clear();
  }
  return *this;
}

std::span<const double> Tensor::grad() const {
  const auto& n = *Access::node(*this);
  return n.grad;
}

void Tensor::zero_grad() {
  auto& n = *Access::node(*this);
  std::fill(n.grad.begin(), n.grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  const auto& n = *Access::node(*this);
  return Tensor(std::make_shared<Node>(n.rows, n.cols, n.value));
}

// ---------------------------------------------------------------------------
// Tape

Tape::Tape() : previous_(t_active_tape) { t_active_tape = this; }

Tape::~Tape() { t_active_tape = previous_; }

Tape* Tape::active() { return t_active_tape; }

void Tape::backward(const Tensor& root) {
  auto& r = *Access::node(root);
  if (r.value.size() != 1) throw DimensionError("backward: root must be a scalar");
  if (consumed_) throw StructuralError("backward: tape already consumed");
  consumed_ = true;
  if (!r.requires_grad) return;
  r.grad[0] += 1.0;
  r.touch();
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    if (!it->output->grad_touched) continue;
    it->backward();
  }
  for (auto& op : ops_) {
    op.output->grad_touched = false;
    for (auto& in : op.inputs) in->grad_touched = false;
  }
}

NoGradGuard::NoGradGuard() : previous_(t_no_grad) { t_no_grad = true; }
NoGradGuard::~NoGradGuard() { t_no_grad = previous_; }
bool NoGradGuard::enabled() { return t_no_grad; }

// ---------------------------------------------------------------------------
// Operations

Tensor matmul(const Tensor& ta, const Tensor& tb) {
  const NodePtr& a = Access::node(ta);
  const NodePtr& b = Access::node(tb);
  if (a->cols != b->rows) {
    throw DimensionError("matmul: inner extents differ " + shape_str(*a) + " * " + shape_str(*b));
  }
  const std::size_t m = a->rows, k = a->cols, n = b->cols;
  auto out = make_node(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    double* c = out->value.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a->value[i * k + p];
      if (av == 0.0) continue;
      const double* br = b->value.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += av * br[j];
    }
  }
  return finish(out, {a, b}, "matmul", [a, b, m, k, n](Node& o) {
    const double* g = o.grad.data();
    if (double* ga = a->grad_ptr()) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double* br = b->value.data() + p * n;
          const double* gr = g + i * n;
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += gr[j] * br[j];
          ga[i * k + p] += s;
        }
      }
      a->touch();
    }
    if (double* gb = b->grad_ptr()) {
      for (std::size_t i = 0; i < m; ++i) {
        const double* gr = g + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double av = a->value[i * k + p];
          if (av == 0.0) continue;
          double* gbr = gb + p * n;
          for (std::size_t j = 0; j < n; ++j) gbr[j] += av * gr[j];
        }
      }
      b->touch();
    }
  });
}

namespace {

template <class Fwd, class DA, class DB>
Tensor binary_elementwise(const Tensor& ta, const Tensor& tb, const char* op, Fwd fwd, DA da,
                          DB db) {
  const NodePtr& a = Access::node(ta);
  const NodePtr& b = Access::node(tb);
  require_same_shape(*a, *b, op);
  auto out = make_node(a->rows, a->cols);
  for (std::size_t i = 0; i < out->value.size(); ++i) {
    out->value[i] = fwd(a->value[i], b->value[i]);
  }
  return finish(out, {a, b}, op, [a, b, da, db](Node& o) {
    if (double* ga = a->grad_ptr()) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) {
        ga[i] += o.grad[i] * da(a->value[i], b->value[i]);
      }
      a->touch();
    }
    if (double* gb = b->grad_ptr()) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) {
        gb[i] += o.grad[i] * db(a->value[i], b->value[i]);
      }
      b->touch();
    }
  });
}

template <class Fwd, class Deriv>
Tensor unary_elementwise(const Tensor& ta, const char* op, Fwd fwd, Deriv deriv) {
  const NodePtr& a = Access::node(ta);
  auto out = make_node(a->rows, a->cols);
  for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = fwd(a->value[i]);
  return finish(out, {a}, op, [a, deriv](Node& o) {
    if (double* ga = a->grad_ptr()) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) {
        ga[i] += o.grad[i] * deriv(a->value[i], o.value[i]);
      }
      a->touch();
    }
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; }, [](double x, double y) { return -x / (y * y); });
}

Tensor scale(const Tensor& a, double s) {
  return unary_elementwise(
      a, "scale", [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double c) {
  return unary_elementwise(
      a, "add_scalar", [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& a) {
  return unary_elementwise(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor log1p(const Tensor& a) {
  return unary_elementwise(
      a, "log1p", [](double x) { return std::log1p(x); },
      [](double x, double) { return 1.0 / (1.0 + x); });
}

Tensor sqrt(const Tensor& a) {
  return unary_elementwise(
      a, "sqrt", [](double x) { return std::sqrt(x); },
      [](double, double y) { return 0.5 / y; });
}

Tensor add_row(const Tensor& ta, const Tensor& trow) {
  const NodePtr& a = Access::node(ta);
  const NodePtr& row = Access::node(trow);
  if (row->rows != 1 || row->cols != a->cols) {
    throw DimensionError("add_row: expected 1x" + std::to_string(a->cols) + " row, got " +
                         shape_str(*row));
  }
  const std::size_t cols = a->cols;
  auto out = make_node(a->rows, cols);
  for (std::size_t r = 0; r < a->rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      out->value[r * cols + c] = a->value[r * cols + c] + row->value[c];
    }
  }
  return finish(out, {a, row}, "add_row", [a, row, cols](Node& o) {
    accumulate(*a, o.grad);
    if (double* gr = row->grad_ptr()) {
      for (std::size_t r = 0; r < o.rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) gr[c] += o.grad[r * cols + c];
      }
      row->touch();
    }
  });
}

Tensor mul_col(const Tensor& ta, const Tensor& tcol) {
  const NodePtr& a = Access::node(ta);
  const NodePtr& col = Access::node(tcol);
  if (col->cols != 1 || col->rows != a->rows) {
    throw DimensionError("mul_col: expected " + std::to_string(a->rows) + "x1 column, got " +
                         shape_str(*col));
  }
  const std::size_t cols = a->cols;
  auto out = make_node(a->rows, cols);
  for (std::size_t r = 0; r < a->rows; ++r) {
    const double w = col->value[r];
    for (std::size_t c = 0; c < cols; ++c) out->value[r * cols + c] = a->value[r * cols + c] * w;
  }
  return finish(out, {a, col}, "mul_col", [a, col, cols](Node& o) {
    if (double* ga = a->grad_ptr()) {
      for (std::size_t r = 0; r < o.rows; ++r) {
        const double w = col->value[r];
        for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += o.grad[r * cols + c] * w;
      }
      a->touch();
    }
    if (double* gc = col->grad_ptr()) {
      for (std::size_t r = 0; r < o.rows; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < cols; ++c) s += o.grad[r * cols + c] * a->value[r * cols + c];
        gc[r] += s;
      }
      col->touch();
    }
  });
}

Tensor sum_all(const Tensor& ta) {
  const NodePtr& a = Access::node(ta);
  auto out = make_node(1, 1);
  double s = 0.0;
  for (double v : a->value) s += v;
  out->value[0] = s;
  return finish(out, {a}, "sum_all", [a](Node& o) {
    if (double* ga = a->grad_ptr()) {
      for (std::size_t i = 0; i < a->value.size(); ++i) ga[i] += o.grad[0];
      a->touch();
    }
  });
}

Tensor mean_all(const Tensor& ta) {
  const NodePtr& a = Access::node(ta);
  if (a->value.empty()) throw DimensionError("mean_all: empty tensor");
  const double inv = 1.0 / static_cast<double>(a->value.size());
  auto out = make_node(1, 1);
  double s = 0.0;
  for (double v : a->value) s += v;
  out->value[0] = s * inv;
  return finish(out, {a}, "mean_all", [a, inv](Node& o) {
    if (double* ga = a->grad_ptr()) {
      for (std::size_t i = 0; i < a->value.size(); ++i) ga[i] += o.grad[0] * inv;
      a->touch();
    }
  });
}

namespace {

Tensor col_reduce(const Tensor& ta, double factor, const char* op) {
  const NodePtr& a = Access::node(ta);
  const std::size_t cols = a->cols;
  auto out = make_node(1, cols);
  for (std::size_t r = 0; r < a->rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out->value[c] += a->value[r * cols + c];
  }
  for (double& v : out->value) v *= factor;
  return finish(out, {a}, op, [a, cols, factor](Node& o) {
    if (double* ga = a->grad_ptr()) {
      for (std::size_t r = 0; r < a->rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += o.grad[c] * factor;
      }
      a->touch();
    }
  });
}

}  // namespace

Tensor col_sum(const Tensor& a) { return col_reduce(a, 1.0, "col_sum"); }

Tensor col_mean(const Tensor& a) {
  if (a.rows() == 0) throw DimensionError("col_mean: no rows");
  return col_reduce(a, 1.0 / static_cast<double>(a.rows()), "col_mean");
}

Tensor row_dot(const Tensor& ta, const Tensor& tb) {
  const NodePtr& a = Access::node(ta);
  const NodePtr& b = Access::node(tb);
  require_same_shape(*a, *b, "row_dot");
  const std::size_t cols = a->cols;
  auto out = make_node(a->rows, 1);
  for (std::size_t r = 0; r < a->rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += a->value[r * cols + c] * b->value[r * cols + c];
    out->value[r] = s;
  }
  return finish(out, {a, b}, "row_dot", [a, b, cols](Node& o) {
    if (double* ga = a->grad_ptr()) {
      for (std::size_t r = 0; r < o.rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += o.grad[r] * b->value[r * cols + c];
      }
      a->touch();
    }
    if (double* gb = b->grad_ptr()) {
      for (std::size_t r = 0; r < o.rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) gb[r * cols + c] += o.grad[r] * a->value[r * cols + c];
      }
      b->touch();
    }
  });
}

Tensor cosine_rows(const Tensor& ta, const Tensor& tb) {
  const NodePtr& a = Access::node(ta);
  const NodePtr& b = Access::node(tb);
  require_same_shape(*a, *b, "cosine_rows");
  const std::size_t rows = a->rows, cols = a->cols;
  std::vector<double> na(rows), nb(rows);
  auto out = make_node(rows, 1);
  for (std::size_t r = 0; r < rows; ++r) {
    double dot = 0.0, sa = 0.0, sb = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double x = a->value[r * cols + c], y = b->value[r * cols + c];
      dot += x * y;
      sa += x * x;
      sb += y * y;
    }
    if (sa == 0.0 || sb == 0.0) {
      throw DegenerateError("cosine_rows: zero-norm row " + std::to_string(r));
    }
    na[r] = std::sqrt(sa);
    nb[r] = std::sqrt(sb);
    out->value[r] = dot / (na[r] * nb[r]);
  }
  return finish(out, {a, b}, "cosine_rows",
                [a, b, cols, na = std::move(na), nb = std::move(nb)](Node& o) {
                  double* ga = a->grad_ptr();
                  double* gb = b->grad_ptr();
                  for (std::size_t r = 0; r < o.rows; ++r) {
                    const double g = o.grad[r];
                    const double cosv = o.value[r];
                    const double inv_ab = 1.0 / (na[r] * nb[r]);
                    for (std::size_t c = 0; c < cols; ++c) {
                      const double x = a->value[r * cols + c], y = b->value[r * cols + c];
                      if (ga) ga[r * cols + c] += g * (y * inv_ab - cosv * x / (na[r] * na[r]));
                      if (gb) gb[r * cols + c] += g * (x * inv_ab - cosv * y / (nb[r] * nb[r]));
                    }
                  }
                  if (ga) a->touch();
                  if (gb) b->touch();
                });
}

Tensor softmax_rows(const Tensor& tx) {
  const NodePtr& x = Access::node(tx);
  const std::size_t rows = x->rows, cols = x->cols;
  auto out = make_node(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x->value.data() + r * cols;
    double* yr = out->value.data() + r * cols;
    const double mx = *std::max_element(xr, xr + cols);
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      yr[c] = std::exp(xr[c] - mx);
      s += yr[c];
    }
    for (std::size_t c = 0; c < cols; ++c) yr[c] /= s;
  }
  return finish(out, {x}, "softmax_rows", [x, cols](Node& o) {
    if (double* gx = x->grad_ptr()) {
      for (std::size_t r = 0; r < o.rows; ++r) {
        const double* yr = o.value.data() + r * cols;
        const double* gr = o.grad.data() + r * cols;
        double s = 0.0;
        for (std::size_t c = 0; c < cols; ++c) s += gr[c] * yr[c];
        for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += yr[c] * (gr[c] - s);
      }
      x->touch();
    }
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t rows = parts.front().rows();
  std::vector<NodePtr> nodes;
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const NodePtr& n = Access::node(p);
    if (n->rows != rows) throw DimensionError("concat_cols: row count mismatch");
    nodes.push_back(n);
    offsets.push_back(total);
    total += n->cols;
  }
  auto out = make_node(rows, total);
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    const auto& n = *nodes[k];
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(n.value.data() + r * n.cols, n.cols, out->value.data() + r * total + offsets[k]);
    }
  }
  out->is_leaf = false;
  check_finite(*out, "concat_cols");
  const bool any = std::any_of(nodes.begin(), nodes.end(),
                               [](const NodePtr& n) { return n->requires_grad; });
  if (Tape* tape = Tape::active(); tape && !NoGradGuard::enabled() && any) {
    out->requires_grad = true;
    out->grad.assign(out->value.size(), 0.0);
    Node* raw = out.get();
    Access::push(*tape, Tape::Op{out, nodes, [raw, nodes, offsets, total]() {
                                   for (std::size_t k = 0; k < nodes.size(); ++k) {
                                     auto& n = *nodes[k];
                                     if (!n.requires_grad) continue;
                                     for (std::size_t r = 0; r < raw->rows; ++r) {
                                       for (std::size_t c = 0; c < n.cols; ++c) {
                                         n.grad[r * n.cols + c] +=
                                             raw->grad[r * total + offsets[k] + c];
                                       }
                                     }
                                     n.touch();
                                   }
                                 }});
  }
  return Access::wrap(std::move(out));
}

Tensor slice_cols(const Tensor& ta, std::size_t begin, std::size_t end) {
  const NodePtr& a = Access::node(ta);
  if (begin > end || end > a->cols) throw IndexError("slice_cols: range out of bounds");
  std::vector<std::size_t> idx(end - begin);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = begin + i;
  return select_cols(ta, idx);
}

Tensor select_cols(const Tensor& ta, std::span<const std::size_t> idx_span) {
  const NodePtr& a = Access::node(ta);
  std::vector<std::size_t> idx(idx_span.begin(), idx_span.end());
  for (std::size_t c : idx) {
    if (c >= a->cols) throw IndexError("select_cols: column " + std::to_string(c) + " out of range");
  }
  const std::size_t rows = a->rows, in_cols = a->cols, out_cols = idx.size();
  auto out = make_node(rows, out_cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < out_cols; ++j) {
      out->value[r * out_cols + j] = a->value[r * in_cols + idx[j]];
    }
  }
  return finish(out, {a}, "select_cols", [a, idx = std::move(idx), in_cols](Node& o) {
    if (double* ga = a->grad_ptr()) {
      for (std::size_t r = 0; r < o.rows; ++r) {
        for (std::size_t j = 0; j < idx.size(); ++j) {
          ga[r * in_cols + idx[j]] += o.grad[r * idx.size() + j];
        }
      }
      a->touch();
    }
  });
}

Tensor gather_rows(const Tensor& ta, std::span<const std::size_t> idx_span) {
  const NodePtr& a = Access::node(ta);
  std::vector<std::size_t> idx(idx_span.begin(), idx_span.end());
  for (std::size_t r : idx) {
    if (r >= a->rows) throw IndexError("gather_rows: row " + std::to_string(r) + " out of range");
  }
  const std::size_t cols = a->cols;
  auto out = make_node(idx.size(), cols);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(a->value.data() + idx[i] * cols, cols, out->value.data() + i * cols);
  }
  return finish(out, {a}, "gather_rows", [a, idx = std::move(idx), cols](Node& o) {
    if (double* ga = a->grad_ptr()) {
      for (std::size_t i = 0; i < idx.size(); ++i) {
        double* dst = ga + idx[i] * cols;
        const double* src = o.grad.data() + i * cols;
        for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
      }
      a->touch();
    }
  });
}

namespace {

Tensor segment_reduce(const Tensor& tv, std::span<const std::size_t> ids_span,
                      std::size_t n_segments, bool average, const char* op) {
  const NodePtr& v = Access::node(tv);
  check_segments(ids_span, v->rows, n_segments, op);
  std::vector<std::size_t> ids(ids_span.begin(), ids_span.end());
  const std::size_t cols = v->cols;
  // Averaging divides each segment sum by its row count; empty segments stay zero.
  std::vector<double> count(n_segments, 1.0);
  if (average) {
    std::fill(count.begin(), count.end(), 0.0);
    for (std::size_t id : ids) count[id] += 1.0;
  }
  auto out = make_node(n_segments, cols);
  for (std::size_t e = 0; e < ids.size(); ++e) {
    double* dst = out->value.data() + ids[e] * cols;
    const double* src = v->value.data() + e * cols;
    for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
  }
  if (average) {
    for (std::size_t s = 0; s < n_segments; ++s) {
      if (count[s] == 0.0) continue;
      for (std::size_t c = 0; c < cols; ++c) out->value[s * cols + c] /= count[s];
    }
  }
  return finish(out, {v}, op,
                [v, ids = std::move(ids), count = std::move(count), cols](Node& o) {
                  if (double* gv = v->grad_ptr()) {
                    for (std::size_t e = 0; e < ids.size(); ++e) {
                      const double c_s = count[ids[e]];
                      const double* src = o.grad.data() + ids[e] * cols;
                      for (std::size_t c = 0; c < cols; ++c) gv[e * cols + c] += src[c] / c_s;
                    }
                    v->touch();
                  }
                });
}

}  // namespace

Tensor segment_sum(const Tensor& values, std::span<const std::size_t> segment_ids,
                   std::size_t n_segments) {
  return segment_reduce(values, segment_ids, n_segments, false, "segment_sum");
}

Tensor segment_mean(const Tensor& values, std::span<const std::size_t> segment_ids,
                    std::size_t n_segments) {
  return segment_reduce(values, segment_ids, n_segments, true, "segment_mean");
}

Tensor segment_softmax(const Tensor& tscores, std::span<const std::size_t> ids_span,
                       std::size_t n_segments) {
  const NodePtr& s = Access::node(tscores);
  if (s->cols != 1) throw DimensionError("segment_softmax: scores must be a column");
  check_segments(ids_span, s->rows, n_segments, "segment_softmax");
  std::vector<std::size_t> ids(ids_span.begin(), ids_span.end());
  std::vector<double> mx(n_segments, -std::numeric_limits<double>::infinity());
  for (std::size_t e = 0; e < ids.size(); ++e) mx[ids[e]] = std::max(mx[ids[e]], s->value[e]);
  std::vector<double> denom(n_segments, 0.0);
  auto out = make_node(s->rows, 1);
  for (std::size_t e = 0; e < ids.size(); ++e) {
    out->value[e] = std::exp(s->value[e] - mx[ids[e]]);
    denom[ids[e]] += out->value[e];
  }
  for (std::size_t e = 0; e < ids.size(); ++e) out->value[e] /= denom[ids[e]];
  return finish(out, {s}, "segment_softmax",
                [s, ids = std::move(ids), n_segments](Node& o) {
                  if (double* gs = s->grad_ptr()) {
                    std::vector<double> dot(n_segments, 0.0);
                    for (std::size_t e = 0; e < ids.size(); ++e) {
                      dot[ids[e]] += o.grad[e] * o.value[e];
                    }
                    for (std::size_t e = 0; e < ids.size(); ++e) {
                      gs[e] += o.value[e] * (o.grad[e] - dot[ids[e]]);
                    }
                    s->touch();
                  }
                });
}

}  // namespace spahgc
