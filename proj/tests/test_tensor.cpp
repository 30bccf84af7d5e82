#include <doctest.h>

#include <cmath>
#include <boost/multiprecision/cpp_dec_float.hpp>

#include "spahgc/error.hpp"
#include "spahgc/grad_check.hpp"
#include "spahgc/tensor.hpp"
#include "support.hpp"

using namespace spahgc;
using testing::Gen;

namespace {

std::vector<double> flat(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace

TEST_CASE("matmul identity and projector") {
  Tensor eye = Tensor::from_rows({{1, 0}, {0, 1}});
  Tensor m = Tensor::from_rows({{1, 2}, {3, 4}});
  CHECK(flat(matmul(eye, m)) == std::vector<double>{1, 2, 3, 4});
  Tensor p = Tensor::from_rows({{1, 0}, {0, 0}});
  Tensor v = Tensor::from_rows({{5}, {7}});
  CHECK(flat(matmul(p, v)) == std::vector<double>{5, 0});
  CHECK_THROWS_AS(matmul(m, Tensor(3, 1)), DimensionError);
}

TEST_CASE("matmul matches a triple loop") {
  Gen g(11);
  Tensor a = g.tensor(5, 3), b = g.tensor(3, 4);
  Tensor c = matmul(a, b);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 3; ++k) s += a(i, k) * b(k, j);
      CHECK(c(i, j) == doctest::Approx(s).epsilon(1e-14));
    }
  }
}

TEST_CASE("softmax_rows") {
  Tensor s = softmax_rows(Tensor::from_rows({{0, 0}}));
  CHECK(s(0, 0) == 0.5);
  CHECK(s(0, 1) == 0.5);
  CHECK(softmax_rows(Tensor::from_rows({{-123.4}}))(0, 0) == 1.0);

  using boost::multiprecision::cpp_dec_float_50;
  Tensor t = softmax_rows(Tensor::from_rows({{1, 2, 3}}));
  cpp_dec_float_50 z = exp(cpp_dec_float_50(1)) + exp(cpp_dec_float_50(2)) + exp(cpp_dec_float_50(3));
  for (int j = 0; j < 3; ++j) {
    const double oracle = static_cast<double>(exp(cpp_dec_float_50(j + 1)) / z);
    CHECK(std::abs(t(0, j) - oracle) < 1e-12);
  }
}

TEST_CASE("softmax rows sum to one and lie in (0, 1]") {
  Gen g(5);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = g.tensor(g.index(1, 6), g.index(1, 8));
    for (double& v : x.mutable_values()) v *= 20.0;
    Tensor s = softmax_rows(x);
    for (std::size_t r = 0; r < s.rows(); ++r) {
      double sum = 0.0;
      for (std::size_t c = 0; c < s.cols(); ++c) {
        CHECK(s(r, c) > 0.0);
        CHECK(s(r, c) <= 1.0);
        sum += s(r, c);
      }
      CHECK(std::abs(sum - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("segment_mean") {
  Tensor m = segment_mean(Tensor::from_rows({{2}, {4}}), std::vector<std::size_t>{0, 0}, 1);
  CHECK(m(0, 0) == 3.0);
  Tensor e = segment_mean(Tensor::from_rows({{5}}), std::vector<std::size_t>{1}, 3);
  CHECK(flat(e) == std::vector<double>{0, 5, 0});
  CHECK_THROWS_AS(segment_mean(Tensor::from_rows({{5}}), std::vector<std::size_t>{3}, 3),
                  IndexError);
}

TEST_CASE("segment_mean matches a per-segment loop exactly") {
  Gen g(21);
  Tensor v = g.tensor(50, 4);
  auto ids = g.ids(50, 7);
  Tensor m = segment_mean(v, ids, 7);
  for (std::size_t s = 0; s < 7; ++s) {
    for (std::size_t c = 0; c < 4; ++c) {
      double sum = 0.0;
      std::size_t count = 0;
      for (std::size_t e = 0; e < 50; ++e) {
        if (ids[e] == s) {
          sum += v(e, c);
          ++count;
        }
      }
      CHECK(m(s, c) == (count == 0 ? 0.0 : sum / static_cast<double>(count)));
    }
  }
}

TEST_CASE("segment_mean residuals have zero mean per segment") {
  Gen g(8);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n_seg = g.index(1, 6), e = g.index(1, 40);
    Tensor v = g.tensor(e, 3);
    auto ids = g.ids(e, n_seg);
    Tensor residual = sub(v, gather_rows(segment_mean(v, ids, n_seg), ids));
    Tensor res_mean = segment_mean(residual, ids, n_seg);
    for (double x : res_mean.values()) CHECK(std::abs(x) < 1e-12);
  }
}

TEST_CASE("segment_sum and segment_softmax") {
  Tensor s = segment_sum(Tensor::from_rows({{1, 2}, {3, 4}, {5, 6}}),
                         std::vector<std::size_t>{1, 1, 0}, 2);
  CHECK(flat(s) == std::vector<double>{5, 6, 4, 6});
  Gen g(3);
  Tensor scores = g.tensor(30, 1);
  auto ids = g.ids(30, 5);
  Tensor w = segment_softmax(scores, ids, 5);
  std::vector<double> sums(5, 0.0);
  std::vector<bool> used(5, false);
  for (std::size_t e = 0; e < 30; ++e) {
    sums[ids[e]] += w(e, 0);
    used[ids[e]] = true;
  }
  for (std::size_t k = 0; k < 5; ++k) {
    if (used[k]) CHECK(std::abs(sums[k] - 1.0) < 1e-12);
  }
}

TEST_CASE("cosine_rows") {
  CHECK(cosine_rows(Tensor::from_rows({{1, 0}}), Tensor::from_rows({{1, 0}}))(0, 0) == 1.0);
  CHECK(cosine_rows(Tensor::from_rows({{1, 0}}), Tensor::from_rows({{0, 1}}))(0, 0) == 0.0);
  CHECK_THROWS_AS(cosine_rows(Tensor::from_rows({{0, 0}}), Tensor::from_rows({{0, 1}})),
                  DegenerateError);
}

TEST_CASE("non-finite results raise NumericError") {
  CHECK_THROWS_AS(log1p(Tensor::from_rows({{-2.0}})), NumericError);
  CHECK_THROWS_AS(div(Tensor::from_rows({{1.0}}), Tensor::from_rows({{0.0}})), NumericError);
  CHECK_THROWS_AS(Tensor(1, 1, std::vector<double>{NAN}), NumericError);
}

TEST_CASE("grad_check closed forms") {
  Gen g(1);
  Tensor x = g.tensor(3, 2);
  CHECK(grad_check([](const Tensor& t) { return sum_all(t); }, x) < 1e-9);
  Tensor v = Tensor::from_rows({{1, 2}});
  CHECK(grad_check([](const Tensor& t) { return sum_all(mul(t, t)); }, v) < 1e-9);
  v.set_requires_grad(true);
  {
    Tape tape;
    tape.backward(sum_all(mul(v, v)));
  }
  CHECK(flat(Tensor(1, 2, std::vector<double>(v.grad().begin(), v.grad().end()))) ==
        std::vector<double>{2, 4});
}

TEST_CASE("primitive gradients match central differences") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Gen g(seed);
    const Tensor w = g.tensor(4, 2);
    const Tensor other = g.away_from_zero(3, 4);
    const Tensor positive = [&] {
      Tensor t = g.tensor(3, 4);
      for (double& v : t.mutable_values()) v = std::abs(v) + 0.5;
      return t;
    }();
    const Tensor x = g.away_from_zero(3, 4);
    const Tensor row = g.tensor(1, 4);
    const Tensor col = g.tensor(3, 1);
    const std::vector<std::size_t> ids{2, 0, 2};
    const std::vector<std::size_t> gather{1, 1, 0, 2};
    const std::vector<std::size_t> cols{3, 0};
    auto weighted = [&](const Tensor& t) {
      Tensor wts(t.rows(), t.cols());
      auto vals = wts.mutable_values();
      for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = 0.3 + 0.1 * static_cast<double>(i % 7);
      return sum_all(mul(t, wts));
    };
    const std::vector<std::function<Tensor(const Tensor&)>> fns = {
        [&](const Tensor& t) { return weighted(matmul(t, w)); },
        [&](const Tensor& t) { return weighted(add(t, other)); },
        [&](const Tensor& t) { return weighted(sub(other, t)); },
        [&](const Tensor& t) { return weighted(mul(t, other)); },
        [&](const Tensor& t) { return weighted(div(t, positive)); },
        [&](const Tensor& t) { return weighted(div(other, add_scalar(mul(t, t), 1.0))); },
        [&](const Tensor& t) { return weighted(scale(t, -1.7)); },
        [&](const Tensor& t) { return weighted(relu(t)); },
        [&](const Tensor& t) { return weighted(log1p(mul(t, t))); },
        [&](const Tensor& t) { return weighted(sqrt(add_scalar(mul(t, t), 0.1))); },
        [&](const Tensor& t) { return mean_all(mul(t, t)); },
        [&](const Tensor& t) { return weighted(add_row(t, row)); },
        [&](const Tensor& t) { return weighted(mul_col(t, col)); },
        [&](const Tensor& t) { return weighted(col_sum(mul(t, other))); },
        [&](const Tensor& t) { return weighted(col_mean(mul(t, t))); },
        [&](const Tensor& t) { return weighted(row_dot(t, other)); },
        [&](const Tensor& t) { return weighted(cosine_rows(t, other)); },
        [&](const Tensor& t) { return weighted(softmax_rows(t)); },
        [&](const Tensor& t) {
          const Tensor parts[] = {t, mul(t, t)};
          return weighted(concat_cols(parts));
        },
        [&](const Tensor& t) { return weighted(slice_cols(t, 1, 3)); },
        [&](const Tensor& t) { return weighted(select_cols(t, cols)); },
        [&](const Tensor& t) { return weighted(gather_rows(t, gather)); },
        [&](const Tensor& t) { return weighted(segment_sum(t, ids, 4)); },
        [&](const Tensor& t) { return weighted(segment_mean(t, ids, 4)); },
        [&](const Tensor& t) { return weighted(segment_softmax(slice_cols(t, 0, 1), ids, 4)); },
    };
    for (std::size_t f = 0; f < fns.size(); ++f) {
      CAPTURE(seed);
      CAPTURE(f);
      CHECK(grad_check(fns[f], x) < 1e-6);
    }
  }
}

TEST_CASE("tape records only when a gradient is needed") {
  Tensor a = Tensor::from_rows({{1, 2}});
  Tensor b = Tensor::from_rows({{3, 4}});
  {
    Tape tape;
    add(a, b);
    CHECK(tape.num_ops() == 0);
    a.set_requires_grad(true);
    add(a, b);
    CHECK(tape.num_ops() == 1);
    {
      NoGradGuard guard;
      add(a, b);
    }
    CHECK(tape.num_ops() == 1);
  }
}

TEST_CASE("backward contract") {
  Tensor a = Tensor::from_rows({{1, 2}});
  a.set_requires_grad(true);
  Tape tape;
  Tensor y = mul(a, a);
  CHECK_THROWS_AS(tape.backward(y), DimensionError);
  Tensor s = sum_all(y);
  tape.backward(s);
  CHECK(a.grad()[1] == 4.0);
  CHECK_THROWS_AS(tape.backward(s), StructuralError);
}

TEST_CASE("op outputs are immutable and detach cuts the graph") {
  Tensor a = Tensor::from_rows({{1, 2}});
  a.set_requires_grad(true);
  Tape tape;
  Tensor y = scale(a, 2.0);
  CHECK_THROWS_AS(y.mutable_values(), StructuralError);
  Tensor d = y.detach();
  CHECK_FALSE(d.requires_grad());
  tape.backward(sum_all(mul(d, a)));
  CHECK(flat(Tensor(1, 2, std::vector<double>(a.grad().begin(), a.grad().end()))) ==
        std::vector<double>{2, 4});
}

TEST_CASE("gradients accumulate until zeroed") {
  Tensor a = Tensor::from_rows({{1, -1}});
  a.set_requires_grad(true);
  for (int i = 0; i < 2; ++i) {
    Tape tape;
    tape.backward(sum_all(a));
  }
  CHECK(a.grad()[0] == 2.0);
  a.zero_grad();
  CHECK(a.grad()[0] == 0.0);
}

TEST_CASE("replay is bitwise deterministic") {
  auto run = [] {
    Gen g(99);
    Tensor x = g.tensor(6, 5), w = g.tensor(5, 3);
    w.set_requires_grad(true);
    Tape tape;
    Tensor y = sum_all(softmax_rows(matmul(relu(x), w)));
    tape.backward(y);
    std::vector<double> out{y.item()};
    out.insert(out.end(), w.grad().begin(), w.grad().end());
    return out;
  };
  CHECK(run() == run());
}
