#include "spahgc/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "spahgc/error.hpp"

namespace spahgc {

namespace {

double scalar_of(const Tensor& y) {
  const double v = y.item();
  if (!std::isfinite(v)) throw NumericError("grad_check: non-finite function value");
  return v;
}

}  // namespace

double grad_check_params(const std::function<Tensor()>& f, std::span<Tensor> params, double h) {
  for (auto& p : params) {
    p.set_requires_grad(true);
  }
  {
    Tape tape;
    Tensor y = f();
    scalar_of(y);
    tape.backward(y);
  }
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.emplace_back(p.grad().begin(), p.grad().end());

  NoGradGuard no_grad;
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto values = params[k].mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = scalar_of(f());
      values[i] = saved - h;
      const double down = scalar_of(f());
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double err = std::abs(analytic[k][i] - numeric) / std::max(1.0, std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
  Tensor leaf = x.detach();
  Tensor params[] = {leaf};
  return grad_check_params([&] { return f(leaf); }, params, h);
}

}  // namespace spahgc
