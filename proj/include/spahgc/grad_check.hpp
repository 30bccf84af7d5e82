#pragma once

#include <functional>
#include <span>

#include "spahgc/tensor.hpp"

namespace spahgc {

/// Compares the taped gradient of a scalar function against central finite
/// differences. Returns max over coordinates of
/// |analytic - numeric| / max(1, |numeric|).
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                  double h = 1e-5);

/// Same comparison over a set of leaf parameters that `f` closes over. The
/// leaves are perturbed in place and restored; their grads are overwritten.
double grad_check_params(const std::function<Tensor()>& f, std::span<Tensor> params,
                         double h = 1e-5);

}  // namespace spahgc
