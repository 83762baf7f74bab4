#pragma once

#include <functional>

#include "scnn/tensor.hpp"

SCNN_NAMESPACE_BEGIN

/// Central-difference check of `analytic` (= d f / d x) against f evaluated at
/// x +- eps along each coordinate. Returns
///   max_i |analytic_i - fd_i| / max(1, |analytic_i|).
/// Throws if f produces a non-finite value. `x` is restored before returning.
Real finite_difference_check(const std::function<Real(const Tensor&)>& f, Tensor& x, std::span<const Real> analytic,
                             Real eps = Real(1e-5));

SCNN_NAMESPACE_END
