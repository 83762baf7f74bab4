#include "scnn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

SCNN_NAMESPACE_BEGIN

Real finite_difference_check(const std::function<Real(const Tensor&)>& f, Tensor& x, std::span<const Real> analytic,
                             Real eps) {
  if (analytic.size() != x.size()) {
    throw ShapeError("finite_difference_check: gradient has " + std::to_string(analytic.size()) +
                     " entries for a tensor of shape " + to_string(x.shape()));
  }
  auto data = x.data();
  auto eval = [&f, &x, data](std::size_t i, Real saved) {
    const Real v = f(x);
    if (!std::isfinite(v)) {
      data[i] = saved;
      throw std::domain_error("finite_difference_check: function returned a non-finite value");
    }
    return v;
  };
  Real worst = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Real saved = data[i];
    data[i] = saved + eps;
    const Real plus = eval(i, saved);
    data[i] = saved - eps;
    const Real minus = eval(i, saved);
    data[i] = saved;
    const Real numeric = (plus - minus) / (2 * eps);
    const Real err = std::abs(analytic[i] - numeric) / std::max(Real(1), std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

SCNN_NAMESPACE_END
