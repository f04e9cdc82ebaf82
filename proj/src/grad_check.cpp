// Copyright (c) 2026, The clipforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "clipforge/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "clipforge/errors.hpp"

namespace clipforge {

GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps, double floor) {
  Tensor probe = x.detach();
  probe.set_requires_grad(true);
  Tensor y = f(probe);
  if (y.numel() != 1) throw ContractError("grad_check: function must be scalar-valued");
  backward(y);
  const std::vector<float> analytic(probe.grad().begin(), probe.grad().end());

  const std::size_t n = x.numel();
  std::vector<double> numeric(n);
  std::vector<float> base(x.data().begin(), x.data().end());
  NoGradGuard no_grad;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<float> plus = base, minus = base;
    plus[i] = static_cast<float>(base[i] + eps);
    minus[i] = static_cast<float>(base[i] - eps);
    const double fp = f(Tensor::from(x.shape(), plus)).item();
    const double fm = f(Tensor::from(x.shape(), minus)).item();
    numeric[i] = (fp - fm) / (static_cast<double>(plus[i]) - static_cast<double>(minus[i]));
  }

  GradCheckResult r;
  double scale = floor;
  for (std::size_t i = 0; i < n; ++i) {
    scale = std::max({scale, std::abs(static_cast<double>(analytic.empty() ? 0.0f : analytic[i])), std::abs(numeric[i])});
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double a = analytic.empty() ? 0.0 : analytic[i];
    r.max_abs_error = std::max(r.max_abs_error, std::abs(a - numeric[i]));
  }
  r.grad_scale = scale;
  r.max_relative_error = r.max_abs_error / scale;
  return r;
}

}  // namespace clipforge
