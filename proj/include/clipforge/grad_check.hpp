// Copyright (c) 2026, The clipforge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>

#include "clipforge/tensor.hpp"

namespace clipforge {

struct GradCheckResult {
  /// max_i |analytic_i - numeric_i| / max(max_i |analytic_i|, max_i |numeric_i|, floor)
  double max_relative_error = 0.0;
  double max_abs_error = 0.0;
  double grad_scale = 0.0;
};

/// Compares backward() against central differences of a scalar function of `x`.
///
/// `f` must build its graph from the tensor it is given. Each coordinate of x is
/// perturbed by ±eps in float32; the difference quotient divides by the realized
/// float32 step and is accumulated in double. The error is measured against the
/// largest gradient component so that coordinates with near-zero gradient do not
/// dominate through cancellation noise.
GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps = 1e-3,
                           double floor = 1e-8);

}  // namespace clipforge
