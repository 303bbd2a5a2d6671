// Copyright (c) 2026, The mole-advice Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>

#include "mole/tensor.hpp"

namespace mole {

/// Central-difference gradient of a scalar function, one coordinate at a time.
/// `x` is perturbed in place and restored before returning. Throws
/// NumericError if any evaluation is non-finite.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, Tensor& x, double h = 1e-5);

/// ‖a − b‖₂ / max(‖a‖₂, ‖b‖₂); 0 when both are zero.
double relative_error(std::span<const double> a, std::span<const double> b);

}  // namespace mole
