// Copyright (c) 2026, The mole-advice Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mole/gradcheck.hpp"
#include "mole/tensor.hpp"

namespace mole::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = true) {
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = d(rng);
    return Tensor(std::move(shape), std::move(v), requires_grad);
}

/// Relative error between reverse-mode and central-difference gradients of
/// `loss` with respect to `param`. Other parameters' grads are untouched.
inline double gradient_error(const std::function<Tensor()>& loss, Tensor& param, double h = 1e-5) {
    param.zero_grad();
    loss().backward();
    std::vector<double> analytic(param.grad().begin(), param.grad().end());
    if (analytic.empty()) analytic.assign(param.size(), 0.0);
    const Tensor numeric = finite_diff_grad([&](const Tensor&) { return loss().item(); }, param, h);
    return relative_error(analytic, numeric.data());
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("mole_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace mole::testing
