// Copyright (c) 2026, The mole-advice Authors
// SPDX-License-Identifier: Apache-2.0

#include "mole/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mole/errors.hpp"

namespace mole {

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, Tensor& x, double h) {
    if (!(h > 0.0)) throw ContractError("finite_diff_grad: step must be positive");
    Tensor out(x.shape());
    auto xs = x.data();
    auto gs = out.data();
    for (std::size_t k = 0; k < xs.size(); ++k) {
        const double orig = xs[k];
        xs[k] = orig + h;
        const double up = f(x);
        xs[k] = orig - h;
        const double down = f(x);
        xs[k] = orig;
        if (!std::isfinite(up) || !std::isfinite(down)) {
            throw NumericError("finite_diff_grad: non-finite evaluation at coordinate " + std::to_string(k));
        }
        gs[k] = (up - down) / (2.0 * h);
    }
    return out;
}

double relative_error(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeError("relative_error: length mismatch");
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double denom = std::sqrt(std::max(na, nb));
    return denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
}

}  // namespace mole
