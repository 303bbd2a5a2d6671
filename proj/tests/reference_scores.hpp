// Copyright (c) 2026, The mole-advice Authors
// SPDX-License-Identifier: Apache-2.0
//
// Reference dimension rows and composites of the evaluation table, plus a
// generator of per-item Likert scores whose column means reproduce them.

#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "mole/rubric.hpp"

namespace mole::testing {

struct ReferenceColumn {
    std::string domain;
    std::string system;
    int items;  // smallest count whose mean grid contains every reference cell
    std::array<double, 8> dims;
    double composite;
};

inline const std::vector<ReferenceColumn>& reference_table() {
    static const std::vector<ReferenceColumn> cols{
        {"airline", "base", 5, {70.0, 60.0, 70.0, 70.0, 30.0, 70.0, 100.0, 80.0}, 68.8},
        {"airline", "air_lora", 5, {70.0, 75.0, 30.0, 60.0, 65.0, 75.0, 100.0, 75.0}, 68.8},
        {"airline", "res_lora", 5, {65.0, 80.0, 30.0, 60.0, 45.0, 65.0, 95.0, 80.0}, 65.0},
        {"airline", "proposed", 5, {75.0, 70.0, 30.0, 65.0, 65.0, 75.0, 100.0, 85.0}, 70.6},
        {"restaurant", "base", 8, {68.8, 50.0, 50.0, 65.6, 46.9, 71.9, 100.0, 62.5}, 64.5},
        {"restaurant", "air_lora", 9, {75.0, 63.9, 36.1, 58.3, 63.9, 69.4, 97.2, 88.9}, 69.1},
        {"restaurant", "res_lora", 9, {72.2, 55.6, 30.6, 50.0, 50.0, 63.9, 88.9, 77.8}, 61.1},
        {"restaurant", "proposed", 7, {75.0, 78.6, 46.4, 67.9, 57.1, 82.1, 96.4, 92.9}, 74.6},
    };
    return cols;
}

/// `col.items` scores per column. For each dimension the Likert steps above 1
/// total round(v·n/25), spread as evenly as possible, so the scaled mean is
/// the grid point nearest the reference value.
inline std::vector<RubricScore> reference_scores() {
    std::vector<RubricScore> out;
    for (const auto& col : reference_table()) {
        const int n = col.items;
        std::vector<std::array<int, 8>> likert(static_cast<std::size_t>(n));
        for (std::size_t d = 0; d < 8; ++d) {
            const int steps = static_cast<int>(std::lround(col.dims[d] * n / 25.0));
            for (int i = 0; i < n; ++i) likert[static_cast<std::size_t>(i)][d] = 1 + steps / n + (i < steps % n ? 1 : 0);
        }
        for (int i = 0; i < n; ++i) {
            out.push_back(RubricScore::from_likert(col.domain + "-" + std::to_string(i + 1), col.system, col.domain,
                                                   likert[static_cast<std::size_t>(i)]));
        }
    }
    return out;
}

}  // namespace mole::testing
