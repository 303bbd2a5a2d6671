// Copyright (c) 2026, The mole-advice Authors
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable primitives. Every op records a graph node when any input
// requires grad. Shapes are checked explicitly; the only broadcasting is along
// the trailing axis where noted.

#pragma once

#include <span>
#include <vector>

#include "mole/tensor.hpp"

namespace mole::ops {

/// [m×k]·[k×n] -> [m×n]
Tensor matmul(const Tensor& a, const Tensor& b);
/// [m×k]·[n×k]ᵀ -> [m×n]. The usual `x·Wᵀ` of a linear layer.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
/// [m×n] + [n] broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& row);
/// [m×n] ⊙ [m] (or [m×1]) broadcast over columns: row i scaled by w[i].
Tensor scale_rows(const Tensor& a, const Tensor& w);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

/// Softmax along the last axis with max-subtraction.
Tensor softmax(const Tensor& logits);
/// Row-wise softmax of a square [L×L] score matrix where entry (t, s) with
/// s > t is excluded (probability exactly 0).
Tensor causal_softmax(const Tensor& scores);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
/// tanh-approximated GELU.
Tensor gelu(const Tensor& x);
Tensor tanh(const Tensor& x);

/// Gathers rows of `table` [V×d] by id -> [L×d].
Tensor embedding(const Tensor& table, std::span<const int> ids);
/// First `count` rows of a 2-D tensor.
Tensor slice_rows(const Tensor& x, std::size_t count);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);
Tensor concat_cols(const std::vector<Tensor>& parts);

/// Sum over positions with mask[t] != 0 of -log softmax(logits[t])[targets[t]].
/// logits [L×V]; targets and mask have length L.
Tensor cross_entropy_sum(const Tensor& logits, std::span<const int> targets,
                         std::span<const unsigned char> mask);

}  // namespace mole::ops
