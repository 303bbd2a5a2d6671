// Copyright (c) 2026, The mole-advice Authors
// SPDX-License-Identifier: Apache-2.0
//
// Low-rank experts and the token-level gate that mixes them on top of a
// frozen base model. At every gated projection the output is
//
//   O = F + Σ_i w_i · E_i(x),   w = softmax(W_g · x)
//
// where F is the frozen projection, E_i the i-th expert's low-rank term and x
// the projection's per-token input.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mole/tensor.hpp"
#include "mole/transformer.hpp"

namespace mole {

struct LoraPair {
    Tensor a;  // [r×d_in]
    Tensor b;  // [d_out×r]
};

class LoraExpert {
public:
    static constexpr int kDefaultRank = 8;
    static constexpr double kDefaultAlpha = 16.0;

    /// A ~ N(0, 0.02²), B = 0 for every LoRA target of `config`.
    static LoraExpert init(std::string id, const ModelConfig& config, int rank = kDefaultRank,
                           double alpha = kDefaultAlpha, std::uint64_t seed = 0);
    /// Validates ranks and shapes.
    static LoraExpert from_targets(std::string id, int rank, double alpha, std::map<std::string, LoraPair> targets);

    LoraExpert(const LoraExpert& other);
    LoraExpert& operator=(const LoraExpert& other);
    LoraExpert(LoraExpert&&) noexcept = default;
    LoraExpert& operator=(LoraExpert&&) noexcept = default;

    const std::string& id() const { return id_; }
    int rank() const { return rank_; }
    double alpha() const { return alpha_; }
    double scaling() const { return alpha_ / rank_; }
    const std::map<std::string, LoraPair>& targets() const { return targets_; }
    const LoraPair& target(std::string_view layer) const;
    LoraPair& target(std::string_view layer);

    void set_trainable(bool on);
    std::vector<Tensor> parameters() const;

private:
    LoraExpert() = default;

    std::string id_;
    int rank_ = 0;
    double alpha_ = 0.0;
    std::map<std::string, LoraPair> targets_;
};

/// (α/r)·(x·Aᵀ)·Bᵀ, the adapter-only contribution. x is [L×d_in].
Tensor expert_forward(const LoraExpert& expert, std::string_view layer, const Tensor& x);
/// Dense (α/r)·B·A, [d_out×d_in].
Tensor materialize_delta(const LoraExpert& expert, std::string_view layer);

struct GateNetwork {
    std::size_t num_experts = 0;
    std::map<std::string, Tensor> weights;  // per gated layer, [N×d_model]

    static GateNetwork zeros(const std::vector<std::string>& layers, std::size_t num_experts, std::size_t d_model);
    std::vector<Tensor> parameters() const;
    void set_trainable(bool on);
    GateNetwork clone() const;
};

/// Softmax gate weights. x is one token [d_model] -> [N], or a sequence
/// [L×d_model] -> [L×N] with each row computed independently.
Tensor gate_weights(const GateNetwork& gates, std::string_view layer, const Tensor& x);

/// Gate weights observed during one forward pass, detached, per gated layer [L×N].
struct GateTrace {
    std::map<std::string, Tensor> weights;
};

/// Adds a single expert at full weight (standard LoRA attachment).
class SingleLoraAdapter final : public ProjectionAdapter {
public:
    explicit SingleLoraAdapter(const LoraExpert& expert) : expert_(expert) {}
    Tensor adapt(std::string_view target, const Tensor& input, const Tensor& base_out) const override;

private:
    const LoraExpert& expert_;
};

class MoleModel {
public:
    /// Freezes the base; experts and gates become trainable.
    MoleModel(BaseModel base, std::vector<LoraExpert> experts, GateNetwork gates);
    /// Gates initialised to zero, i.e. uniform routing.
    static MoleModel with_uniform_gates(BaseModel base, std::vector<LoraExpert> experts);

    const BaseModel& base() const { return base_; }
    BaseModel& base() { return base_; }
    const std::vector<LoraExpert>& experts() const { return experts_; }
    std::vector<LoraExpert>& experts() { return experts_; }
    const GateNetwork& gates() const { return gates_; }
    GateNetwork& gates() { return gates_; }
    std::vector<std::string> gated_layers() const;

    /// Throws ConfigError when experts or gates disagree on the target set.
    void validate() const;

    /// `forced_gate_logits`, when set, replaces W_g·x at every layer and token
    /// (inspection hook for routing limits).
    ForwardResult forward(std::span<const int> tokens, GateTrace* trace = nullptr,
                          const std::vector<double>* forced_gate_logits = nullptr) const;

    std::vector<Tensor> trainable_parameters() const;

private:
    BaseModel base_;
    std::vector<LoraExpert> experts_;
    GateNetwork gates_;
};

class MoleAdapter final : public ProjectionAdapter {
public:
    MoleAdapter(const MoleModel& model, GateTrace* trace = nullptr,
                const std::vector<double>* forced_gate_logits = nullptr)
        : model_(model), trace_(trace), forced_(forced_gate_logits) {}
    Tensor adapt(std::string_view target, const Tensor& input, const Tensor& base_out) const override;

private:
    const MoleModel& model_;
    GateTrace* trace_;
    const std::vector<double>* forced_;
};

/// Logits of the gated model.
Tensor mole_forward(const MoleModel& model, std::span<const int> tokens);

}  // namespace mole
