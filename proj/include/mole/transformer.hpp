// Copyright (c) 2026, The mole-advice Authors
// SPDX-License-Identifier: Apache-2.0
//
// Small pre-norm decoder-only transformer. It stands in for the large
// instruction-tuned base model: same computation graph shape, desk-scale
// dimensions.

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mole/tensor.hpp"
#include "mole/tokenizer.hpp"

namespace mole {

struct ModelConfig {
    int vocab_size = tokenizer::kVocabSize;
    int d_model = 64;
    int n_layers = 2;
    int n_heads = 4;
    int d_ff = 128;
    int max_seq_len = 256;
    std::uint64_t seed = 0;

    /// Throws ConfigError on any violated invariant.
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

/// Hook for adding adapter terms to projection outputs. `target` is a LoRA
/// target name such as "blocks.0.attn.q"; `input` is the projection input and
/// `base_out` the frozen projection result. Returns the replacement output.
class ProjectionAdapter {
public:
    virtual ~ProjectionAdapter() = default;
    virtual Tensor adapt(std::string_view target, const Tensor& input, const Tensor& base_out) const = 0;
};

struct ForwardResult {
    Tensor logits;                      // [L×vocab]
    std::vector<Tensor> block_outputs;  // per block, [L×d_model], post-MLP residual stream
};

class BaseModel {
public:
    /// Weights ~ N(0, 0.02²) drawn from config.seed; LayerNorm gains 1, biases 0.
    static BaseModel init(const ModelConfig& config);
    /// Every parameter zero, including LayerNorm gains.
    static BaseModel zeros(const ModelConfig& config);
    /// Adopts a parameter list (used by checkpoint loading); validates names and shapes.
    static BaseModel from_parameters(const ModelConfig& config, std::vector<NamedTensor> params);

    BaseModel(const BaseModel& other);
    BaseModel& operator=(const BaseModel& other);
    BaseModel(BaseModel&&) noexcept = default;
    BaseModel& operator=(BaseModel&&) noexcept = default;

    const ModelConfig& config() const { return config_; }
    const std::vector<NamedTensor>& parameters() const { return params_; }
    const Tensor& param(std::string_view name) const;
    Tensor& param(std::string_view name);

    bool frozen() const { return frozen_; }
    /// Frozen parameters never record gradients.
    void set_frozen(bool frozen);

    ForwardResult forward(std::span<const int> tokens, const ProjectionAdapter* adapter = nullptr) const;

    /// Canonical LoRA placement: query and value projections of every block.
    static std::vector<std::string> lora_targets(const ModelConfig& config);
    /// (d_out, d_in) of a projection target.
    std::pair<std::size_t, std::size_t> target_dims(std::string_view target) const;

private:
    BaseModel() = default;
    static std::vector<std::pair<std::string, Shape>> layout(const ModelConfig& config);
    void index();

    ModelConfig config_;
    std::vector<NamedTensor> params_;
    std::map<std::string, std::size_t, std::less<>> by_name_;
    bool frozen_ = true;
};

struct GenerateOptions {
    int max_new = 64;
    double temperature = 0.0;  // 0 = greedy, ties to lowest id
    std::uint64_t seed = 0;
};

/// Autoregressive continuation of `prompt`. Appends at most max_new tokens,
/// stopping after EOS or when the context window is full.
std::vector<int> generate(const BaseModel& model, std::span<const int> prompt, const GenerateOptions& options,
                          const ProjectionAdapter* adapter = nullptr);

}  // namespace mole
