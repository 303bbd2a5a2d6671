// Copyright (c) 2026, The mole-advice Authors
// SPDX-License-Identifier: Apache-2.0
//
// Causal-LM training for single adapters, gated mixtures and (for building
// the toy base) full-parameter runs.

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mole/lora.hpp"
#include "mole/transformer.hpp"

namespace mole {

enum class OptimizerKind { sgd, adam };
enum class LossMask { full_sequence, completion_only };

struct TrainConfig {
    double learning_rate = 1e-3;
    int steps = 100;
    int batch_size = 4;
    std::uint64_t seed = 0;
    int max_seq_len = 256;
    OptimizerKind optimizer = OptimizerKind::adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    LossMask loss_mask = LossMask::completion_only;
    double grad_clip = 0.0;  // global-norm clip; 0 disables
    // Weight of the switch-style load-balancing penalty on gate mass; 0 disables.
    double load_balance_weight = 0.0;

    void validate() const;
};

struct TrainExample {
    std::string prompt_text;
    std::string completion_text;
    std::string domain_tag;
};

/// Token-level view of one example: the model reads `inputs` and is scored
/// on `targets[t]` wherever `mask[t]` is set.
struct EncodedExample {
    std::vector<int> inputs;
    std::vector<int> targets;
    std::vector<unsigned char> mask;
};

/// BOS + prompt + completion (+ EOS as the final target). Throws LengthError
/// naming `index` when the input exceeds max_seq_len.
EncodedExample encode_example(const TrainExample& ex, LossMask mask, int max_seq_len, std::size_t index = 0);

/// Maps a token sequence to logits [L×vocab].
using LogitsFn = std::function<Tensor(std::span<const int>)>;

LogitsFn logits_fn(const BaseModel& model);
LogitsFn logits_fn(const BaseModel& base, const LoraExpert& expert);
LogitsFn logits_fn(const MoleModel& model, GateTrace* trace = nullptr);

/// Mean next-token cross-entropy (nats) over scored tokens of the batch.
Tensor lm_loss(const LogitsFn& model, std::span<const TrainExample> batch, LossMask mask, int max_seq_len);
/// lm_loss evaluated without recording a graph.
double evaluate_loss(const LogitsFn& model, std::span<const TrainExample> data, LossMask mask, int max_seq_len);

class Optimizer {
public:
    Optimizer(std::vector<Tensor> params, const TrainConfig& cfg);
    void zero_grad();
    /// Applies one update from the accumulated gradients.
    void step();

private:
    std::vector<Tensor> params_;
    TrainConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    long t_ = 0;
};

/// Receives one JSON record per log event (step records and gate-mass
/// diagnostics).
using LogSink = std::function<void(const nlohmann::json&)>;

struct TrainSummary {
    std::vector<double> losses;  // per step, before the update
};

/// Full-parameter training of the base model (used to build the toy base and
/// in memorization checks). The model is left frozen on return.
TrainSummary train_base(BaseModel& model, std::span<const TrainExample> data, const TrainConfig& cfg,
                        const LogSink& log = {});

/// One LoRA expert on a frozen base. All examples must share a domain tag.
LoraExpert train_lora_adapter(const BaseModel& base, std::span<const TrainExample> data, const TrainConfig& cfg,
                              const std::string& expert_id, int rank = LoraExpert::kDefaultRank,
                              double alpha = LoraExpert::kDefaultAlpha, const LogSink& log = {},
                              TrainSummary* summary = nullptr);

/// Retrains experts and gates jointly on mixed-domain data; the base stays
/// frozen. Emits per-step gate mass and per-epoch per-domain gate mass.
MoleModel train_mole(MoleModel model, std::span<const TrainExample> data, const TrainConfig& cfg,
                     const LogSink& log = {}, TrainSummary* summary = nullptr);

/// Mean gate weight per expert over scored positions and all gated layers,
/// grouped by domain tag.
std::map<std::string, std::vector<double>> gate_mass_by_domain(const MoleModel& model,
                                                               std::span<const TrainExample> data, LossMask mask,
                                                               int max_seq_len);

}  // namespace mole
