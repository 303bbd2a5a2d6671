// Copyright (c) 2026, The mole-advice Authors
// SPDX-License-Identifier: Apache-2.0

#include "mole/lora.hpp"

#include <algorithm>
#include <random>

#include "mole/errors.hpp"
#include "mole/ops.hpp"

namespace mole {

LoraExpert LoraExpert::init(std::string id, const ModelConfig& config, int rank, double alpha, std::uint64_t seed) {
    config.validate();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 0.02);
    std::map<std::string, LoraPair> targets;
    const auto d = static_cast<std::size_t>(config.d_model);
    for (const auto& name : BaseModel::lora_targets(config)) {
        if (rank < 1) throw ConfigError("lora: rank must be >= 1");
        Tensor a({static_cast<std::size_t>(rank), d});
        for (auto& v : a.data()) v = normal(rng);
        Tensor b({d, static_cast<std::size_t>(rank)});
        targets.emplace(name, LoraPair{a, b});
    }
    return from_targets(std::move(id), rank, alpha, std::move(targets));
}

LoraExpert LoraExpert::from_targets(std::string id, int rank, double alpha, std::map<std::string, LoraPair> targets) {
    if (targets.empty()) throw ConfigError("lora expert " + id + ": no targets");
    if (rank < 1) throw ConfigError("lora expert " + id + ": rank must be >= 1");
    const auto r = static_cast<std::size_t>(rank);
    for (const auto& [name, pair] : targets) {
        if (pair.a.rank() != 2 || pair.b.rank() != 2 || pair.a.dim(0) != r || pair.b.dim(1) != r) {
            throw ConfigError("lora expert " + id + ": target " + name + " has A " + shape_str(pair.a.shape()) +
                              " and B " + shape_str(pair.b.shape()) + " inconsistent with rank " +
                              std::to_string(rank));
        }
        if (r > std::min(pair.a.dim(1), pair.b.dim(0))) {
            throw ConfigError("lora expert " + id + ": rank " + std::to_string(rank) + " exceeds dims of " + name);
        }
    }
    LoraExpert e;
    e.id_ = std::move(id);
    e.rank_ = rank;
    e.alpha_ = alpha;
    e.targets_ = std::move(targets);
    return e;
}

LoraExpert::LoraExpert(const LoraExpert& other) : id_(other.id_), rank_(other.rank_), alpha_(other.alpha_) {
    for (const auto& [name, pair] : other.targets_) targets_.emplace(name, LoraPair{pair.a.clone(), pair.b.clone()});
}

LoraExpert& LoraExpert::operator=(const LoraExpert& other) {
    if (this != &other) *this = LoraExpert(other);
    return *this;
}

const LoraPair& LoraExpert::target(std::string_view layer) const {
    auto it = targets_.find(std::string(layer));
    if (it == targets_.end()) {
        throw ConfigError("lora expert " + id_ + ": unknown target layer " + std::string(layer));
    }
    return it->second;
}

LoraPair& LoraExpert::target(std::string_view layer) {
    return const_cast<LoraPair&>(static_cast<const LoraExpert&>(*this).target(layer));
}

void LoraExpert::set_trainable(bool on) {
    for (auto& [name, pair] : targets_) {
        pair.a.set_requires_grad(on);
        pair.b.set_requires_grad(on);
    }
}

std::vector<Tensor> LoraExpert::parameters() const {
    std::vector<Tensor> out;
    for (const auto& [name, pair] : targets_) {
        out.push_back(pair.a);
        out.push_back(pair.b);
    }
    return out;
}

Tensor expert_forward(const LoraExpert& expert, std::string_view layer, const Tensor& x) {
    const auto& pair = expert.target(layer);
    if (x.rank() != 2 || x.dim(1) != pair.a.dim(1)) {
        throw ShapeError("expert_forward: input " + shape_str(x.shape()) + " does not match A " +
                         shape_str(pair.a.shape()) + " of " + std::string(layer));
    }
    return ops::scale(ops::matmul_nt(ops::matmul_nt(x, pair.a), pair.b), expert.scaling());
}

Tensor materialize_delta(const LoraExpert& expert, std::string_view layer) {
    const auto& pair = expert.target(layer);
    return ops::scale(ops::matmul(pair.b, pair.a), expert.scaling());
}

Tensor SingleLoraAdapter::adapt(std::string_view target, const Tensor& input, const Tensor& base_out) const {
    if (!expert_.targets().contains(std::string(target))) return base_out;
    return ops::add(base_out, expert_forward(expert_, target, input));
}

GateNetwork GateNetwork::zeros(const std::vector<std::string>& layers, std::size_t num_experts, std::size_t d_model) {
    if (num_experts < 1) throw ConfigError("gate network: need at least one expert");
    GateNetwork g;
    g.num_experts = num_experts;
    for (const auto& l : layers) g.weights.emplace(l, Tensor({num_experts, d_model}));
    return g;
}

std::vector<Tensor> GateNetwork::parameters() const {
    std::vector<Tensor> out;
    for (const auto& [name, w] : weights) out.push_back(w);
    return out;
}

void GateNetwork::set_trainable(bool on) {
    for (auto& [name, w] : weights) w.set_requires_grad(on);
}

GateNetwork GateNetwork::clone() const {
    GateNetwork g;
    g.num_experts = num_experts;
    for (const auto& [name, w] : weights) g.weights.emplace(name, w.clone());
    return g;
}

Tensor gate_weights(const GateNetwork& gates, std::string_view layer, const Tensor& x) {
    auto it = gates.weights.find(std::string(layer));
    if (it == gates.weights.end()) throw ConfigError("gate network: unknown gated layer " + std::string(layer));
    const Tensor& wg = it->second;
    if (x.rank() == 1) {
        if (x.dim(0) != wg.dim(1)) {
            throw ShapeError("gate_weights: token width " + std::to_string(x.dim(0)) + " != d_model " +
                             std::to_string(wg.dim(1)));
        }
        Tensor row({1, x.dim(0)}, std::vector<double>(x.data().begin(), x.data().end()));
        Tensor w = ops::softmax(ops::matmul_nt(row, wg));
        return Tensor({wg.dim(0)}, std::vector<double>(w.data().begin(), w.data().end()));
    }
    if (x.rank() != 2 || x.dim(1) != wg.dim(1)) {
        throw ShapeError("gate_weights: input " + shape_str(x.shape()) + " incompatible with W_g " +
                         shape_str(wg.shape()));
    }
    return ops::softmax(ops::matmul_nt(x, wg));
}

MoleModel::MoleModel(BaseModel base, std::vector<LoraExpert> experts, GateNetwork gates)
    : base_(std::move(base)), experts_(std::move(experts)), gates_(std::move(gates)) {
    validate();
    base_.set_frozen(true);
    for (auto& e : experts_) e.set_trainable(true);
    gates_.set_trainable(true);
}

MoleModel MoleModel::with_uniform_gates(BaseModel base, std::vector<LoraExpert> experts) {
    if (experts.empty()) throw ConfigError("mole model: need at least one expert");
    std::vector<std::string> layers;
    for (const auto& [name, pair] : experts.front().targets()) layers.push_back(name);
    auto gates = GateNetwork::zeros(layers, experts.size(), static_cast<std::size_t>(base.config().d_model));
    return MoleModel(std::move(base), std::move(experts), std::move(gates));
}

std::vector<std::string> MoleModel::gated_layers() const {
    std::vector<std::string> out;
    for (const auto& [name, w] : gates_.weights) out.push_back(name);
    return out;
}

void MoleModel::validate() const {
    if (experts_.empty()) throw ConfigError("mole model: need at least one expert");
    if (gates_.num_experts != experts_.size()) {
        throw ConfigError("mole model: gate network routes " + std::to_string(gates_.num_experts) + " experts but " +
                          std::to_string(experts_.size()) + " are attached");
    }
    const auto& ref = experts_.front().targets();
    for (const auto& e : experts_) {
        if (e.targets().size() != ref.size() ||
            !std::equal(ref.begin(), ref.end(), e.targets().begin(),
                        [](const auto& l, const auto& r) { return l.first == r.first; })) {
            throw ConfigError("mole model: expert " + e.id() + " targets differ from expert " +
                              experts_.front().id());
        }
    }
    if (gates_.weights.size() != ref.size()) {
        throw ConfigError("mole model: gate layers do not match expert targets");
    }
    const auto d = static_cast<std::size_t>(base_.config().d_model);
    for (const auto& [name, pair] : ref) {
        auto it = gates_.weights.find(name);
        if (it == gates_.weights.end()) throw ConfigError("mole model: no gate for target " + name);
        if (it->second.shape() != Shape{experts_.size(), d}) {
            throw ConfigError("mole model: gate " + name + " has shape " + shape_str(it->second.shape()));
        }
        const auto [d_out, d_in] = base_.target_dims(name);
        for (const auto& e : experts_) {
            const auto& p = e.target(name);
            if (p.a.dim(1) != d_in || p.b.dim(0) != d_out) {
                throw ConfigError("mole model: expert " + e.id() + " target " + name +
                                  " does not fit the base projection");
            }
        }
    }
}

Tensor MoleAdapter::adapt(std::string_view target, const Tensor& input, const Tensor& base_out) const {
    const auto& gates = model_.gates();
    if (!gates.weights.contains(std::string(target))) return base_out;
    const std::size_t n = model_.experts().size();
    Tensor w;
    if (forced_) {
        if (forced_->size() != n) throw ConfigError("forced gate logits: expected one per expert");
        Tensor logits({input.dim(0), n});
        auto dst = logits.data();
        for (std::size_t t = 0; t < input.dim(0); ++t) std::copy(forced_->begin(), forced_->end(), dst.begin() + t * n);
        w = ops::softmax(logits);
    } else {
        w = gate_weights(gates, target, input);
    }
    if (trace_) trace_->weights[std::string(target)] = w.detach();
    Tensor out = base_out;
    for (std::size_t i = 0; i < n; ++i) {
        Tensor contrib = expert_forward(model_.experts()[i], target, input);
        out = ops::add(out, ops::scale_rows(contrib, ops::slice_cols(w, i, 1)));
    }
    return out;
}

ForwardResult MoleModel::forward(std::span<const int> tokens, GateTrace* trace,
                                 const std::vector<double>* forced_gate_logits) const {
    MoleAdapter adapter(*this, trace, forced_gate_logits);
    return base_.forward(tokens, &adapter);
}

std::vector<Tensor> MoleModel::trainable_parameters() const {
    std::vector<Tensor> out;
    for (const auto& e : experts_)
        for (auto& t : e.parameters())
            if (t.requires_grad()) out.push_back(t);
    for (auto& t : gates_.parameters())
        if (t.requires_grad()) out.push_back(t);
    if (!base_.frozen())
        for (const auto& p : base_.parameters()) out.push_back(p.tensor);
    return out;
}

Tensor mole_forward(const MoleModel& model, std::span<const int> tokens) { return model.forward(tokens).logits; }

}  // namespace mole
