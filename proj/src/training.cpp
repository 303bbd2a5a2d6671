// Copyright (c) 2026, The mole-advice Authors
// SPDX-License-Identifier: Apache-2.0

#include "mole/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "mole/errors.hpp"
#include "mole/ops.hpp"
#include "mole/tokenizer.hpp"

namespace mole {

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0)) throw ConfigError("train config: learning_rate must be >= 0");
    if (steps < 0) throw ConfigError("train config: steps must be >= 0");
    if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
    if (max_seq_len < 2) throw ConfigError("train config: max_seq_len must be >= 2");
    if (grad_clip < 0.0) throw ConfigError("train config: grad_clip must be >= 0");
    if (load_balance_weight < 0.0) throw ConfigError("train config: load_balance_weight must be >= 0");
}

EncodedExample encode_example(const TrainExample& ex, LossMask mask, int max_seq_len, std::size_t index) {
    if (ex.completion_text.empty()) {
        throw ValidationError("example " + std::to_string(index) + ": completion text is empty");
    }
    std::vector<int> seq{tokenizer::kBos};
    const auto prompt = tokenizer::encode(ex.prompt_text);
    const auto completion = tokenizer::encode(ex.completion_text);
    seq.insert(seq.end(), prompt.begin(), prompt.end());
    seq.insert(seq.end(), completion.begin(), completion.end());
    seq.push_back(tokenizer::kEos);
    const std::size_t len = seq.size() - 1;
    if (len > static_cast<std::size_t>(max_seq_len)) {
        throw LengthError("example " + std::to_string(index) + " (" + ex.domain_tag + "): " + std::to_string(len) +
                          " tokens exceed max_seq_len " + std::to_string(max_seq_len));
    }
    EncodedExample out;
    out.inputs.assign(seq.begin(), seq.end() - 1);
    out.targets.assign(seq.begin() + 1, seq.end());
    out.mask.assign(len, 1);
    if (mask == LossMask::completion_only) {
        // Target index t predicts seq[t+1]; prompt targets are seq[1..prompt].
        for (std::size_t t = 0; t < prompt.size(); ++t) out.mask[t] = 0;
    }
    return out;
}

LogitsFn logits_fn(const BaseModel& model) {
    return [&model](std::span<const int> tokens) { return model.forward(tokens).logits; };
}

LogitsFn logits_fn(const BaseModel& base, const LoraExpert& expert) {
    return [&base, &expert](std::span<const int> tokens) {
        SingleLoraAdapter adapter(expert);
        return base.forward(tokens, &adapter).logits;
    };
}

LogitsFn logits_fn(const MoleModel& model, GateTrace* trace) {
    return [&model, trace](std::span<const int> tokens) { return model.forward(tokens, trace).logits; };
}

Tensor lm_loss(const LogitsFn& model, std::span<const TrainExample> batch, LossMask mask, int max_seq_len) {
    if (batch.empty()) throw ContractError("lm_loss: empty batch");
    Tensor total;
    std::size_t scored = 0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto enc = encode_example(batch[i], mask, max_seq_len, i);
        Tensor ce = ops::cross_entropy_sum(model(enc.inputs), enc.targets, enc.mask);
        total = i == 0 ? ce : ops::add(total, ce);
        scored += static_cast<std::size_t>(std::count(enc.mask.begin(), enc.mask.end(), 1));
    }
    return ops::scale(total, 1.0 / static_cast<double>(scored));
}

double evaluate_loss(const LogitsFn& model, std::span<const TrainExample> data, LossMask mask, int max_seq_len) {
    NoGradGuard no_grad;
    return lm_loss(model, data, mask, max_seq_len).item();
}

Optimizer::Optimizer(std::vector<Tensor> params, const TrainConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
    if (cfg_.optimizer == OptimizerKind::adam) {
        for (const auto& p : params_) {
            m_.emplace_back(p.size(), 0.0);
            v_.emplace_back(p.size(), 0.0);
        }
    }
}

void Optimizer::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

void Optimizer::step() {
    ++t_;
    double clip = 1.0;
    if (cfg_.grad_clip > 0.0) {
        double sq = 0.0;
        for (const auto& p : params_)
            for (double g : p.grad()) sq += g * g;
        const double norm = std::sqrt(sq);
        if (norm > cfg_.grad_clip) clip = cfg_.grad_clip / norm;
    }
    const double lr = cfg_.learning_rate;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        auto w = params_[k].data();
        auto g = params_[k].grad();
        if (g.empty()) continue;
        if (cfg_.optimizer == OptimizerKind::sgd) {
            for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * clip * g[i];
            continue;
        }
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = clip * g[i];
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
            w[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.epsilon);
        }
    }
}

namespace {

// Seeded epoch-wise shuffling; batches may straddle epoch boundaries.
class BatchSampler {
public:
    BatchSampler(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {
        std::iota(order_.begin(), order_.end(), 0);
        std::shuffle(order_.begin(), order_.end(), rng_);
    }

    /// Returns the next index; sets `epoch_done` when this index closes an epoch.
    std::size_t next(bool& epoch_done) {
        const std::size_t idx = order_[pos_++];
        epoch_done = pos_ == order_.size();
        if (epoch_done) {
            pos_ = 0;
            ++epoch_;
            std::shuffle(order_.begin(), order_.end(), rng_);
        }
        return idx;
    }
    int epoch() const { return epoch_; }

private:
    std::vector<std::size_t> order_;
    std::mt19937_64 rng_;
    std::size_t pos_ = 0;
    int epoch_ = 0;
};

// Per-domain running sums of gate weight per expert.
struct GateAccumulator {
    std::map<std::string, std::vector<double>> sums;
    std::map<std::string, double> counts;

    void add(const std::string& domain, const GateTrace& trace, std::span<const unsigned char> mask,
             std::size_t n_experts) {
        auto& s = sums[domain];
        s.resize(n_experts, 0.0);
        for (const auto& [layer, w] : trace.weights) {
            (void)layer;
            for (std::size_t t = 0; t < mask.size(); ++t) {
                if (!mask[t]) continue;
                for (std::size_t i = 0; i < n_experts; ++i) s[i] += w.at(t, i);
                counts[domain] += 1.0;
            }
        }
    }

    std::vector<double> mean(const std::string& domain) const {
        auto s = sums.at(domain);
        const double c = counts.at(domain);
        for (auto& v : s) v /= c;
        return s;
    }

    std::vector<double> overall() const {
        std::vector<double> s;
        double c = 0.0;
        for (const auto& [d, v] : sums) {
            s.resize(v.size(), 0.0);
            for (std::size_t i = 0; i < v.size(); ++i) s[i] += v[i];
            c += counts.at(d);
        }
        for (auto& v : s) v /= c;
        return s;
    }

    void clear() {
        sums.clear();
        counts.clear();
    }
};

// N·Σ_i (mean_t w_ti)² per gated layer, minimised by balanced routing.
Tensor load_balance_penalty(const std::map<std::string, Tensor>& attached_weights) {
    Tensor total;
    bool first = true;
    for (const auto& [layer, w] : attached_weights) {
        (void)layer;
        const std::size_t len = w.dim(0), n = w.dim(1);
        Tensor ones({1, len}, 1.0 / static_cast<double>(len));
        Tensor mean_w = ops::matmul(ones, w);
        Tensor pen = ops::scale(ops::sum(ops::mul(mean_w, mean_w)), static_cast<double>(n));
        total = first ? pen : ops::add(total, pen);
        first = false;
    }
    return total;
}

class GraphKeepingAdapter final : public ProjectionAdapter {
public:
    GraphKeepingAdapter(const MoleModel& model, GateTrace& trace, std::map<std::string, Tensor>* attached)
        : model_(model), trace_(trace), attached_(attached) {}

    Tensor adapt(std::string_view target, const Tensor& input, const Tensor& base_out) const override {
        if (attached_ && model_.gates().weights.contains(std::string(target))) {
            (*attached_)[std::string(target)] = gate_weights(model_.gates(), target, input);
        }
        return MoleAdapter(model_, &trace_).adapt(target, input, base_out);
    }

private:
    const MoleModel& model_;
    GateTrace& trace_;
    std::map<std::string, Tensor>* attached_;
};

struct LoopSpec {
    std::vector<Tensor> params;
    LogitsFn forward;                  // used when mole == nullptr
    const MoleModel* mole = nullptr;   // gate diagnostics + gated forward
};

TrainSummary run_loop(const LoopSpec& spec, std::span<const TrainExample> data, const TrainConfig& cfg,
                      const LogSink& log) {
    cfg.validate();
    if (data.empty()) throw ContractError("training: empty dataset");
    std::vector<EncodedExample> encoded;
    encoded.reserve(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) encoded.push_back(encode_example(data[i], cfg.loss_mask, cfg.max_seq_len, i));

    Optimizer opt(spec.params, cfg);
    BatchSampler sampler(data.size(), cfg.seed);
    GateAccumulator epoch_gates;
    TrainSummary summary;
    const std::size_t n_experts = spec.mole ? spec.mole->experts().size() : 0;

    for (int step = 0; step < cfg.steps; ++step) {
        const auto t0 = std::chrono::steady_clock::now();
        opt.zero_grad();
        GateAccumulator step_gates;
        Tensor ce_total, penalty;
        std::size_t scored = 0;
        std::vector<std::pair<int, bool>> closed_epochs;
        for (int b = 0; b < cfg.batch_size; ++b) {
            bool epoch_done = false;
            const int epoch = sampler.epoch();
            const std::size_t idx = sampler.next(epoch_done);
            const auto& enc = encoded[idx];
            Tensor logits;
            if (spec.mole) {
                GateTrace trace;
                std::map<std::string, Tensor> attached;
                GraphKeepingAdapter adapter(*spec.mole, trace, cfg.load_balance_weight > 0.0 ? &attached : nullptr);
                logits = spec.mole->base().forward(enc.inputs, &adapter).logits;
                step_gates.add(data[idx].domain_tag, trace, enc.mask, n_experts);
                epoch_gates.add(data[idx].domain_tag, trace, enc.mask, n_experts);
                if (!attached.empty()) {
                    Tensor p = load_balance_penalty(attached);
                    penalty = penalty.size() == 0 || b == 0 ? p : ops::add(penalty, p);
                }
            } else {
                logits = spec.forward(enc.inputs);
            }
            Tensor ce = ops::cross_entropy_sum(logits, enc.targets, enc.mask);
            ce_total = b == 0 ? ce : ops::add(ce_total, ce);
            scored += static_cast<std::size_t>(std::count(enc.mask.begin(), enc.mask.end(), 1));
            if (epoch_done) closed_epochs.emplace_back(epoch, true);
        }
        Tensor loss = ops::scale(ce_total, 1.0 / static_cast<double>(scored));
        const double loss_value = loss.item();
        if (spec.mole && cfg.load_balance_weight > 0.0) {
            loss = ops::add(loss, ops::scale(penalty, cfg.load_balance_weight / cfg.batch_size));
        }
        loss.backward();
        opt.step();
        summary.losses.push_back(loss_value);

        if (log) {
            nlohmann::json rec{{"step", step}, {"loss", loss_value}};
            if (spec.mole) rec["mean_gate_weight_per_expert"] = step_gates.overall();
            rec["wall_ms"] =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
            log(rec);
            if (spec.mole) {
                for (const auto& [epoch, done] : closed_epochs) {
                    (void)done;
                    for (const auto& [domain, sums] : epoch_gates.sums) {
                        (void)sums;
                        log({{"event", "gate_mass"}, {"epoch", epoch}, {"domain", domain},
                             {"mean_gate_weight_per_expert", epoch_gates.mean(domain)}});
                    }
                    epoch_gates.clear();
                }
            }
        } else if (!closed_epochs.empty()) {
            epoch_gates.clear();
        }
    }
    if (log && spec.mole && !epoch_gates.sums.empty()) {
        for (const auto& [domain, sums] : epoch_gates.sums) {
            (void)sums;
            log({{"event", "gate_mass"}, {"epoch", sampler.epoch()}, {"domain", domain}, {"partial", true},
                 {"mean_gate_weight_per_expert", epoch_gates.mean(domain)}});
        }
    }
    return summary;
}

}  // namespace

TrainSummary train_base(BaseModel& model, std::span<const TrainExample> data, const TrainConfig& cfg,
                        const LogSink& log) {
    model.set_frozen(false);
    LoopSpec spec;
    for (const auto& p : model.parameters()) spec.params.push_back(p.tensor);
    spec.forward = logits_fn(model);
    TrainSummary s;
    try {
        s = run_loop(spec, data, cfg, log);
    } catch (...) {
        model.set_frozen(true);
        throw;
    }
    model.set_frozen(true);
    return s;
}

LoraExpert train_lora_adapter(const BaseModel& base, std::span<const TrainExample> data, const TrainConfig& cfg,
                              const std::string& expert_id, int rank, double alpha, const LogSink& log,
                              TrainSummary* summary) {
    if (!base.frozen()) throw ContractError("train_lora_adapter: base model must be frozen");
    if (data.empty()) throw ContractError("train_lora_adapter: empty dataset");
    for (const auto& ex : data) {
        if (ex.domain_tag != data.front().domain_tag) {
            throw ContractError("train_lora_adapter: mixed domains '" + data.front().domain_tag + "' and '" +
                                ex.domain_tag + "'");
        }
    }
    auto expert = LoraExpert::init(expert_id, base.config(), rank, alpha, cfg.seed);
    expert.set_trainable(true);
    LoopSpec spec;
    spec.params = expert.parameters();
    spec.forward = logits_fn(base, expert);
    auto s = run_loop(spec, data, cfg, log);
    if (summary) *summary = std::move(s);
    return expert;
}

MoleModel train_mole(MoleModel model, std::span<const TrainExample> data, const TrainConfig& cfg, const LogSink& log,
                     TrainSummary* summary) {
    if (!model.base().frozen()) throw ContractError("train_mole: base model must be frozen");
    model.validate();
    LoopSpec spec;
    spec.params = model.trainable_parameters();
    if (spec.params.empty()) throw ConfigError("train_mole: no trainable parameters");
    spec.mole = &model;
    auto s = run_loop(spec, data, cfg, log);
    if (summary) *summary = std::move(s);
    return model;
}

std::map<std::string, std::vector<double>> gate_mass_by_domain(const MoleModel& model,
                                                               std::span<const TrainExample> data, LossMask mask,
                                                               int max_seq_len) {
    NoGradGuard no_grad;
    GateAccumulator acc;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto enc = encode_example(data[i], mask, max_seq_len, i);
        GateTrace trace;
        model.forward(enc.inputs, &trace);
        acc.add(data[i].domain_tag, trace, enc.mask, model.experts().size());
    }
    std::map<std::string, std::vector<double>> out;
    for (const auto& [domain, sums] : acc.sums) {
        (void)sums;
        out[domain] = acc.mean(domain);
    }
    return out;
}

}  // namespace mole
