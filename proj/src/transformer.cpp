// Copyright (c) 2026, The mole-advice Authors
// SPDX-License-Identifier: Apache-2.0

#include "mole/transformer.hpp"

#include <cmath>
#include <random>

#include "mole/errors.hpp"
#include "mole/ops.hpp"

namespace mole {

void ModelConfig::validate() const {
    auto positive = [](int v, const char* name) {
        if (v < 1) throw ConfigError(std::string("model config: ") + name + " must be >= 1");
    };
    positive(vocab_size, "vocab_size");
    positive(d_model, "d_model");
    positive(n_layers, "n_layers");
    positive(n_heads, "n_heads");
    positive(d_ff, "d_ff");
    positive(max_seq_len, "max_seq_len");
    if (d_model % n_heads != 0) {
        throw ConfigError("model config: d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                          std::to_string(n_heads));
    }
}

std::vector<std::pair<std::string, Shape>> BaseModel::layout(const ModelConfig& c) {
    const auto v = static_cast<std::size_t>(c.vocab_size);
    const auto d = static_cast<std::size_t>(c.d_model);
    const auto ff = static_cast<std::size_t>(c.d_ff);
    const auto s = static_cast<std::size_t>(c.max_seq_len);
    std::vector<std::pair<std::string, Shape>> out;
    out.emplace_back("tok_emb", Shape{v, d});
    out.emplace_back("pos_emb", Shape{s, d});
    for (int b = 0; b < c.n_layers; ++b) {
        const std::string p = "blocks." + std::to_string(b) + ".";
        out.emplace_back(p + "ln1.gamma", Shape{d});
        out.emplace_back(p + "ln1.beta", Shape{d});
        out.emplace_back(p + "attn.q.weight", Shape{d, d});
        out.emplace_back(p + "attn.k.weight", Shape{d, d});
        out.emplace_back(p + "attn.v.weight", Shape{d, d});
        out.emplace_back(p + "attn.o.weight", Shape{d, d});
        out.emplace_back(p + "ln2.gamma", Shape{d});
        out.emplace_back(p + "ln2.beta", Shape{d});
        out.emplace_back(p + "mlp.fc1.weight", Shape{ff, d});
        out.emplace_back(p + "mlp.fc1.bias", Shape{ff});
        out.emplace_back(p + "mlp.fc2.weight", Shape{d, ff});
        out.emplace_back(p + "mlp.fc2.bias", Shape{d});
    }
    out.emplace_back("ln_f.gamma", Shape{d});
    out.emplace_back("ln_f.beta", Shape{d});
    out.emplace_back("head.weight", Shape{v, d});
    return out;
}

namespace {

bool ends_with(std::string_view s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

}  // namespace

BaseModel BaseModel::init(const ModelConfig& config) {
    config.validate();
    BaseModel m;
    m.config_ = config;
    std::mt19937_64 rng(config.seed);
    std::normal_distribution<double> normal(0.0, 0.02);
    for (auto& [name, shape] : layout(config)) {
        Tensor t(shape);
        if (ends_with(name, ".gamma")) {
            for (auto& v : t.data()) v = 1.0;
        } else if (ends_with(name, ".weight") || ends_with(name, "_emb")) {
            for (auto& v : t.data()) v = normal(rng);
        }
        m.params_.push_back({name, t});
    }
    m.index();
    m.set_frozen(true);
    return m;
}

BaseModel BaseModel::zeros(const ModelConfig& config) {
    config.validate();
    BaseModel m;
    m.config_ = config;
    for (auto& [name, shape] : layout(config)) m.params_.push_back({name, Tensor(shape)});
    m.index();
    m.set_frozen(true);
    return m;
}

BaseModel BaseModel::from_parameters(const ModelConfig& config, std::vector<NamedTensor> params) {
    config.validate();
    const auto expected = layout(config);
    if (params.size() != expected.size()) {
        throw ConfigError("base model: expected " + std::to_string(expected.size()) + " parameters, got " +
                          std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < expected.size(); ++i) {
        if (params[i].name != expected[i].first || params[i].tensor.shape() != expected[i].second) {
            throw ConfigError("base model: parameter " + std::to_string(i) + " is " + params[i].name +
                              shape_str(params[i].tensor.shape()) + ", expected " + expected[i].first +
                              shape_str(expected[i].second));
        }
    }
    BaseModel m;
    m.config_ = config;
    m.params_ = std::move(params);
    m.index();
    m.set_frozen(true);
    return m;
}

BaseModel::BaseModel(const BaseModel& other) : config_(other.config_), frozen_(other.frozen_) {
    params_.reserve(other.params_.size());
    for (const auto& p : other.params_) params_.push_back({p.name, p.tensor.clone()});
    index();
}

BaseModel& BaseModel::operator=(const BaseModel& other) {
    if (this != &other) *this = BaseModel(other);
    return *this;
}

void BaseModel::index() {
    by_name_.clear();
    for (std::size_t i = 0; i < params_.size(); ++i) by_name_[params_[i].name] = i;
}

const Tensor& BaseModel::param(std::string_view name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw ConfigError("base model: no parameter named " + std::string(name));
    return params_[it->second].tensor;
}

Tensor& BaseModel::param(std::string_view name) {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw ConfigError("base model: no parameter named " + std::string(name));
    return params_[it->second].tensor;
}

void BaseModel::set_frozen(bool frozen) {
    frozen_ = frozen;
    for (auto& p : params_) p.tensor.set_requires_grad(!frozen);
}

std::vector<std::string> BaseModel::lora_targets(const ModelConfig& config) {
    std::vector<std::string> out;
    for (int b = 0; b < config.n_layers; ++b) {
        out.push_back("blocks." + std::to_string(b) + ".attn.q");
        out.push_back("blocks." + std::to_string(b) + ".attn.v");
    }
    return out;
}

std::pair<std::size_t, std::size_t> BaseModel::target_dims(std::string_view target) const {
    const auto& w = param(std::string(target) + ".weight");
    return {w.dim(0), w.dim(1)};
}

ForwardResult BaseModel::forward(std::span<const int> tokens, const ProjectionAdapter* adapter) const {
    using namespace ops;
    if (tokens.empty()) throw LengthError("forward: empty token sequence");
    if (tokens.size() > static_cast<std::size_t>(config_.max_seq_len)) {
        throw LengthError("forward: sequence length " + std::to_string(tokens.size()) + " exceeds max_seq_len " +
                          std::to_string(config_.max_seq_len));
    }
    const std::size_t len = tokens.size();
    const auto d = static_cast<std::size_t>(config_.d_model);
    const auto heads = static_cast<std::size_t>(config_.n_heads);
    const std::size_t dh = d / heads;
    const double attn_scale = 1.0 / std::sqrt(static_cast<double>(dh));

    auto project = [&](const std::string& target, const Tensor& input) {
        Tensor out = matmul_nt(input, param(target + ".weight"));
        return adapter ? adapter->adapt(target, input, out) : out;
    };

    Tensor x = add(embedding(param("tok_emb"), tokens), slice_rows(param("pos_emb"), len));
    ForwardResult result;
    for (int b = 0; b < config_.n_layers; ++b) {
        const std::string p = "blocks." + std::to_string(b) + ".";
        Tensor h = layer_norm(x, param(p + "ln1.gamma"), param(p + "ln1.beta"));
        Tensor q = project(p + "attn.q", h);
        Tensor k = matmul_nt(h, param(p + "attn.k.weight"));
        Tensor v = project(p + "attn.v", h);
        std::vector<Tensor> head_out;
        head_out.reserve(heads);
        for (std::size_t hd = 0; hd < heads; ++hd) {
            Tensor qh = slice_cols(q, hd * dh, dh);
            Tensor kh = slice_cols(k, hd * dh, dh);
            Tensor vh = slice_cols(v, hd * dh, dh);
            Tensor att = causal_softmax(scale(matmul_nt(qh, kh), attn_scale));
            head_out.push_back(matmul(att, vh));
        }
        Tensor attn = heads == 1 ? head_out.front() : concat_cols(head_out);
        x = add(x, matmul_nt(attn, param(p + "attn.o.weight")));

        Tensor h2 = layer_norm(x, param(p + "ln2.gamma"), param(p + "ln2.beta"));
        Tensor ff = gelu(add_row(matmul_nt(h2, param(p + "mlp.fc1.weight")), param(p + "mlp.fc1.bias")));
        ff = add_row(matmul_nt(ff, param(p + "mlp.fc2.weight")), param(p + "mlp.fc2.bias"));
        x = add(x, ff);
        result.block_outputs.push_back(x);
    }
    Tensor hf = layer_norm(x, param("ln_f.gamma"), param("ln_f.beta"));
    result.logits = matmul_nt(hf, param("head.weight"));
    return result;
}

std::vector<int> generate(const BaseModel& model, std::span<const int> prompt, const GenerateOptions& options,
                          const ProjectionAdapter* adapter) {
    if (prompt.empty()) throw ContractError("generate: prompt must not be empty");
    if (options.max_new < 0) throw ContractError("generate: max_new must be >= 0");
    if (options.temperature < 0.0) throw ContractError("generate: temperature must be >= 0");
    NoGradGuard no_grad;
    std::vector<int> seq(prompt.begin(), prompt.end());
    std::mt19937_64 rng(options.seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const auto window = static_cast<std::size_t>(model.config().max_seq_len);
    for (int step = 0; step < options.max_new && seq.size() < window; ++step) {
        const auto fr = model.forward(seq, adapter);
        const std::size_t vocab = fr.logits.dim(1);
        auto logits = fr.logits.data().subspan((seq.size() - 1) * vocab, vocab);
        int next = 0;
        if (options.temperature == 0.0) {
            for (std::size_t j = 1; j < vocab; ++j) {
                if (logits[j] > logits[static_cast<std::size_t>(next)]) next = static_cast<int>(j);
            }
        } else {
            double mx = logits[0];
            for (double v : logits) mx = std::max(mx, v);
            std::vector<double> w(vocab);
            double z = 0.0;
            for (std::size_t j = 0; j < vocab; ++j) z += (w[j] = std::exp((logits[j] - mx) / options.temperature));
            double u = unif(rng) * z;
            next = static_cast<int>(vocab - 1);
            for (std::size_t j = 0; j < vocab; ++j) {
                u -= w[j];
                if (u < 0.0) {
                    next = static_cast<int>(j);
                    break;
                }
            }
        }
        seq.push_back(next);
        if (next == tokenizer::kEos) break;
    }
    return seq;
}

}  // namespace mole
