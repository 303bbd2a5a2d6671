// Copyright (c) 2026, The mole-advice Authors
// SPDX-License-Identifier: Apache-2.0

#include "mole/backends.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <regex>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "mole/errors.hpp"
#include "mole/rubric.hpp"
#include "mole/tokenizer.hpp"

namespace mole {

namespace {

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) out.push_back(line);
    return out;
}

}  // namespace

std::string to_string(BackendKind kind) {
    switch (kind) {
        case BackendKind::local_toy: return "local_toy";
        case BackendKind::remote_chat: return "remote_chat";
        case BackendKind::mock: return "mock";
    }
    return "unknown";
}

std::string last_user_message(const std::vector<ChatMessage>& messages) {
    for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
        if (it->role == "user") return it->content;
    }
    return {};
}

// -- mocks --

const std::vector<MockIssueBackend::Rule>& MockIssueBackend::rules() {
    static const std::vector<Rule> table{
        {"delayed", "flight delay", "operations"},
        {"rude", "staff behavior", "service"},
        {"dirty", "cleanliness", "facilities"},
        {"cold food", "food quality", "kitchen"},
    };
    return table;
}

std::string MockIssueBackend::complete(const std::vector<ChatMessage>& messages) const {
    const std::string text = lower(last_user_message(messages));
    for (const auto& r : rules()) {
        if (text.find(r.keyword) != std::string::npos) return "ISSUE: " + r.issue + " | THEME: " + r.theme + "\n";
    }
    return "ISSUE: unspecified dissatisfaction | THEME: general\n";
}

std::string MockAdviceBackend::fix_for_theme(const std::string& theme) {
    static const std::vector<std::pair<std::string, std::string>> table{
        {"operations", "add schedule buffer to turnaround times"},
        {"service", "train staff in complaint handling every quarter"},
        {"facilities", "add hourly cleaning checks to the facility rota"},
        {"kitchen", "hold plated dishes under heat lamps for at most 2 minutes"},
    };
    for (const auto& [t, fix] : table) {
        if (t == theme) return fix;
    }
    return "review operational logs for " + theme;
}

std::string MockAdviceBackend::complete(const std::vector<ChatMessage>& messages) const {
    static const std::regex theme_re(R"(\|\s*THEME:\s*(.*\S))");
    std::vector<std::string> fixes;
    for (const auto& line : lines_of(last_user_message(messages))) {
        std::smatch m;
        if (!std::regex_search(line, m, theme_re)) continue;
        auto fix = fix_for_theme(m[1].str());
        if (std::find(fixes.begin(), fixes.end(), fix) == fixes.end()) fixes.push_back(std::move(fix));
    }
    std::string out;
    for (const auto& f : fixes) out += "FIX: " + f + "\n";
    return out;
}

const std::vector<std::string>& MockJudgeBackend::imperative_verbs() {
    static const std::vector<std::string> verbs{
        "add",     "assign",  "audit",   "automate", "cap",      "clean",   "create",  "extend",
        "hire",    "hold",    "inspect", "install",  "introduce", "limit",  "offer",   "post",
        "provide", "publish", "reduce",  "refund",   "replace",  "require", "review",  "schedule",
        "send",    "set",     "staff",   "track",    "train",    "update",
    };
    return verbs;
}

std::string MockJudgeBackend::complete(const std::vector<ChatMessage>& messages) const {
    int actionability = 3;
    int specificity = 3;
    for (const auto& line : lines_of(last_user_message(messages))) {
        const std::string t = trim(line);
        if (t.rfind("FIX:", 0) != 0) continue;
        const std::string fix = trim(t.substr(4));
        if (std::any_of(fix.begin(), fix.end(), [](unsigned char c) { return std::isdigit(c); })) ++specificity;
        const std::string first = lower(fix.substr(0, fix.find(' ')));
        const auto& verbs = imperative_verbs();
        if (std::find(verbs.begin(), verbs.end(), first) != verbs.end()) ++actionability;
    }
    std::string out;
    for (const auto& dim : rubric::kDimensions) {
        int score = 3;
        if (dim == "actionability") score = std::min(actionability, 5);
        if (dim == "specificity") score = std::min(specificity, 5);
        out += "DIM: " + std::string(dim) + " SCORE: " + std::to_string(score) + "\n";
    }
    return out;
}

// -- local toy --

LocalToyBackend::LocalToyBackend(std::string id, BaseModel base, int max_new)
    : id_(std::move(id)), base_(std::move(base)), max_new_(max_new) {}

LocalToyBackend::LocalToyBackend(std::string id, BaseModel base, LoraExpert expert, int max_new)
    : id_(std::move(id)), base_(std::move(base)), expert_(std::move(expert)), max_new_(max_new) {}

LocalToyBackend::LocalToyBackend(std::string id, MoleModel model, int max_new)
    : id_(std::move(id)), mole_(std::move(model)), max_new_(max_new) {}

std::string LocalToyBackend::model_name() const {
    if (mole_) return "toy-mole-" + std::to_string(mole_->experts().size());
    if (expert_) return "toy-lora-" + expert_->id();
    return "toy-base";
}

std::string LocalToyBackend::complete(const std::vector<ChatMessage>& messages) const {
    auto prompt = tokenizer::encode(last_user_message(messages));
    prompt.insert(prompt.begin(), tokenizer::kBos);
    GenerateOptions opts;
    opts.max_new = max_new_;
    std::vector<int> out;
    if (mole_) {
        MoleAdapter adapter(*mole_);
        out = generate(mole_->base(), prompt, opts, &adapter);
    } else if (expert_) {
        SingleLoraAdapter adapter(*expert_);
        out = generate(*base_, prompt, opts, &adapter);
    } else {
        out = generate(*base_, prompt, opts);
    }
    return tokenizer::decode(std::span<const int>(out).subspan(prompt.size()));
}

// -- remote --

RemoteConfig RemoteConfig::from_env() {
    auto get = [](const char* name) {
        const char* v = std::getenv(name);
        return v ? std::string(v) : std::string();
    };
    RemoteConfig c;
    c.endpoint = get("ADVICE_LLM_ENDPOINT");
    c.api_key = get("ADVICE_LLM_API_KEY");
    c.model = get("ADVICE_LLM_MODEL");
    if (c.endpoint.empty()) throw ConfigError("remote backend: ADVICE_LLM_ENDPOINT is not set");
    return c;
}

RemoteChatBackend::RemoteChatBackend(RemoteConfig config, Sleeper sleeper)
    : config_(std::move(config)), sleeper_(std::move(sleeper)) {
    static const std::regex url_re(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(config_.endpoint, m, url_re)) {
        throw ConfigError("remote backend: malformed endpoint '" + config_.endpoint + "'");
    }
    scheme_host_port_ = m[1].str();
    path_ = m[2].matched ? m[2].str() : "/v1/chat/completions";
    if (!sleeper_) sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

std::string RemoteChatBackend::complete(const std::vector<ChatMessage>& messages) const {
    nlohmann::json body{{"model", config_.model}, {"temperature", 0}, {"messages", nlohmann::json::array()}};
    for (const auto& msg : messages) body["messages"].push_back({{"role", msg.role}, {"content", msg.content}});
    const std::string payload = body.dump();

    httplib::Client client(scheme_host_port_);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());
    httplib::Headers headers;
    if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

    const int max_attempts = 1 + std::max(0, config_.max_retries);
    std::string last_error;
    for (int attempt = 1; attempt <= max_attempts; ++attempt) {
        auto res = client.Post(path_, headers, payload, "application/json");
        if (!res) {
            last_error = "transport error: " + httplib::to_string(res.error());
        } else if (res->status == 429 || res->status >= 500) {
            last_error = "HTTP " + std::to_string(res->status);
        } else if (res->status != 200) {
            throw BackendError("remote backend: HTTP " + std::to_string(res->status) + ": " + res->body, attempt,
                               false);
        } else {
            try {
                const auto j = nlohmann::json::parse(res->body);
                return j.at("choices").at(0).at("message").at("content").get<std::string>();
            } catch (const nlohmann::json::exception& e) {
                throw BackendError(std::string("remote backend: malformed response: ") + e.what(), attempt, false);
            }
        }
        if (attempt < max_attempts) {
            const auto& b = config_.backoff;
            if (!b.empty()) sleeper_(b[std::min<std::size_t>(static_cast<std::size_t>(attempt - 1), b.size() - 1)]);
        }
    }
    throw BackendError("remote backend: " + last_error + " after " + std::to_string(max_attempts) + " attempts",
                       max_attempts, true);
}

}  // namespace mole
