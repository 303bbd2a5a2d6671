// Copyright (c) 2026, The mole-advice Authors
// SPDX-License-Identifier: Apache-2.0
//
// Text-completion backends behind the issue, advice and judge agents.

#pragma once

#include <chrono>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mole/lora.hpp"
#include "mole/transformer.hpp"

namespace mole {

struct ChatMessage {
    std::string role;  // "system" | "user" | "assistant"
    std::string content;
};

enum class BackendKind { local_toy, remote_chat, mock };

std::string to_string(BackendKind kind);

class ModelBackend {
public:
    virtual ~ModelBackend() = default;

    virtual std::string backend_id() const = 0;
    virtual BackendKind kind() const = 0;
    virtual std::string model_name() const = 0;

    /// Returns the assistant text for a conversation. Throws BackendError on
    /// transport failure. Implementations must be safe to call concurrently.
    virtual std::string complete(const std::vector<ChatMessage>& messages) const = 0;

    bool deterministic() const { return kind() != BackendKind::remote_chat; }
};

/// Content of the last user message, or empty.
std::string last_user_message(const std::vector<ChatMessage>& messages);

/// Keyword-table issue extractor. Scans the last user message.
class MockIssueBackend final : public ModelBackend {
public:
    struct Rule {
        std::string keyword;
        std::string issue;
        std::string theme;
    };
    static const std::vector<Rule>& rules();

    std::string backend_id() const override { return "mock-issue"; }
    BackendKind kind() const override { return BackendKind::mock; }
    std::string model_name() const override { return "mock-issue-v1"; }
    std::string complete(const std::vector<ChatMessage>& messages) const override;
};

/// Theme-to-fix table. Reads "THEME:" fields from the last user message and
/// answers one "FIX:" line per issue.
class MockAdviceBackend final : public ModelBackend {
public:
    static std::string fix_for_theme(const std::string& theme);

    std::string backend_id() const override { return "mock-advice"; }
    BackendKind kind() const override { return BackendKind::mock; }
    std::string model_name() const override { return "mock-advice-v1"; }
    std::string complete(const std::vector<ChatMessage>& messages) const override;
};

/// Rule-based rubric judge over the "FIX:" lines of the last user message.
class MockJudgeBackend final : public ModelBackend {
public:
    /// Verbs that make a fix count as concrete and imperative.
    static const std::vector<std::string>& imperative_verbs();

    std::string backend_id() const override { return "mock-judge"; }
    BackendKind kind() const override { return BackendKind::mock; }
    std::string model_name() const override { return "mock-judge-v1"; }
    std::string complete(const std::vector<ChatMessage>& messages) const override;
};

/// Greedy decoding with the toy transformer. The last user message is the
/// prompt, verbatim; system messages are ignored.
class LocalToyBackend final : public ModelBackend {
public:
    LocalToyBackend(std::string id, BaseModel base, int max_new = 192);
    LocalToyBackend(std::string id, BaseModel base, LoraExpert expert, int max_new = 192);
    LocalToyBackend(std::string id, MoleModel model, int max_new = 192);

    std::string backend_id() const override { return id_; }
    BackendKind kind() const override { return BackendKind::local_toy; }
    std::string model_name() const override;
    std::string complete(const std::vector<ChatMessage>& messages) const override;

private:
    std::string id_;
    std::optional<BaseModel> base_;
    std::optional<LoraExpert> expert_;
    std::optional<MoleModel> mole_;
    int max_new_;
};

struct RemoteConfig {
    std::string endpoint;  // e.g. http://host:8000/v1/chat/completions
    std::string api_key;
    std::string model;
    std::chrono::milliseconds timeout{60'000};
    int max_retries = 3;
    std::vector<std::chrono::milliseconds> backoff{std::chrono::seconds(1), std::chrono::seconds(2),
                                                   std::chrono::seconds(4)};

    /// Reads ADVICE_LLM_ENDPOINT, ADVICE_LLM_API_KEY and ADVICE_LLM_MODEL.
    /// Throws ConfigError when the endpoint is unset.
    static RemoteConfig from_env();
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

/// OpenAI-style chat-completions client.
class RemoteChatBackend final : public ModelBackend {
public:
    explicit RemoteChatBackend(RemoteConfig config, Sleeper sleeper = {});

    std::string backend_id() const override { return "remote:" + config_.model; }
    BackendKind kind() const override { return BackendKind::remote_chat; }
    std::string model_name() const override { return config_.model; }
    std::string complete(const std::vector<ChatMessage>& messages) const override;

private:
    RemoteConfig config_;
    Sleeper sleeper_;
    std::string scheme_host_port_;
    std::string path_;
};

}  // namespace mole
