// Copyright (c) 2026, The mole-advice Authors
// SPDX-License-Identifier: Apache-2.0

#include <atomic>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <gtest/gtest.h>
#include <httplib.h>

#include "mole/errors.hpp"
#include "mole/pipeline.hpp"
#include "mole/tokenizer.hpp"
#include "test_util.hpp"

namespace mole {
namespace {

Review negative(std::string id, std::string text, std::string domain = "airline") {
    return {std::move(id), std::move(text), 1, std::move(domain), Sentiment::negative};
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

class FailingFor final : public ModelBackend {
public:
    explicit FailingFor(std::string needle) : needle_(std::move(needle)) {}
    std::string backend_id() const override { return "failing"; }
    BackendKind kind() const override { return BackendKind::mock; }
    std::string model_name() const override { return "failing"; }
    std::string complete(const std::vector<ChatMessage>& m) const override {
        if (last_user_message(m).find(needle_) != std::string::npos) throw BackendError("unreachable", 4, true);
        return inner_.complete(m);
    }

private:
    std::string needle_;
    MockIssueBackend inner_;
};

class RecordingIssue final : public ModelBackend {
public:
    std::string backend_id() const override { return "recording"; }
    BackendKind kind() const override { return BackendKind::mock; }
    std::string model_name() const override { return "recording"; }
    std::string complete(const std::vector<ChatMessage>& m) const override {
        {
            std::lock_guard lock(mu_);
            seen_.insert(last_user_message(m));
        }
        const int now = ++in_flight_;
        int prev = peak_.load();
        while (now > prev && !peak_.compare_exchange_weak(prev, now)) {
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
        --in_flight_;
        return inner_.complete(m);
    }
    std::set<std::string> seen() const {
        std::lock_guard lock(mu_);
        return seen_;
    }
    int peak() const { return peak_; }

private:
    MockIssueBackend inner_;
    mutable std::mutex mu_;
    mutable std::set<std::string> seen_;
    mutable std::atomic<int> in_flight_{0}, peak_{0};
};

class Scripted final : public ModelBackend {
public:
    explicit Scripted(std::vector<std::string> replies) : replies_(std::move(replies)) {}
    std::string backend_id() const override { return "scripted"; }
    BackendKind kind() const override { return BackendKind::mock; }
    std::string model_name() const override { return "scripted"; }
    std::string complete(const std::vector<ChatMessage>& m) const override {
        last_ = m;
        return replies_[std::min<std::size_t>(calls_++, replies_.size() - 1)];
    }
    mutable std::size_t calls_ = 0;
    mutable std::vector<ChatMessage> last_;

private:
    std::vector<std::string> replies_;
};

// -- ingestion --

TEST(Ingest, ThresholdAndOrder) {
    std::istringstream in(R"({"review_id":"a","text":"bad","stars":1,"domain":"airline"}
{"review_id":"b","text":"great","stars":5,"domain":"airline"}
{"review_id":"c","text":"meh","stars":2,"domain":"restaurant"}
{"review_id":"d","text":"ok","stars":3,"domain":"restaurant"}
)");
    auto r = parse_reviews(in, 2);
    ASSERT_EQ(r.reviews.size(), 4u);
    EXPECT_EQ(r.reviews[0].review_id, "a");
    EXPECT_EQ(r.reviews[0].sentiment, Sentiment::negative);
    EXPECT_EQ(r.reviews[1].sentiment, Sentiment::positive);
    EXPECT_EQ(r.reviews[2].sentiment, Sentiment::negative);
    EXPECT_EQ(r.reviews[3].sentiment, Sentiment::positive);
    EXPECT_EQ(r.reviews[3].domain_tag, "restaurant");
    EXPECT_TRUE(r.skipped.empty());
}

TEST(Ingest, ThresholdBounds) {
    std::istringstream in("");
    EXPECT_THROW(parse_reviews(in, 0), ConfigError);
    EXPECT_THROW(parse_reviews(in, 5), ConfigError);
    std::istringstream three(R"({"review_id":"a","text":"x","stars":3,"domain":"d"})");
    EXPECT_EQ(parse_reviews(three, 3).reviews[0].sentiment, Sentiment::negative);
}

TEST(Ingest, MalformedLinesReportedWithLineNumbers) {
    std::istringstream in(R"({"review_id":"a","text":"bad","stars":1,"domain":"airline"}
{"review_id":"b","text":"no stars","domain":"airline"}
not json

{"review_id":"c","text":"","stars":1,"domain":"airline"}
{"review_id":"d","text":"x","stars":9,"domain":"airline"}
{"review_id":"e","text":"x","stars":"1","domain":"airline"}
{"review_id":"f","text":"fine","stars":2,"domain":"airline"}
)");
    auto r = parse_reviews(in);
    ASSERT_EQ(r.reviews.size(), 2u);
    EXPECT_EQ(r.reviews[1].review_id, "f");
    std::vector<std::size_t> lines;
    for (const auto& s : r.skipped) lines.push_back(s.line);
    EXPECT_EQ(lines, (std::vector<std::size_t>{2, 3, 5, 6, 7}));
    EXPECT_NE(r.skipped[0].reason.find("stars"), std::string::npos);
}

TEST(Ingest, FileErrors) {
    auto dir = testing::scratch_dir("ingest");
    EXPECT_THROW(ingest_reviews(dir / "missing.jsonl"), IoError);
    std::ofstream(dir / "bad.jsonl") << "garbage\n{}\n";
    EXPECT_THROW(ingest_reviews(dir / "bad.jsonl"), EmptyInputError);
}

// -- grammars --

TEST(Grammar, IssueLines) {
    auto ok = parse_issue_lines("ISSUE: late plane | THEME: operations\n\nISSUE: rude crew|THEME:service\n");
    ASSERT_TRUE(ok);
    EXPECT_EQ(*ok, (std::vector<Issue>{{"late plane", "operations"}, {"rude crew", "service"}}));
    EXPECT_FALSE(parse_issue_lines(""));
    EXPECT_FALSE(parse_issue_lines("ISSUE: x | THEME: y\nSure, here you go"));
    EXPECT_FALSE(parse_issue_lines("ISSUE: x | THEME: "));
}

TEST(Grammar, FixLines) {
    auto ok = parse_fix_lines("FIX: add staff\r\nFIX: post times\n");
    ASSERT_TRUE(ok);
    EXPECT_EQ(*ok, (std::vector<std::string>{"add staff", "post times"}));
    EXPECT_FALSE(parse_fix_lines("FIX:\n"));
    EXPECT_FALSE(parse_fix_lines("fix: lower case"));
}

TEST(Grammar, AdviceTemplate) {
    IssueRecord rec{"r", {{"flight delay", "operations"}, {"staff behavior", "service"}}};
    EXPECT_EQ(advice_prompt(rec),
              "ISSUES:\nISSUE: flight delay | THEME: operations\nISSUE: staff behavior | THEME: service\nFIXES:\n");
    EXPECT_EQ(advice_completion({"a", "b"}), "FIX: a\nFIX: b\n");
}

// -- agents --

TEST(IssueAgent, MockTable) {
    MockIssueBackend mock;
    auto rec = extract_issues(mock, negative("r", "Our flight was DELAYED by hours"));
    EXPECT_EQ(rec.issues, (std::vector<Issue>{{"flight delay", "operations"}}));
    EXPECT_EQ(extract_issues(mock, negative("r", "meh")).issues,
              (std::vector<Issue>{{"unspecified dissatisfaction", "general"}}));
    EXPECT_EQ(extract_issues(mock, negative("r", "dirty tables and rude staff")).issues,
              (std::vector<Issue>{{"staff behavior", "service"}}));
    EXPECT_EQ(extract_issues(mock, negative("r", "The cold food was sad")).issues,
              (std::vector<Issue>{{"food quality", "kitchen"}}));
}

TEST(IssueAgent, PositiveReviewRejected) {
    MockIssueBackend mock;
    auto r = negative("r", "delayed");
    r.sentiment = Sentiment::positive;
    EXPECT_THROW(extract_issues(mock, r), ContractError);
}

TEST(IssueAgent, RetryKeepsReviewAsLastUserMessage) {
    Scripted s({"I think the problem is lateness.", "ISSUE: lateness | THEME: operations"});
    auto rec = extract_issues(s, negative("r", "late again"));
    EXPECT_EQ(s.calls_, 2u);
    EXPECT_EQ(last_user_message(s.last_), "late again");
    EXPECT_EQ(s.last_[2].role, "assistant");
    EXPECT_EQ(rec.issues.size(), 1u);

    Scripted bad({"nope", "still nope"});
    try {
        extract_issues(bad, negative("r", "x"));
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_EQ(e.raw_response(), "still nope");
    }
}

TEST(AdviceAgent, MockTable) {
    MockAdviceBackend mock;
    auto a = generate_advice(mock, {"r", {{"flight delay", "operations"}}});
    EXPECT_EQ(a.fixes, (std::vector<std::string>{"add schedule buffer to turnaround times"}));
    EXPECT_EQ(a.provenance.backend_id, "mock-advice");
    auto u = generate_advice(mock, {"r", {{"x", "parking"}}});
    EXPECT_EQ(u.fixes, (std::vector<std::string>{"review operational logs for parking"}));
    EXPECT_THROW(generate_advice(mock, {"r", {}}), ContractError);
}

TEST(AdviceAgent, TimestampRules) {
    MockAdviceBackend mock;
    IssueRecord rec{"r", {{"x", "operations"}}};
    unsetenv("SOURCE_DATE_EPOCH");
    EXPECT_EQ(generate_advice(mock, rec).provenance.timestamp, "1970-01-01T00:00:00Z");
    EXPECT_EQ(generate_advice(mock, rec, std::string("2025-01-02T03:04:05Z")).provenance.timestamp,
              "2025-01-02T03:04:05Z");
    setenv("SOURCE_DATE_EPOCH", "86400", 1);
    EXPECT_EQ(generate_advice(mock, rec).provenance.timestamp, "1970-01-02T00:00:00Z");
    setenv("SOURCE_DATE_EPOCH", "soon", 1);
    EXPECT_THROW(generate_advice(mock, rec), ConfigError);
    unsetenv("SOURCE_DATE_EPOCH");
}

TEST(AdviceAgent, LocalToyReproducesMemorizedTriple) {
    ModelConfig c;
    c.d_model = 32;
    c.n_heads = 2;
    c.d_ff = 64;
    c.max_seq_len = 128;
    c.seed = 11;
    auto base = BaseModel::init(c);
    Triple t{negative("r", "delayed"), {"r", {{"flight delay", "operations"}}},
             {"r", {"add schedule buffer", "post delays early"}, {}}};
    TrainConfig cfg;
    cfg.steps = 200;
    cfg.learning_rate = 1e-2;
    cfg.batch_size = 1;
    cfg.max_seq_len = 128;
    std::vector<TrainExample> data{to_train_example(t)};
    train_base(base, data, cfg);
    LocalToyBackend toy("toy", base, 64);
    auto advice = generate_advice(toy, t.issues);
    EXPECT_EQ(advice.fixes, t.advice.fixes);
    EXPECT_EQ(advice.provenance.timestamp, "1970-01-01T00:00:00Z");
}

// -- pipeline --

std::vector<Review> ten_reviews() {
    const char* texts[] = {"flight delayed 3h",  "rude gate agent",    "dirty seats",   "cold food again",
                           "nothing worked",     "Delayed and dirty",  "rude waiter",   "dirty bathroom",
                           "COLD FOOD, slow",    "just bad"};
    std::vector<Review> out;
    for (int i = 0; i < 10; ++i) {
        out.push_back(negative("r" + std::to_string(i), texts[i], i < 5 ? "airline" : "restaurant"));
    }
    return out;
}

TEST(Pipeline, ComposesAgentsReviewWise) {
    MockIssueBackend issue;
    MockAdviceBackend advice;
    const auto reviews = ten_reviews();
    auto result = run_pipeline(issue, advice, reviews);
    ASSERT_EQ(result.triples.size(), 10u);
    for (std::size_t i = 0; i < reviews.size(); ++i) {
        const auto manual = generate_advice(advice, extract_issues(issue, reviews[i]));
        EXPECT_EQ(result.triples[i].review.review_id, reviews[i].review_id);
        EXPECT_EQ(result.triples[i].advice.fixes, manual.fixes);
    }
}

TEST(Pipeline, DeterministicAcrossRuns) {
    MockIssueBackend issue;
    MockAdviceBackend advice;
    auto reviews = ten_reviews();
    reviews.resize(3);
    auto dump = [&] {
        std::string s;
        for (const auto& t : run_pipeline(issue, advice, reviews).triples) s += triple_to_json(t).dump() + "\n";
        return s;
    };
    EXPECT_EQ(dump(), dump());
}

TEST(Pipeline, PositivesNeverReachIssueAgent) {
    RecordingIssue issue;
    MockAdviceBackend advice;
    std::vector<Review> reviews{negative("a", "delayed"), negative("b", "lovely"), negative("c", "rude")};
    reviews[1].stars = 5;
    reviews[1].sentiment = Sentiment::positive;
    auto result = run_pipeline(issue, advice, reviews);
    ASSERT_EQ(result.triples.size(), 2u);
    EXPECT_EQ(result.skipped_positive, 1u);
    EXPECT_EQ(issue.seen().count("lovely"), 0u);
}

TEST(Pipeline, InFlightCapRespected) {
    RecordingIssue issue;
    MockAdviceBackend advice;
    std::vector<Review> reviews;
    for (int i = 0; i < 16; ++i) reviews.push_back(negative("r" + std::to_string(i), "delayed " + std::to_string(i)));
    auto result = run_pipeline(issue, advice, reviews);
    ASSERT_EQ(result.triples.size(), 16u);
    for (int i = 0; i < 16; ++i) EXPECT_EQ(result.triples[static_cast<std::size_t>(i)].review.review_id, "r" + std::to_string(i));
    EXPECT_LE(issue.peak(), 4);
    EXPECT_GE(issue.peak(), 2);
}

TEST(Pipeline, FailuresIsolatedPerReview) {
    FailingFor issue("rude");
    MockAdviceBackend advice;
    auto result = run_pipeline(issue, advice, ten_reviews());
    EXPECT_EQ(result.triples.size(), 8u);
    ASSERT_EQ(result.failures.size(), 2u);
    EXPECT_EQ(result.failures[0].review_id, "r1");
    EXPECT_EQ(result.failures[0].stage, "issue");
    EXPECT_EQ(result.failures[0].error_class, "backend");
}

TEST(Pipeline, AllFailedIsBatchError) {
    FailingFor issue("");
    MockAdviceBackend advice;
    try {
        run_pipeline(issue, advice, ten_reviews());
        FAIL();
    } catch (const BatchError& e) {
        EXPECT_NE(std::string(e.what()).find("issue/backend=10"), std::string::npos);
    }
}

// -- triples --

TEST(Synth, WritesReadableTriples) {
    auto dir = testing::scratch_dir("synth");
    MockIssueBackend issue;
    MockAdviceBackend advice;
    auto res = generate_synthetic_triples(issue, advice, ten_reviews(), dir / "t.jsonl");
    EXPECT_EQ(res.written, 10u);
    const auto text = slurp(dir / "t.jsonl");
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 10);
    auto triples = read_triples(dir / "t.jsonl");
    auto examples = to_train_examples(triples);
    ASSERT_EQ(examples.size(), 10u);
    for (std::size_t i = 0; i < triples.size(); ++i) {
        const auto issues = extract_issues(issue, ten_reviews()[i]);
        EXPECT_EQ(examples[i].prompt_text, advice_prompt(issues));
        EXPECT_EQ(examples[i].domain_tag, ten_reviews()[i].domain_tag);
    }
    generate_synthetic_triples(issue, advice, ten_reviews(), dir / "t2.jsonl");
    EXPECT_EQ(slurp(dir / "t2.jsonl"), text);
}

TEST(Synth, NoNegativesGivesEmptyFileAndWarning) {
    auto dir = testing::scratch_dir("synth_empty");
    MockIssueBackend issue;
    MockAdviceBackend advice;
    auto reviews = ten_reviews();
    for (auto& r : reviews) r.sentiment = Sentiment::positive;
    auto res = generate_synthetic_triples(issue, advice, reviews, dir / "t.jsonl");
    EXPECT_EQ(res.written, 0u);
    EXPECT_TRUE(std::filesystem::exists(dir / "t.jsonl"));
    EXPECT_EQ(std::filesystem::file_size(dir / "t.jsonl"), 0u);
    EXPECT_FALSE(res.warnings.empty());
}

TEST(Synth, UnwritablePath) {
    auto dir = testing::scratch_dir("synth_unwritable");
    std::ofstream(dir / "file") << "x";
    MockIssueBackend issue;
    MockAdviceBackend advice;
    EXPECT_THROW(generate_synthetic_triples(issue, advice, ten_reviews(), dir / "file" / "t.jsonl"), IoError);
}

TEST(Triples, BadRecordNamesLine) {
    auto dir = testing::scratch_dir("triples_bad");
    std::ofstream(dir / "t.jsonl") << "\n{\"review_id\":\"a\"}\n";
    try {
        read_triples(dir / "t.jsonl");
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos);
    }
}

// -- remote --

class RemoteTest : public ::testing::Test {
protected:
    void SetUp() override {
        server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
            const int n = ++hits_;
            last_body_ = req.body;
            last_auth_ = req.get_header_value("Authorization");
            if (n <= fail_first_) {
                res.status = fail_status_;
                return;
            }
            nlohmann::json reply{{"choices", {{{"message", {{"role", "assistant"}, {"content", "FIX: ok"}}}}}}};
            res.set_content(reply.dump(), "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    void TearDown() override {
        server_.stop();
        thread_.join();
    }
    RemoteChatBackend backend() {
        RemoteConfig c;
        c.endpoint = "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions";
        c.api_key = "secret";
        c.model = "m";
        c.timeout = std::chrono::seconds(5);
        return RemoteChatBackend(c, [this](std::chrono::milliseconds d) { sleeps_.push_back(d.count()); });
    }

    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
    std::atomic<int> hits_{0};
    int fail_first_ = 0;
    int fail_status_ = 500;
    std::string last_body_, last_auth_;
    std::vector<long long> sleeps_;
};

TEST_F(RemoteTest, SendsChatCompletionRequest) {
    auto b = backend();
    EXPECT_EQ(b.complete({{"system", "s"}, {"user", "u"}}), "FIX: ok");
    const auto body = nlohmann::json::parse(last_body_);
    EXPECT_EQ(body["model"], "m");
    EXPECT_EQ(body["messages"][1]["content"], "u");
    EXPECT_EQ(last_auth_, "Bearer secret");
    EXPECT_TRUE(sleeps_.empty());
}

TEST_F(RemoteTest, RetriesWithBackoff) {
    fail_first_ = 2;
    auto b = backend();
    EXPECT_EQ(b.complete({{"user", "u"}}), "FIX: ok");
    EXPECT_EQ(hits_, 3);
    EXPECT_EQ(sleeps_, (std::vector<long long>{1000, 2000}));
}

TEST_F(RemoteTest, GivesUpAfterThreeRetries) {
    fail_first_ = 100;
    auto b = backend();
    try {
        b.complete({{"user", "u"}});
        FAIL();
    } catch (const BackendError& e) {
        EXPECT_EQ(e.attempts(), 4);
        EXPECT_TRUE(e.retryable());
    }
    EXPECT_EQ(hits_, 4);
    EXPECT_EQ(sleeps_, (std::vector<long long>{1000, 2000, 4000}));
}

TEST_F(RemoteTest, ClientErrorIsNotRetried) {
    fail_first_ = 100;
    fail_status_ = 401;
    auto b = backend();
    try {
        b.complete({{"user", "u"}});
        FAIL();
    } catch (const BackendError& e) {
        EXPECT_EQ(e.attempts(), 1);
        EXPECT_FALSE(e.retryable());
    }
    EXPECT_EQ(hits_, 1);
}

TEST(Remote, TransportFailureCountsAttempts) {
    RemoteConfig c;
    c.endpoint = "http://127.0.0.1:1/v1/chat/completions";
    c.timeout = std::chrono::milliseconds(200);
    std::vector<long long> sleeps;
    RemoteChatBackend b(c, [&](std::chrono::milliseconds d) { sleeps.push_back(d.count()); });
    try {
        b.complete({{"user", "u"}});
        FAIL();
    } catch (const BackendError& e) {
        EXPECT_EQ(e.attempts(), 4);
    }
    EXPECT_EQ(sleeps.size(), 3u);
}

TEST(Remote, ConfigFromEnvironment) {
    unsetenv("ADVICE_LLM_ENDPOINT");
    EXPECT_THROW(RemoteConfig::from_env(), ConfigError);
    setenv("ADVICE_LLM_ENDPOINT", "http://localhost:9/x", 1);
    setenv("ADVICE_LLM_MODEL", "gpt", 1);
    auto c = RemoteConfig::from_env();
    EXPECT_EQ(c.model, "gpt");
    EXPECT_EQ(c.timeout, std::chrono::seconds(60));
    EXPECT_EQ(c.max_retries, 3);
    unsetenv("ADVICE_LLM_ENDPOINT");
    unsetenv("ADVICE_LLM_MODEL");
    RemoteConfig bad;
    bad.endpoint = "localhost:80";
    EXPECT_THROW(RemoteChatBackend{bad}, ConfigError);
}

}  // namespace
}  // namespace mole
