// Copyright (c) 2026, The mole-advice Authors
// SPDX-License-Identifier: Apache-2.0

#include "mole/pipeline.hpp"

#include <atomic>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <regex>
#include <sstream>
#include <thread>

#include "mole/errors.hpp"

namespace mole {

namespace {

using nlohmann::json;

std::ofstream open_for_write(const std::filesystem::path& out) {
    std::error_code ec;
    if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path(), ec);
    std::ofstream f(out, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + out.string());
    return f;
}

std::vector<std::string> split_lines(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        out.push_back(line);
    }
    return out;
}

bool blank(const std::string& s) { return s.find_first_not_of(" \t") == std::string::npos; }

void check_threshold(int threshold) {
    if (threshold < 1 || threshold > 4) {
        throw ConfigError("negative threshold must be in [1, 4], got " + std::to_string(threshold));
    }
}

const char* kIssueInstructions =
    "You read one customer review and list the concrete problems it reports.\n"
    "Answer with one line per problem, exactly in the form\n"
    "ISSUE: <short description> | THEME: <one or two word theme>\n"
    "and nothing else.";

const char* kAdviceInstructions =
    "You are an operations consultant. For the issues listed by the user, write short, actionable business "
    "fixes.\n"
    "Answer with one line per fix, exactly in the form\n"
    "FIX: <imperative sentence>\n"
    "and nothing else.";

const char* kCorrection =
    "Your previous answer did not follow the required line format. Answer the same request again using only "
    "the required lines.";

template <typename Parsed, typename Parser>
Parsed ask_with_retry(const ModelBackend& backend, std::vector<ChatMessage> messages, Parser parse,
                      const std::string& what) {
    std::string raw = backend.complete(messages);
    if (auto parsed = parse(raw)) return *parsed;
    const std::string original = last_user_message(messages);
    messages.push_back({"assistant", raw});
    messages.push_back({"system", kCorrection});
    messages.push_back({"user", original});
    raw = backend.complete(messages);
    if (auto parsed = parse(raw)) return *parsed;
    throw FormatError(what + ": response does not follow the line grammar after one retry", raw);
}

std::string iso8601(std::time_t t) {
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace

// -- ingestion --

IngestResult parse_reviews(std::istream& in, int threshold) {
    check_threshold(threshold);
    IngestResult result;
    std::size_t lineno = 0;
    for (std::string line; std::getline(in, line);) {
        ++lineno;
        if (blank(line)) continue;
        auto skip = [&](std::string reason) { result.skipped.push_back({lineno, std::move(reason)}); };
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
            skip("not a JSON object");
            continue;
        }
        auto string_field = [&](const char* key) -> const std::string* {
            auto it = j.find(key);
            if (it == j.end() || !it->is_string()) return nullptr;
            return it->get_ptr<const std::string*>();
        };
        const auto* id = string_field("review_id");
        const auto* text = string_field("text");
        const auto* domain = string_field("domain");
        if (!id || id->empty()) {
            skip("missing or empty \"review_id\"");
            continue;
        }
        if (!text || text->empty()) {
            skip("missing or empty \"text\"");
            continue;
        }
        auto stars = j.find("stars");
        if (stars == j.end() || !stars->is_number_integer()) {
            skip("missing or non-integer \"stars\"");
            continue;
        }
        const auto s = stars->get<long long>();
        if (s < 1 || s > 5) {
            skip("\"stars\" out of range [1, 5]");
            continue;
        }
        if (!domain) {
            skip("missing \"domain\"");
            continue;
        }
        Review r;
        r.review_id = *id;
        r.text = *text;
        r.stars = static_cast<int>(s);
        r.domain_tag = *domain;
        r.sentiment = r.stars <= threshold ? Sentiment::negative : Sentiment::positive;
        result.reviews.push_back(std::move(r));
    }
    return result;
}

IngestResult ingest_reviews(const std::filesystem::path& source, int threshold) {
    check_threshold(threshold);
    std::ifstream f(source, std::ios::binary);
    if (!f) throw IoError("cannot read " + source.string());
    auto result = parse_reviews(f, threshold);
    if (f.bad()) throw IoError("read error on " + source.string());
    if (result.reviews.empty()) {
        throw EmptyInputError("no valid review records in " + source.string() + " (" +
                              std::to_string(result.skipped.size()) + " malformed lines)");
    }
    return result;
}

json review_to_json(const Review& r) {
    return {{"review_id", r.review_id}, {"text", r.text}, {"stars", r.stars}, {"domain", r.domain_tag}};
}

void write_reviews(const std::filesystem::path& out, const std::vector<Review>& reviews) {
    auto f = open_for_write(out);
    for (const auto& r : reviews) f << review_to_json(r).dump() << '\n';
    if (!f) throw IoError("write failed on " + out.string());
}

// -- grammars --

std::optional<std::vector<Issue>> parse_issue_lines(const std::string& response) {
    static const std::regex re(R"(^\s*ISSUE:\s*(\S.*?)\s*\|\s*THEME:\s*(\S.*?)\s*$)");
    std::vector<Issue> out;
    for (const auto& line : split_lines(response)) {
        if (blank(line)) continue;
        std::smatch m;
        if (!std::regex_match(line, m, re)) return std::nullopt;
        out.push_back({m[1].str(), m[2].str()});
    }
    if (out.empty()) return std::nullopt;
    return out;
}

std::optional<std::vector<std::string>> parse_fix_lines(const std::string& response) {
    static const std::regex re(R"(^\s*FIX:\s*(\S.*?)\s*$)");
    std::vector<std::string> out;
    for (const auto& line : split_lines(response)) {
        if (blank(line)) continue;
        std::smatch m;
        if (!std::regex_match(line, m, re)) return std::nullopt;
        out.push_back(m[1].str());
    }
    if (out.empty()) return std::nullopt;
    return out;
}

std::string advice_prompt(const IssueRecord& issues) {
    std::string s = "ISSUES:\n";
    for (const auto& i : issues.issues) s += "ISSUE: " + i.issue_text + " | THEME: " + i.theme + "\n";
    return s + "FIXES:\n";
}

std::string advice_completion(const std::vector<std::string>& fixes) {
    std::string s;
    for (const auto& f : fixes) s += "FIX: " + f + "\n";
    return s;
}

std::vector<ChatMessage> issue_messages(const Review& review) {
    return {{"system", kIssueInstructions}, {"user", review.text}};
}

std::vector<ChatMessage> advice_messages(const IssueRecord& issues) {
    return {{"system", kAdviceInstructions}, {"user", advice_prompt(issues)}};
}

// -- agents --

std::string provenance_timestamp(const ModelBackend& backend, const std::optional<std::string>& override) {
    if (override) return *override;
    if (const char* sde = std::getenv("SOURCE_DATE_EPOCH"); sde && *sde) {
        char* end = nullptr;
        const long long v = std::strtoll(sde, &end, 10);
        if (*end != '\0' || v < 0) throw ConfigError(std::string("SOURCE_DATE_EPOCH is not an integer: ") + sde);
        return iso8601(static_cast<std::time_t>(v));
    }
    if (backend.deterministic()) return iso8601(0);
    return iso8601(std::time(nullptr));
}

IssueRecord extract_issues(const ModelBackend& backend, const Review& review) {
    if (review.sentiment != Sentiment::negative) {
        throw ContractError("extract_issues: review " + review.review_id + " is not negative");
    }
    IssueRecord rec;
    rec.review_id = review.review_id;
    rec.issues = ask_with_retry<std::vector<Issue>>(backend, issue_messages(review), parse_issue_lines,
                                                    "issue agent on review " + review.review_id);
    return rec;
}

AdviceRecord generate_advice(const ModelBackend& backend, const IssueRecord& issues,
                             const std::optional<std::string>& timestamp) {
    if (issues.issues.empty()) throw ContractError("generate_advice: no issues for review " + issues.review_id);
    AdviceRecord rec;
    rec.review_id = issues.review_id;
    rec.fixes = ask_with_retry<std::vector<std::string>>(backend, advice_messages(issues), parse_fix_lines,
                                                         "advice agent on review " + issues.review_id);
    rec.provenance = {backend.backend_id(), backend.model_name(), provenance_timestamp(backend, timestamp)};
    return rec;
}

void parallel_for(std::size_t n, int max_in_flight, const std::function<void(std::size_t)>& task) {
    const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, max_in_flight)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) task(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex mu;
    std::vector<std::thread> threads;
    threads.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        threads.emplace_back([&] {
            for (std::size_t i; (i = next.fetch_add(1)) < n;) {
                try {
                    task(i);
                } catch (...) {
                    std::lock_guard lock(mu);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : threads) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

PipelineResult run_pipeline(const ModelBackend& issue_backend, const ModelBackend& advice_backend,
                            const std::vector<Review>& reviews, const PipelineOptions& options) {
    if (options.max_in_flight < 1) throw ConfigError("pipeline: max_in_flight must be >= 1");
    std::vector<const Review*> negatives;
    PipelineResult result;
    for (const auto& r : reviews) {
        if (r.sentiment == Sentiment::negative) {
            negatives.push_back(&r);
        } else {
            ++result.skipped_positive;
        }
    }
    struct Slot {
        std::optional<Triple> triple;
        std::optional<RunFailure> failure;
    };
    std::vector<Slot> slots(negatives.size());
    parallel_for(negatives.size(), options.max_in_flight, [&](std::size_t i) {
        const Review& review = *negatives[i];
        std::string stage = "issue";
        auto fail = [&](const char* cls, const std::string& msg) {
            slots[i].failure = RunFailure{review.review_id, stage, cls, msg};
        };
        try {
            auto issues = extract_issues(issue_backend, review);
            stage = "advice";
            auto advice = generate_advice(advice_backend, issues, options.timestamp);
            slots[i].triple = Triple{review, std::move(issues), std::move(advice)};
        } catch (const BackendError& e) {
            fail("backend", e.what());
        } catch (const FormatError& e) {
            fail("format", e.what());
        } catch (const Error& e) {
            fail("validation", e.what());
        }
    });
    for (auto& s : slots) {
        if (s.triple) result.triples.push_back(std::move(*s.triple));
        if (s.failure) result.failures.push_back(std::move(*s.failure));
    }
    if (!negatives.empty() && result.triples.empty()) {
        std::map<std::string, int> classes;
        for (const auto& f : result.failures) ++classes[f.stage + "/" + f.error_class];
        std::string summary;
        for (const auto& [cls, count] : classes) {
            summary += (summary.empty() ? "" : ", ") + cls + "=" + std::to_string(count);
        }
        throw BatchError("pipeline: all " + std::to_string(negatives.size()) + " negative reviews failed (" +
                         summary + "); first: " + result.failures.front().message);
    }
    return result;
}

// -- triples --

json triple_to_json(const Triple& t) {
    json issues = json::array();
    for (const auto& i : t.issues.issues) issues.push_back({{"issue", i.issue_text}, {"theme", i.theme}});
    return {{"review_id", t.review.review_id},
            {"domain", t.review.domain_tag},
            {"review_text", t.review.text},
            {"stars", t.review.stars},
            {"issues", issues},
            {"fixes", t.advice.fixes},
            {"provenance",
             {{"backend_id", t.advice.provenance.backend_id},
              {"model_name", t.advice.provenance.model_name},
              {"timestamp", t.advice.provenance.timestamp}}}};
}

Triple triple_from_json(const json& j) {
    Triple t;
    t.review.review_id = j.at("review_id").get<std::string>();
    t.review.domain_tag = j.at("domain").get<std::string>();
    t.review.text = j.at("review_text").get<std::string>();
    t.review.stars = j.value("stars", 1);
    t.review.sentiment = Sentiment::negative;
    t.issues.review_id = t.review.review_id;
    for (const auto& i : j.at("issues")) {
        t.issues.issues.push_back({i.at("issue").get<std::string>(), i.at("theme").get<std::string>()});
    }
    t.advice.review_id = t.review.review_id;
    t.advice.fixes = j.at("fixes").get<std::vector<std::string>>();
    if (auto p = j.find("provenance"); p != j.end()) {
        t.advice.provenance = {p->value("backend_id", ""), p->value("model_name", ""), p->value("timestamp", "")};
    }
    if (t.issues.issues.empty()) throw ValidationError("triple " + t.review.review_id + " has no issues");
    if (t.advice.fixes.empty()) throw ValidationError("triple " + t.review.review_id + " has no fixes");
    return t;
}

void write_triples(const std::filesystem::path& out, const std::vector<Triple>& triples) {
    auto f = open_for_write(out);
    for (const auto& t : triples) f << triple_to_json(t).dump() << '\n';
    if (!f) throw IoError("write failed on " + out.string());
}

std::vector<Triple> read_triples(const std::filesystem::path& source) {
    std::ifstream f(source, std::ios::binary);
    if (!f) throw IoError("cannot read " + source.string());
    std::vector<Triple> out;
    std::size_t lineno = 0;
    for (std::string line; std::getline(f, line);) {
        ++lineno;
        if (blank(line)) continue;
        try {
            out.push_back(triple_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw ValidationError(source.string() + ":" + std::to_string(lineno) + ": " + e.what());
        } catch (const ValidationError& e) {
            throw ValidationError(source.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

TrainExample to_train_example(const Triple& t) {
    return {advice_prompt(t.issues), advice_completion(t.advice.fixes), t.review.domain_tag};
}

std::vector<TrainExample> to_train_examples(const std::vector<Triple>& triples) {
    std::vector<TrainExample> out;
    out.reserve(triples.size());
    for (const auto& t : triples) out.push_back(to_train_example(t));
    return out;
}

SynthResult generate_synthetic_triples(const ModelBackend& issue_backend, const ModelBackend& advice_backend,
                                       const std::vector<Review>& reviews, const std::filesystem::path& out,
                                       const PipelineOptions& options) {
    SynthResult result;
    result.detail = run_pipeline(issue_backend, advice_backend, reviews, options);
    write_triples(out, result.detail.triples);
    result.written = result.detail.triples.size();
    if (result.written == 0) result.warnings.push_back("no negative reviews; wrote an empty triples file");
    for (const auto& f : result.detail.failures) {
        result.warnings.push_back("review " + f.review_id + " failed at " + f.stage + ": " + f.message);
    }
    return result;
}

}  // namespace mole
