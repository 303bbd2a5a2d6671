// Copyright (c) 2026, The mole-advice Authors
// SPDX-License-Identifier: Apache-2.0
//
// Review ingestion and the two-agent composition: an issue agent extracts
// issue/theme pairs from a negative review, an advice agent turns them into
// fixes.

#pragma once

#include <cstddef>
#include <filesystem>
#include <istream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mole/backends.hpp"
#include "mole/training.hpp"

namespace mole {

enum class Sentiment { positive, negative };

struct Review {
    std::string review_id;
    std::string text;
    int stars = 0;
    std::string domain_tag;
    Sentiment sentiment = Sentiment::positive;
};

struct Issue {
    std::string issue_text;
    std::string theme;
    bool operator==(const Issue&) const = default;
};

struct IssueRecord {
    std::string review_id;
    std::vector<Issue> issues;
};

struct Provenance {
    std::string backend_id;
    std::string model_name;
    std::string timestamp;
};

struct AdviceRecord {
    std::string review_id;
    std::vector<std::string> fixes;
    Provenance provenance;
};

struct Triple {
    Review review;
    IssueRecord issues;
    AdviceRecord advice;
};

// -- ingestion --

constexpr int kDefaultNegativeThreshold = 2;

struct SkippedLine {
    std::size_t line = 0;  // 1-based
    std::string reason;
};

struct IngestResult {
    std::vector<Review> reviews;
    std::vector<SkippedLine> skipped;
};

/// Reviews JSONL: {"review_id", "text", "stars", "domain"} per line. A review
/// is negative iff stars <= threshold. Malformed lines are skipped and
/// reported; blank lines are ignored.
IngestResult parse_reviews(std::istream& in, int threshold = kDefaultNegativeThreshold);
/// Throws IoError when unreadable and EmptyInputError when no line is valid.
IngestResult ingest_reviews(const std::filesystem::path& source, int threshold = kDefaultNegativeThreshold);

nlohmann::json review_to_json(const Review& r);
void write_reviews(const std::filesystem::path& out, const std::vector<Review>& reviews);

// -- line grammars and prompt templates --

/// Every non-blank line must read "ISSUE: <text> | THEME: <text>"; at least one.
std::optional<std::vector<Issue>> parse_issue_lines(const std::string& response);
/// Every non-blank line must read "FIX: <text>"; at least one.
std::optional<std::vector<std::string>> parse_fix_lines(const std::string& response);

/// Advice prompt in the training serialization: "ISSUES:\n" + issue lines + "FIXES:\n".
std::string advice_prompt(const IssueRecord& issues);
/// Matching completion: one "FIX: <text>\n" line per fix.
std::string advice_completion(const std::vector<std::string>& fixes);

std::vector<ChatMessage> issue_messages(const Review& review);
std::vector<ChatMessage> advice_messages(const IssueRecord& issues);

// -- agents --

/// Timestamp recorded in provenance: `override` if given, else
/// SOURCE_DATE_EPOCH, else the Unix epoch for deterministic backends and the
/// current UTC time otherwise. ISO-8601, second resolution.
std::string provenance_timestamp(const ModelBackend& backend, const std::optional<std::string>& override = {});

/// Requires a negative review. One corrective retry on grammar failure.
IssueRecord extract_issues(const ModelBackend& backend, const Review& review);

/// Requires at least one issue. One corrective retry on grammar failure.
AdviceRecord generate_advice(const ModelBackend& backend, const IssueRecord& issues,
                             const std::optional<std::string>& timestamp = {});

struct RunFailure {
    std::string review_id;
    std::string stage;        // "issue" | "advice"
    std::string error_class;  // "backend" | "format" | "validation"
    std::string message;
};

struct PipelineOptions {
    int max_in_flight = 4;
    std::optional<std::string> timestamp;
};

struct PipelineResult {
    std::vector<Triple> triples;  // input order
    std::vector<RunFailure> failures;
    std::size_t skipped_positive = 0;
};

/// Processes every negative review; positives never reach the issue agent.
/// Throws BatchError when every negative review failed.
PipelineResult run_pipeline(const ModelBackend& issue_backend, const ModelBackend& advice_backend,
                            const std::vector<Review>& reviews, const PipelineOptions& options = {});

// -- triples --

nlohmann::json triple_to_json(const Triple& t);
Triple triple_from_json(const nlohmann::json& j);
void write_triples(const std::filesystem::path& out, const std::vector<Triple>& triples);
/// Throws IoError when unreadable, ValidationError naming the line on bad records.
std::vector<Triple> read_triples(const std::filesystem::path& source);

TrainExample to_train_example(const Triple& t);
std::vector<TrainExample> to_train_examples(const std::vector<Triple>& triples);

struct SynthResult {
    std::size_t written = 0;
    PipelineResult detail;
    std::vector<std::string> warnings;
};

/// run_pipeline, then writes the triples JSONL (an empty file when no review
/// is negative).
SynthResult generate_synthetic_triples(const ModelBackend& issue_backend, const ModelBackend& advice_backend,
                                       const std::vector<Review>& reviews, const std::filesystem::path& out,
                                       const PipelineOptions& options = {});

/// Runs `task(i)` for i in [0, n) on at most `max_in_flight` threads.
void parallel_for(std::size_t n, int max_in_flight, const std::function<void(std::size_t)>& task);

}  // namespace mole
