// Copyright (c) 2026, The mole-advice Authors
// SPDX-License-Identifier: Apache-2.0
//
// Eight-dimension rubric: Likert judgements rescaled to 0-100, composite
// means and grouped reports.

#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mole/backends.hpp"
#include "mole/pipeline.hpp"

namespace mole {

namespace rubric {

inline constexpr std::size_t kNumDimensions = 8;
inline constexpr std::array<std::string_view, kNumDimensions> kDimensions{
    "actionability", "specificity", "feasibility", "expected_impact",
    "novelty",       "non_redundancy", "bias",     "reading_clarity",
};

/// Index of a dimension name, or nullopt.
std::optional<std::size_t> dimension_index(std::string_view name);

/// 100·(x−1)/4 for x in {1..5}; ValidationError otherwise.
double rescale_likert(int x);

/// Mean of exactly eight values in [0, 100].
double composite_score(std::span<const double> scaled);

/// Rounds half away from zero at `decimals` places.
double round_half_away(double x, int decimals = 1);
/// Fixed one-decimal rendering after round_half_away.
std::string format_1dp(double x);

/// Versioned judge prompt (embedded at build time) and its identifier.
std::string_view judge_prompt_template();
std::string_view judge_prompt_version();

}  // namespace rubric

struct RubricScore {
    std::string review_id;
    std::string system;
    std::string domain;
    std::array<int, rubric::kNumDimensions> likert{};
    std::array<double, rubric::kNumDimensions> scaled{};
    double composite = 0.0;

    static RubricScore from_likert(std::string review_id, std::string system, std::string domain,
                                   const std::array<int, rubric::kNumDimensions>& likert);
};

/// Scores JSONL record. from_json recomputes scaled and composite from the
/// Likert values and rejects records whose stored values disagree.
nlohmann::json score_to_json(const RubricScore& s);
RubricScore score_from_json(const nlohmann::json& j);
void write_scores(const std::filesystem::path& out, const std::vector<RubricScore>& scores);
std::vector<RubricScore> read_scores(const std::filesystem::path& source);

/// Exactly one "DIM: <name> SCORE: <1-5>" line per dimension; other lines are
/// ignored. nullopt on a missing, duplicate or out-of-range entry.
std::optional<std::array<int, rubric::kNumDimensions>> parse_judge_lines(const std::string& response);

std::vector<ChatMessage> judge_messages(const AdviceRecord& advice, const Review& review);

/// One corrective retry on grammar failure, then FormatError.
RubricScore judge(const ModelBackend& backend, const AdviceRecord& advice, const Review& review,
                  const std::string& system = "");

struct JudgeRun {
    std::vector<RubricScore> scores;  // input order
    std::vector<RunFailure> failures;
};

/// Scores every triple with at most `max_in_flight` concurrent judge calls.
/// Throws BatchError when all fail.
JudgeRun judge_triples(const ModelBackend& backend, const std::vector<Triple>& triples, const std::string& system,
                       int max_in_flight = 4);

struct ReportRow {
    std::string system;
    std::string domain;
    std::size_t count = 0;
    std::array<double, rubric::kNumDimensions> means{};
    double composite = 0.0;  // mean of the unrounded dimension means
};

struct ScoreReport {
    std::vector<ReportRow> rows;  // first-appearance order of (system, domain)
    std::vector<std::string> warnings;
};

/// Throws EmptyInputError on an empty input.
ScoreReport aggregate_report(std::span<const RubricScore> scores);

std::string render_table(const ScoreReport& report);
std::string render_csv(const ScoreReport& report);

}  // namespace mole
