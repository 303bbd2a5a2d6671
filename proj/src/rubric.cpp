// Copyright (c) 2026, The mole-advice Authors
// SPDX-License-Identifier: Apache-2.0

#include "mole/rubric.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>

#include "mole/errors.hpp"

namespace mole {

namespace rubric {

namespace {
#include "judge_prompt.inc"
}  // namespace

std::optional<std::size_t> dimension_index(std::string_view name) {
    for (std::size_t i = 0; i < kNumDimensions; ++i) {
        if (kDimensions[i] == name) return i;
    }
    return std::nullopt;
}

double rescale_likert(int x) {
    if (x < 1 || x > 5) throw ValidationError("Likert rating must be in [1, 5], got " + std::to_string(x));
    return 100.0 * (x - 1) / 4.0;
}

double composite_score(std::span<const double> scaled) {
    if (scaled.size() != kNumDimensions) {
        throw ValidationError("composite needs exactly 8 scaled values, got " + std::to_string(scaled.size()));
    }
    double sum = 0.0;
    for (double v : scaled) {
        if (!(v >= 0.0 && v <= 100.0)) throw ValidationError("scaled value out of [0, 100]: " + std::to_string(v));
        sum += v;
    }
    return sum / static_cast<double>(kNumDimensions);
}

double round_half_away(double x, int decimals) {
    const double f = std::pow(10.0, decimals);
    return std::round(x * f) / f;
}

std::string format_1dp(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.1f", round_half_away(x, 1));
    return buf;
}

std::string_view judge_prompt_template() { return kJudgePrompt; }
std::string_view judge_prompt_version() { return "judge_prompt_v1"; }

}  // namespace rubric

namespace {

using nlohmann::json;

std::string replace_all(std::string s, const std::string& from, const std::string& to) {
    for (std::size_t pos = 0; (pos = s.find(from, pos)) != std::string::npos; pos += to.size()) {
        s.replace(pos, from.size(), to);
    }
    return s;
}

}  // namespace

RubricScore RubricScore::from_likert(std::string review_id, std::string system, std::string domain,
                                     const std::array<int, rubric::kNumDimensions>& likert) {
    RubricScore s;
    s.review_id = std::move(review_id);
    s.system = std::move(system);
    s.domain = std::move(domain);
    s.likert = likert;
    for (std::size_t i = 0; i < rubric::kNumDimensions; ++i) s.scaled[i] = rubric::rescale_likert(likert[i]);
    s.composite = rubric::composite_score(s.scaled);
    return s;
}

json score_to_json(const RubricScore& s) {
    json likert = json::object();
    json scaled = json::object();
    for (std::size_t i = 0; i < rubric::kNumDimensions; ++i) {
        const std::string key(rubric::kDimensions[i]);
        likert[key] = s.likert[i];
        scaled[key] = s.scaled[i];
    }
    return {{"review_id", s.review_id}, {"system", s.system},   {"domain", s.domain},
            {"likert", likert},         {"scaled", scaled},     {"composite", s.composite}};
}

RubricScore score_from_json(const json& j) {
    const auto& likert = j.at("likert");
    if (!likert.is_object() || likert.size() != rubric::kNumDimensions) {
        throw ValidationError("score record must carry exactly 8 Likert dimensions");
    }
    std::array<int, rubric::kNumDimensions> values{};
    for (std::size_t i = 0; i < rubric::kNumDimensions; ++i) {
        const std::string key(rubric::kDimensions[i]);
        if (!likert.contains(key)) throw ValidationError("score record is missing dimension " + key);
        values[i] = likert.at(key).get<int>();
    }
    auto s = RubricScore::from_likert(j.at("review_id").get<std::string>(), j.value("system", ""),
                                      j.value("domain", ""), values);
    if (auto it = j.find("scaled"); it != j.end()) {
        for (std::size_t i = 0; i < rubric::kNumDimensions; ++i) {
            const std::string key(rubric::kDimensions[i]);
            if (!it->contains(key) || it->at(key).get<double>() != s.scaled[i]) {
                throw ValidationError("score record " + s.review_id + ": scaled." + key + " disagrees with Likert");
            }
        }
    }
    if (auto it = j.find("composite"); it != j.end() && std::abs(it->get<double>() - s.composite) > 1e-9) {
        throw ValidationError("score record " + s.review_id + ": composite disagrees with scaled values");
    }
    return s;
}

void write_scores(const std::filesystem::path& out, const std::vector<RubricScore>& scores) {
    std::error_code ec;
    if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path(), ec);
    std::ofstream f(out, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + out.string());
    for (const auto& s : scores) f << score_to_json(s).dump() << '\n';
    if (!f) throw IoError("write failed on " + out.string());
}

std::vector<RubricScore> read_scores(const std::filesystem::path& source) {
    std::ifstream f(source, std::ios::binary);
    if (!f) throw IoError("cannot read " + source.string());
    std::vector<RubricScore> out;
    std::size_t lineno = 0;
    for (std::string line; std::getline(f, line);) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(score_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw ValidationError(source.string() + ":" + std::to_string(lineno) + ": " + e.what());
        } catch (const ValidationError& e) {
            throw ValidationError(source.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

std::optional<std::array<int, rubric::kNumDimensions>> parse_judge_lines(const std::string& response) {
    static const std::regex re(R"(^\s*DIM:\s*([a-z_]+)\s+SCORE:\s*(\d+)\s*$)");
    std::array<int, rubric::kNumDimensions> out{};
    std::array<bool, rubric::kNumDimensions> seen{};
    std::istringstream in(response);
    for (std::string line; std::getline(in, line);) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::smatch m;
        if (!std::regex_match(line, m, re)) continue;
        const auto idx = rubric::dimension_index(m[1].str());
        if (!idx || seen[*idx] || m[2].length() > 1) return std::nullopt;
        const int v = std::stoi(m[2].str());
        if (v < 1 || v > 5) return std::nullopt;
        seen[*idx] = true;
        out[*idx] = v;
    }
    if (!std::all_of(seen.begin(), seen.end(), [](bool b) { return b; })) return std::nullopt;
    return out;
}

std::vector<ChatMessage> judge_messages(const AdviceRecord& advice, const Review& review) {
    std::string prompt(rubric::judge_prompt_template());
    std::string fixes = advice_completion(advice.fixes);
    if (!fixes.empty() && fixes.back() == '\n') fixes.pop_back();
    prompt = replace_all(prompt, "{{REVIEW}}", review.text);
    prompt = replace_all(prompt, "{{FIXES}}", fixes);
    return {{"user", prompt}};
}

RubricScore judge(const ModelBackend& backend, const AdviceRecord& advice, const Review& review,
                  const std::string& system) {
    if (advice.fixes.empty()) throw ContractError("judge: advice for review " + review.review_id + " is empty");
    auto messages = judge_messages(advice, review);
    std::string raw = backend.complete(messages);
    auto parsed = parse_judge_lines(raw);
    if (!parsed) {
        const std::string original = messages.back().content;
        messages.push_back({"assistant", raw});
        messages.push_back({"system",
                            "Your previous answer did not contain exactly one valid line per dimension. Answer "
                            "again with the eight required lines only."});
        messages.push_back({"user", original});
        raw = backend.complete(messages);
        parsed = parse_judge_lines(raw);
        if (!parsed) throw FormatError("judge on review " + review.review_id + ": missing or duplicate dimension", raw);
    }
    return RubricScore::from_likert(review.review_id, system, review.domain_tag, *parsed);
}

JudgeRun judge_triples(const ModelBackend& backend, const std::vector<Triple>& triples, const std::string& system,
                       int max_in_flight) {
    if (max_in_flight < 1) throw ConfigError("judge: max_in_flight must be >= 1");
    std::vector<std::optional<RubricScore>> scores(triples.size());
    std::vector<std::optional<RunFailure>> failures(triples.size());
    parallel_for(triples.size(), max_in_flight, [&](std::size_t i) {
        const auto& t = triples[i];
        auto fail = [&](const char* cls, const std::string& msg) {
            failures[i] = RunFailure{t.review.review_id, "judge", cls, msg};
        };
        try {
            scores[i] = judge(backend, t.advice, t.review, system);
        } catch (const BackendError& e) {
            fail("backend", e.what());
        } catch (const FormatError& e) {
            fail("format", e.what());
        } catch (const Error& e) {
            fail("validation", e.what());
        }
    });
    JudgeRun run;
    for (std::size_t i = 0; i < triples.size(); ++i) {
        if (scores[i]) run.scores.push_back(std::move(*scores[i]));
        if (failures[i]) run.failures.push_back(std::move(*failures[i]));
    }
    if (!triples.empty() && run.scores.empty()) {
        throw BatchError("judge: all " + std::to_string(triples.size()) +
                         " items failed; first: " + run.failures.front().message);
    }
    return run;
}

ScoreReport aggregate_report(std::span<const RubricScore> scores) {
    if (scores.empty()) throw EmptyInputError("report: no scores");
    ScoreReport report;
    std::map<std::pair<std::string, std::string>, std::size_t> index;
    std::vector<std::array<double, rubric::kNumDimensions>> sums;
    for (const auto& s : scores) {
        auto key = std::make_pair(s.system, s.domain);
        auto [it, inserted] = index.emplace(key, report.rows.size());
        if (inserted) {
            report.rows.push_back({s.system, s.domain, 0, {}, 0.0});
            sums.emplace_back();
        }
        auto& row = report.rows[it->second];
        ++row.count;
        for (std::size_t d = 0; d < rubric::kNumDimensions; ++d) sums[it->second][d] += s.scaled[d];
    }
    for (std::size_t r = 0; r < report.rows.size(); ++r) {
        auto& row = report.rows[r];
        for (std::size_t d = 0; d < rubric::kNumDimensions; ++d) {
            row.means[d] = sums[r][d] / static_cast<double>(row.count);
        }
        row.composite = rubric::composite_score(row.means);
    }
    return report;
}

std::string render_table(const ScoreReport& report) {
    std::vector<std::vector<std::string>> cells;
    std::vector<std::string> header{"system", "domain", "n"};
    for (auto d : rubric::kDimensions) header.emplace_back(d);
    header.emplace_back("composite");
    cells.push_back(header);
    for (const auto& row : report.rows) {
        std::vector<std::string> line{row.system, row.domain, std::to_string(row.count)};
        for (double m : row.means) line.push_back(rubric::format_1dp(m));
        line.push_back(rubric::format_1dp(row.composite));
        cells.push_back(std::move(line));
    }
    std::vector<std::size_t> width(header.size(), 0);
    for (const auto& line : cells)
        for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());
    std::string out;
    for (const auto& line : cells) {
        for (std::size_t c = 0; c < line.size(); ++c) {
            const std::string pad(width[c] - line[c].size(), ' ');
            out += c < 2 ? line[c] + pad : pad + line[c];
            out += c + 1 < line.size() ? "  " : "\n";
        }
    }
    return out;
}

std::string render_csv(const ScoreReport& report) {
    auto quote = [](const std::string& s) {
        if (s.find_first_of(",\"\n") == std::string::npos) return s;
        return "\"" + replace_all(s, "\"", "\"\"") + "\"";
    };
    std::string out = "system,domain,n";
    for (auto d : rubric::kDimensions) out += "," + std::string(d);
    out += ",composite\n";
    for (const auto& row : report.rows) {
        out += quote(row.system) + "," + quote(row.domain) + "," + std::to_string(row.count);
        for (double m : row.means) out += "," + rubric::format_1dp(m);
        out += "," + rubric::format_1dp(row.composite) + "\n";
    }
    return out;
}

}  // namespace mole
