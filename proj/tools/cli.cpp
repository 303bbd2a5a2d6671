// Copyright (c) 2026, The mole-advice Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>

#include <nlohmann/json.hpp>

#include "mole/backends.hpp"
#include "mole/checkpoint.hpp"
#include "mole/errors.hpp"
#include "mole/pipeline.hpp"
#include "mole/rubric.hpp"
#include "mole/training.hpp"

namespace mole::cli {

namespace fs = std::filesystem;
using nlohmann::json;

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const BackendError*>(&e) ||
        dynamic_cast<const FormatError*>(&e) || dynamic_cast<const BatchError*>(&e) ||
        dynamic_cast<const fs::filesystem_error*>(&e)) {
        return 2;
    }
    return 1;
}

namespace {

std::string utc_now() {
    const auto now = std::chrono::system_clock::now();
    const auto t = std::chrono::system_clock::to_time_t(now);
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[40];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
    char out[48];
    std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
    return out;
}

/// Provenance record written next to a command's outputs.
class Manifest {
public:
    explicit Manifest(std::string command) {
        j_["command"] = std::move(command);
        j_["started_at"] = utc_now();
        j_["inputs"] = json::object();
        j_["outputs"] = json::array();
        j_["config"] = json::object();
        j_["seed"] = nullptr;
    }
    void set_path(fs::path p) { path_ = std::move(p); }
    const std::optional<fs::path>& path() const { return path_; }
    json& operator[](const std::string& key) { return j_[key]; }

    void input(const fs::path& p) {
        if (fs::is_regular_file(p)) j_["inputs"][p.string()] = checkpoint::sha256_file(p);
    }
    void output(const fs::path& p) { j_["outputs"].push_back(p.string()); }

    void finish(int exit_code, const std::string& error) {
        j_["finished_at"] = utc_now();
        j_["exit_code"] = exit_code;
        j_["status"] = exit_code == 0 ? "ok" : "error";
        if (!error.empty()) j_["error"] = error;
    }
    void write() const {
        if (!path_) return;
        std::error_code ec;
        if (path_->has_parent_path()) fs::create_directories(path_->parent_path(), ec);
        std::ofstream f(*path_, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot write manifest " + path_->string());
        f << j_.dump(2) << '\n';
    }

private:
    json j_;
    std::optional<fs::path> path_;
};

fs::path beside(const fs::path& primary, const std::string& suffix) {
    return primary.parent_path() / (primary.filename().string() + suffix);
}

struct TrainFlags {
    int steps = 100;
    double lr = 1e-3;
    int batch_size = 4;
    std::uint64_t seed = 0;
    std::string optimizer = "adam";
    std::string mask;
    double grad_clip = 0.0;
    double load_balance_weight = 0.0;
    std::string log;

    TrainConfig resolve(int max_seq_len) const {
        TrainConfig c;
        c.steps = steps;
        c.learning_rate = lr;
        c.batch_size = batch_size;
        c.seed = seed;
        c.max_seq_len = max_seq_len;
        if (optimizer == "adam") {
            c.optimizer = OptimizerKind::adam;
        } else if (optimizer == "sgd") {
            c.optimizer = OptimizerKind::sgd;
        } else {
            throw ConfigError("--optimizer must be adam or sgd, got " + optimizer);
        }
        if (mask == "completion") {
            c.loss_mask = LossMask::completion_only;
        } else if (mask == "full") {
            c.loss_mask = LossMask::full_sequence;
        } else {
            throw ConfigError("--mask must be completion or full, got " + mask);
        }
        c.grad_clip = grad_clip;
        c.load_balance_weight = load_balance_weight;
        c.validate();
        return c;
    }
};

void add_train_flags(CLI::App* sub, TrainFlags& f, const std::string& default_mask, bool mixture) {
    f.mask = default_mask;
    sub->add_option("--steps", f.steps, "Optimizer steps");
    sub->add_option("--lr", f.lr, "Learning rate");
    sub->add_option("--batch-size", f.batch_size, "Examples per step");
    sub->add_option("--seed", f.seed, "Seed for initialisation and shuffling");
    sub->add_option("--optimizer", f.optimizer, "adam | sgd");
    sub->add_option("--mask", f.mask, "Loss mask: completion | full");
    sub->add_option("--grad-clip", f.grad_clip, "Global gradient-norm clip (0 disables)");
    if (mixture) sub->add_option("--load-balance-weight", f.load_balance_weight, "Gate load-balance penalty weight");
    sub->add_option("--log", f.log, "Training log JSONL (default: <out>.log.jsonl)");
}

class JsonlLog {
public:
    explicit JsonlLog(const fs::path& p) {
        std::error_code ec;
        if (p.has_parent_path()) fs::create_directories(p.parent_path(), ec);
        f_.open(p, std::ios::binary | std::ios::trunc);
        if (!f_) throw IoError("cannot write log " + p.string());
    }
    LogSink sink() {
        return [this](const json& rec) { f_ << rec.dump() << '\n'; };
    }

private:
    std::ofstream f_;
};

std::vector<TrainExample> load_examples(const fs::path& data, Manifest& m) {
    m.input(data);
    auto ex = to_train_examples(read_triples(data));
    if (ex.empty()) throw EmptyInputError("no training examples in " + data.string());
    return ex;
}

std::unique_ptr<ModelBackend> make_backend(const std::string& spec, const std::string& role, int max_new,
                                           Manifest& m) {
    if (spec == "mock") {
        if (role == "issue") return std::make_unique<MockIssueBackend>();
        if (role == "advice") return std::make_unique<MockAdviceBackend>();
        return std::make_unique<MockJudgeBackend>();
    }
    if (spec == "remote") {
        auto cfg = RemoteConfig::from_env();
        m["remote"] = {{"endpoint", cfg.endpoint}, {"model", cfg.model}};
        return std::make_unique<RemoteChatBackend>(cfg);
    }
    if (spec.rfind("local:", 0) == 0) {
        const std::string rest = spec.substr(6);
        const auto plus = rest.find('+');
        const fs::path first = rest.substr(0, plus);
        m.input(first);
        const auto bytes = checkpoint::read_file(first);
        const auto kind = checkpoint::kind_of(bytes);
        const std::string id = "local:" + first.filename().string();
        if (plus != std::string::npos) {
            const fs::path expert_path = rest.substr(plus + 1);
            m.input(expert_path);
            if (kind != checkpoint::Kind::base) throw ConfigError("local backend: '" + first.string() + "' is not a base checkpoint");
            auto base = checkpoint::deserialize_base(bytes);
            auto loaded = checkpoint::load_expert(expert_path);
            if (!(loaded.config == base.config())) throw ConfigError("local backend: expert config does not match base");
            return std::make_unique<LocalToyBackend>(id, std::move(base), std::move(loaded.expert), max_new);
        }
        if (kind == checkpoint::Kind::mole) {
            return std::make_unique<LocalToyBackend>(id, checkpoint::deserialize_mole(bytes), max_new);
        }
        if (kind == checkpoint::Kind::base) {
            return std::make_unique<LocalToyBackend>(id, checkpoint::deserialize_base(bytes), max_new);
        }
        throw ConfigError("local backend: expert checkpoints need a base, use local:<base>+<expert>");
    }
    throw ConfigError("unknown backend '" + spec + "' (expected mock, remote or local:<checkpoint>)");
}

json snapshot(const CLI::App* sub) {
    json cfg = json::object();
    for (const CLI::Option* opt : sub->get_options()) {
        const std::string name = opt->get_single_name();
        if (name == "help" || name == "help-all" || name.empty()) continue;
        if (opt->count() > 0) {
            const auto r = opt->reduced_results();
            if (r.size() == 1) {
                cfg[name] = r.front();
            } else {
                cfg[name] = r;
            }
        } else {
            cfg[name] = opt->get_default_str();
        }
    }
    return cfg;
}

void report_skipped(const IngestResult& r, std::ostream& err, Manifest& m) {
    json skipped = json::array();
    for (const auto& s : r.skipped) {
        err << "warning: line " << s.line << " skipped: " << s.reason << '\n';
        skipped.push_back({{"line", s.line}, {"reason", s.reason}});
    }
    m["skipped_lines"] = skipped;
}

json failures_json(const std::vector<RunFailure>& failures) {
    json out = json::array();
    for (const auto& f : failures) {
        out.push_back({{"review_id", f.review_id}, {"stage", f.stage}, {"class", f.error_class},
                       {"message", f.message}});
    }
    return out;
}

struct Command {
    CLI::App* app = nullptr;
    std::function<std::optional<fs::path>()> manifest_path;
    std::function<void(Manifest&, std::ostream&, std::ostream&)> run;
};

}  // namespace

int execute(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Mixture-of-LoRA-experts review-to-action pipeline", "mole"};
    app.option_defaults()->always_capture_default();
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Help for every subcommand");
    std::vector<Command> commands;

    // ingest
    struct {
        std::string in, out_path;
        int threshold = kDefaultNegativeThreshold;
    } ing;
    {
        auto* s = app.add_subcommand("ingest", "Filter a reviews JSONL down to negative reviews");
        s->add_option("--in", ing.in, "Reviews JSONL")->required();
        s->add_option("--threshold", ing.threshold, "Reviews with stars <= threshold are negative (1-4)");
        s->add_option("--out", ing.out_path, "Negative reviews JSONL")->required();
        commands.push_back({s, [&] { return std::optional(beside(ing.out_path, ".manifest.json")); },
                            [&](Manifest& m, std::ostream& o, std::ostream& e) {
                                m.input(ing.in);
                                auto r = ingest_reviews(ing.in, ing.threshold);
                                report_skipped(r, e, m);
                                std::vector<Review> neg;
                                for (auto& rv : r.reviews)
                                    if (rv.sentiment == Sentiment::negative) neg.push_back(rv);
                                write_reviews(ing.out_path, neg);
                                m.output(ing.out_path);
                                m["counts"] = {{"read", r.reviews.size()}, {"negative", neg.size()},
                                               {"skipped", r.skipped.size()}};
                                o << neg.size() << " negative of " << r.reviews.size() << " reviews -> "
                                  << ing.out_path << '\n';
                            }});
    }

    // pipeline / synth-data
    struct PipeFlags {
        std::string in, out_path, issue = "mock", advice = "mock", timestamp;
        int threshold = kDefaultNegativeThreshold;
        int max_in_flight = 4;
        int max_new = 192;
    };
    PipeFlags pipe, synth;
    auto add_pipe_flags = [](CLI::App* s, PipeFlags& f) {
        s->add_option("--in", f.in, "Reviews JSONL")->required();
        s->add_option("--threshold", f.threshold, "Reviews with stars <= threshold are negative (1-4)");
        s->add_option("--out", f.out_path, "Triples JSONL")->required();
        s->add_option("--issue-backend", f.issue, "mock | remote | local:<checkpoint>[+<expert>]");
        s->add_option("--advice-backend", f.advice, "mock | remote | local:<checkpoint>[+<expert>]");
        s->add_option("--max-in-flight", f.max_in_flight, "Concurrent backend calls");
        s->add_option("--max-new", f.max_new, "Token budget for local backends");
        s->add_option("--timestamp", f.timestamp, "Provenance timestamp override (ISO-8601)");
    };
    auto run_pipe = [](PipeFlags& f, bool synthetic) {
        return [&f, synthetic](Manifest& m, std::ostream& o, std::ostream& e) {
            m.input(f.in);
            auto r = ingest_reviews(f.in, f.threshold);
            report_skipped(r, e, m);
            auto issue = make_backend(f.issue, "issue", f.max_new, m);
            auto advice = make_backend(f.advice, "advice", f.max_new, m);
            PipelineOptions opts;
            opts.max_in_flight = f.max_in_flight;
            if (!f.timestamp.empty()) opts.timestamp = f.timestamp;
            PipelineResult detail;
            if (synthetic) {
                auto res = generate_synthetic_triples(*issue, *advice, r.reviews, f.out_path, opts);
                for (const auto& w : res.warnings) e << "warning: " << w << '\n';
                detail = std::move(res.detail);
            } else {
                detail = run_pipeline(*issue, *advice, r.reviews, opts);
                write_triples(f.out_path, detail.triples);
                for (const auto& fl : detail.failures) {
                    e << "warning: review " << fl.review_id << " failed at " << fl.stage << ": " << fl.message
                      << '\n';
                }
            }
            m.output(f.out_path);
            m["failures"] = failures_json(detail.failures);
            m["counts"] = {{"triples", detail.triples.size()}, {"failed", detail.failures.size()},
                           {"skipped_positive", detail.skipped_positive}};
            o << detail.triples.size() << " triples -> " << f.out_path << '\n';
        };
    };
    {
        auto* s = app.add_subcommand("pipeline", "Run issue and advice agents over negative reviews");
        add_pipe_flags(s, pipe);
        commands.push_back({s, [&] { return std::optional(beside(pipe.out_path, ".manifest.json")); },
                            run_pipe(pipe, false)});
        auto* t = app.add_subcommand("synth-data", "Generate a synthetic triples dataset for adapter training");
        add_pipe_flags(t, synth);
        commands.push_back({t, [&] { return std::optional(beside(synth.out_path, ".manifest.json")); },
                            run_pipe(synth, true)});
    }

    // train-base
    struct {
        std::string data, out_path;
        ModelConfig model;
        TrainFlags train;
    } tb;
    {
        auto* s = app.add_subcommand("train-base", "Train the toy base model on triples (all parameters)");
        s->add_option("--data", tb.data, "Triples JSONL")->required();
        s->add_option("--out", tb.out_path, "Base checkpoint")->required();
        s->add_option("--d-model", tb.model.d_model, "Model width");
        s->add_option("--layers", tb.model.n_layers, "Decoder blocks");
        s->add_option("--heads", tb.model.n_heads, "Attention heads");
        s->add_option("--d-ff", tb.model.d_ff, "MLP hidden width");
        s->add_option("--max-seq-len", tb.model.max_seq_len, "Context window");
        add_train_flags(s, tb.train, "full", false);
        commands.push_back({s, [&] { return std::optional(beside(tb.out_path, ".manifest.json")); },
                            [&](Manifest& m, std::ostream& o, std::ostream&) {
                                auto data = load_examples(tb.data, m);
                                ModelConfig mc = tb.model;
                                mc.seed = tb.train.seed;
                                auto cfg = tb.train.resolve(mc.max_seq_len);
                                m["seed"] = tb.train.seed;
                                auto model = BaseModel::init(mc);
                                const fs::path log = tb.train.log.empty() ? beside(tb.out_path, ".log.jsonl")
                                                                          : fs::path(tb.train.log);
                                JsonlLog sink(log);
                                const auto t0 = std::chrono::steady_clock::now();
                                train_base(model, data, cfg, sink.sink());
                                m["train_seconds"] = std::chrono::duration<double>(
                                                         std::chrono::steady_clock::now() - t0).count();
                                checkpoint::save(tb.out_path, model);
                                m.output(tb.out_path);
                                m.output(log);
                                o << "base -> " << tb.out_path << '\n';
                            }});
    }

    // train-adapter
    struct {
        std::string base, data, out_path, domain, id;
        int rank = LoraExpert::kDefaultRank;
        double alpha = LoraExpert::kDefaultAlpha;
        TrainFlags train;
    } ta;
    {
        auto* s = app.add_subcommand("train-adapter", "Train one LoRA expert on a frozen base");
        s->add_option("--base", ta.base, "Base checkpoint")->required();
        s->add_option("--data", ta.data, "Triples JSONL")->required();
        s->add_option("--domain", ta.domain, "Keep only triples of this domain");
        s->add_option("--id", ta.id, "Expert id (default: the domain)");
        s->add_option("--rank", ta.rank, "LoRA rank");
        s->add_option("--alpha", ta.alpha, "LoRA alpha");
        s->add_option("--out", ta.out_path, "Expert checkpoint")->required();
        add_train_flags(s, ta.train, "completion", false);
        commands.push_back({s, [&] { return std::optional(beside(ta.out_path, ".manifest.json")); },
                            [&](Manifest& m, std::ostream& o, std::ostream&) {
                                auto data = load_examples(ta.data, m);
                                if (!ta.domain.empty()) {
                                    std::erase_if(data, [&](const TrainExample& x) { return x.domain_tag != ta.domain; });
                                    if (data.empty()) throw EmptyInputError("no triples with domain " + ta.domain);
                                }
                                m.input(ta.base);
                                auto base = checkpoint::load_base(ta.base);
                                auto cfg = ta.train.resolve(base.config().max_seq_len);
                                m["seed"] = ta.train.seed;
                                const std::string id = !ta.id.empty() ? ta.id : data.front().domain_tag;
                                const fs::path log = ta.train.log.empty() ? beside(ta.out_path, ".log.jsonl")
                                                                          : fs::path(ta.train.log);
                                JsonlLog sink(log);
                                auto expert = train_lora_adapter(base, data, cfg, id, ta.rank, ta.alpha, sink.sink());
                                checkpoint::save(ta.out_path, expert, base.config());
                                m.output(ta.out_path);
                                m.output(log);
                                o << "expert " << id << " -> " << ta.out_path << '\n';
                            }});
    }

    // train-mole
    struct {
        std::string base, data, out_path;
        std::vector<std::string> experts;
        TrainFlags train;
    } tm;
    {
        auto* s = app.add_subcommand("train-mole", "Jointly train experts and token gates on mixed data");
        s->add_option("--base", tm.base, "Base checkpoint")->required();
        s->add_option("--experts", tm.experts, "Comma-separated expert checkpoints")->required()->delimiter(',');
        s->add_option("--data", tm.data, "Triples JSONL")->required();
        s->add_option("--out", tm.out_path, "Mixture checkpoint")->required();
        add_train_flags(s, tm.train, "completion", true);
        commands.push_back({s, [&] { return std::optional(beside(tm.out_path, ".manifest.json")); },
                            [&](Manifest& m, std::ostream& o, std::ostream&) {
                                auto data = load_examples(tm.data, m);
                                m.input(tm.base);
                                auto base = checkpoint::load_base(tm.base);
                                std::vector<LoraExpert> experts;
                                for (const auto& p : tm.experts) {
                                    m.input(p);
                                    auto loaded = checkpoint::load_expert(p);
                                    if (!(loaded.config == base.config())) {
                                        throw ConfigError("expert " + p + " was trained for a different base config");
                                    }
                                    experts.push_back(std::move(loaded.expert));
                                }
                                auto cfg = tm.train.resolve(base.config().max_seq_len);
                                m["seed"] = tm.train.seed;
                                const std::string base_digest = checkpoint::parameter_digest(base);
                                auto model = MoleModel::with_uniform_gates(std::move(base), std::move(experts));
                                const fs::path log = tm.train.log.empty() ? beside(tm.out_path, ".log.jsonl")
                                                                          : fs::path(tm.train.log);
                                JsonlLog sink(log);
                                auto trained = train_mole(std::move(model), data, cfg, sink.sink());
                                const std::string after = checkpoint::parameter_digest(trained.base());
                                m["base_parameter_sha256"] = {{"before", base_digest}, {"after", after}};
                                if (after != base_digest) throw NumericError("base parameters changed during train-mole");
                                checkpoint::save(tm.out_path, trained);
                                m.output(tm.out_path);
                                m.output(log);
                                o << "mixture of " << trained.experts().size() << " experts -> " << tm.out_path
                                  << '\n';
                            }});
    }

    // evaluate / report
    struct {
        std::string triples, judge = "mock", system = "system", scores, report;
        int max_in_flight = 4;
    } ev;
    auto write_report = [](const std::vector<RubricScore>& scores, const fs::path& dir, Manifest& m,
                           std::ostream& o) {
        const auto report = aggregate_report(scores);
        std::error_code ec;
        fs::create_directories(dir, ec);
        const auto table = render_table(report);
        for (const auto& [name, text] : {std::pair<std::string, std::string>{"report.txt", table},
                                         {"report.csv", render_csv(report)}}) {
            std::ofstream f(dir / name, std::ios::binary | std::ios::trunc);
            if (!f) throw IoError("cannot write " + (dir / name).string());
            f << text;
            m.output(dir / name);
        }
        o << table;
    };
    {
        auto* s = app.add_subcommand("evaluate", "Score advice with a rubric judge and/or build a report");
        s->add_option("--triples", ev.triples, "Triples JSONL to judge (omit to aggregate existing scores)");
        s->add_option("--judge", ev.judge, "mock | remote");
        s->add_option("--system", ev.system, "System label recorded with each score");
        s->add_option("--scores", ev.scores, "Scores JSONL (written when judging, read otherwise)")->required();
        s->add_option("--report", ev.report, "Directory for report.txt and report.csv");
        s->add_option("--max-in-flight", ev.max_in_flight, "Concurrent judge calls");
        commands.push_back(
            {s, [&] { return std::optional(beside(ev.triples.empty() && !ev.report.empty()
                                                       ? fs::path(ev.report) / "evaluate"
                                                       : fs::path(ev.scores),
                                                   ".manifest.json")); },
             [&](Manifest& m, std::ostream& o, std::ostream& e) {
                 std::vector<RubricScore> scores;
                 if (!ev.triples.empty()) {
                     m.input(ev.triples);
                     m["judge_prompt"] = {{"version", rubric::judge_prompt_version()},
                                          {"sha256", checkpoint::sha256_hex(std::span(
                                                         reinterpret_cast<const std::uint8_t*>(
                                                             rubric::judge_prompt_template().data()),
                                                         rubric::judge_prompt_template().size()))}};
                     auto judge_backend = make_backend(ev.judge, "judge", 0, m);
                     auto run = judge_triples(*judge_backend, read_triples(ev.triples), ev.system, ev.max_in_flight);
                     for (const auto& f : run.failures) e << "warning: " << f.review_id << ": " << f.message << '\n';
                     m["failures"] = failures_json(run.failures);
                     write_scores(ev.scores, run.scores);
                     m.output(ev.scores);
                     scores = std::move(run.scores);
                     o << scores.size() << " scores -> " << ev.scores << '\n';
                 } else {
                     if (ev.report.empty()) throw ConfigError("evaluate: give --triples to judge or --report to aggregate");
                     m.input(ev.scores);
                     scores = read_scores(ev.scores);
                 }
                 if (!ev.report.empty()) write_report(scores, ev.report, m, o);
             }});
    }
    struct {
        std::string scores, out_dir;
    } rp;
    {
        auto* s = app.add_subcommand("report", "Aggregate scores into a per-system, per-domain table and CSV");
        s->add_option("--scores", rp.scores, "Scores JSONL")->required();
        s->add_option("--out", rp.out_dir, "Output directory")->required();
        commands.push_back({s, [&] { return std::optional(fs::path(rp.out_dir) / "manifest.json"); },
                            [&](Manifest& m, std::ostream& o, std::ostream&) {
                                m.input(rp.scores);
                                write_report(read_scores(rp.scores), rp.out_dir, m, o);
                            }});
    }

    // inspect-checkpoint
    struct {
        std::string in, manifest;
    } ic;
    {
        auto* s = app.add_subcommand("inspect-checkpoint", "Print a checkpoint's header and per-tensor L2 norms");
        s->add_option("--in", ic.in, "Checkpoint file")->required();
        s->add_option("--manifest", ic.manifest, "Also write a run manifest here");
        commands.push_back({s,
                            [&]() -> std::optional<fs::path> {
                                if (ic.manifest.empty()) return std::nullopt;
                                return fs::path(ic.manifest);
                            },
                            [&](Manifest& m, std::ostream& o, std::ostream&) {
                                m.input(ic.in);
                                const auto bytes = checkpoint::read_file(ic.in);
                                const auto c = checkpoint::decode(bytes);
                                json norms = json::array();
                                for (const auto& t : c.tensors) {
                                    double ss = 0.0;
                                    for (double v : t.tensor.data()) ss += v * v;
                                    norms.push_back({{"name", t.name}, {"shape", t.tensor.shape()},
                                                     {"l2_norm", std::sqrt(ss)}});
                                }
                                json outj{{"header", checkpoint::read_header(bytes)},
                                          {"sha256", checkpoint::sha256_hex(bytes)},
                                          {"tensor_norms", norms}};
                                o << outj.dump(2) << '\n';
                            }});
    }

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, err, err);
        const auto* selected = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
        err << selected->help();
        return 1;
    }

    const auto it = std::find_if(commands.begin(), commands.end(), [](const Command& c) { return c.app->parsed(); });
    Manifest manifest(it->app->get_name());
    manifest["argv"] = args;
    manifest["config"] = snapshot(it->app);
    json env = json::object();
    for (const char* name : {"ADVICE_LLM_ENDPOINT", "ADVICE_LLM_MODEL", "SOURCE_DATE_EPOCH"}) {
        if (const char* v = std::getenv(name)) env[name] = v;
    }
    if (std::getenv("ADVICE_LLM_API_KEY")) env["ADVICE_LLM_API_KEY"] = "<set>";
    manifest["env"] = env;

    int code = 0;
    std::string error;
    try {
        if (auto p = it->manifest_path()) manifest.set_path(*p);
        it->run(manifest, out, err);
    } catch (const std::exception& e) {
        code = exit_code_for(e);
        error = e.what();
        err << "error: " << error << '\n';
        if (const auto* fe = dynamic_cast<const FormatError*>(&e)) manifest["raw_response"] = fe->raw_response();
    }
    manifest.finish(code, error);
    try {
        manifest.write();
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        if (code == 0) code = 2;
    }
    return code;
}

}  // namespace mole::cli
