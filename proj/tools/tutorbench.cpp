// tutorbench command-line entry point: corpus sampling, experiment runs with
// resume, judge evaluation, metrics tables, the human-review workflow, and a
// transcript audit. Exit codes: 0 ok, 1 usage/config, 2 data/validation,
// 3 backend failure.

#include <filesystem>
#include <iostream>
#include <set>

#include <CLI11.hpp>

#include "tutorbench/tutorbench.hpp"

namespace fs = std::filesystem;
using namespace tutorbench;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitBackend = 3;

struct RunContext {
    HarnessConfig config;
    fs::path config_dir;
    RunPaths paths;
    BackendRegistry registry;

    explicit RunContext(const fs::path& config_path)
        : config(load_config(config_path)),
          config_dir(fs::absolute(config_path).parent_path()),
          paths(resolve(config, config_dir).output_dir, config.run_label),
          registry(build_registry(config, config_dir)) {}

    static HarnessConfig& resolve(HarnessConfig& c, const fs::path& dir) {
        if (c.output_dir.is_relative()) c.output_dir = dir / c.output_dir;
        if (c.corpus_path.is_relative()) c.corpus_path = dir / c.corpus_path;
        return c;
    }

    std::vector<Question> load_questions() const {
        ParseResult parsed =
            parse_corpus(config.corpus_path, corpus_format_from_string(config.corpus_format));
        for (const std::string& d : parsed.diagnostics) std::cerr << "corpus: " << d << "\n";
        return parsed.questions;
    }

    ExperimentConfig experiment(std::vector<Question> questions) const {
        ExperimentConfig e;
        e.questions = std::move(questions);
        e.student = config.student;
        e.teachers = config.teachers;
        e.num_rounds = config.num_rounds;
        e.max_concurrent_tasks = config.max_concurrent_tasks;
        e.output_dir = config.output_dir;
        e.run_label = config.run_label;
        return e;
    }

    // Virtual clock when every configured backend is scripted, otherwise
    // wall clock; an explicit setting in the registry could override later.
    ClockFactory clock_factory() const {
        for (const auto& [model, spec] : config.backends)
            if (spec.kind != "scripted") return system_clock_factory();
        return virtual_clock_factory();
    }

    std::map<std::string, Question> question_index() const {
        std::map<std::string, Question> index;
        std::vector<Question> questions = load_questions();
        for (Question& q : questions) index[q.question_id] = std::move(q);
        return index;
    }

    std::vector<Transcript> load_transcripts() const {
        std::vector<Transcript> transcripts;
        fs::path sessions = paths.root / "sessions";
        if (!fs::exists(sessions))
            throw DataError("missing run directory: " + sessions.string());
        std::vector<fs::path> files;
        for (const auto& entry : fs::recursive_directory_iterator(sessions))
            if (entry.is_regular_file() && entry.path().extension() == ".json")
                files.push_back(entry.path());
        std::sort(files.begin(), files.end());
        for (const fs::path& file : files) {
            try {
                transcripts.push_back(load_transcript(file));
            } catch (const std::exception& e) {
                throw DataError(file.string() + ": " + e.what());
            }
        }
        return transcripts;
    }
};

int cmd_sample(const fs::path& input, const std::string& format, const fs::path& stats_path,
               const fs::path& out, const fs::path& coverage_path, long per_cell,
               const std::vector<std::string>& excluded) {
    ParseResult parsed = parse_corpus(input, corpus_format_from_string(format));
    for (const std::string& d : parsed.diagnostics) std::cerr << "corpus: " << d << "\n";
    auto stats = load_stats(stats_path);
    std::set<std::string> exclude(excluded.begin(), excluded.end());
    SampleResult sample = stratified_sample(parsed.questions, stats, per_cell, exclude);
    atomic_write_text(out, corpus_to_jsonl(sample.questions));
    if (!coverage_path.empty()) atomic_write_text(coverage_path, coverage_to_csv(sample.coverage));
    CorpusSummary summary = corpus_summary(sample.questions);
    std::cout << "sampled " << summary.total << " questions across " << summary.per_category.size()
              << " categories into " << out.string() << "\n";
    return kExitOk;
}

int cmd_pretest(const fs::path& config_path) {
    RunContext ctx(config_path);
    ExperimentConfig experiment = ctx.experiment(ctx.load_questions());
    ExperimentResult result;
    run_pretest_phase(experiment, ctx.registry, ctx.clock_factory(), ctx.paths, result);
    std::cout << "pretest: " << result.pretests_executed << " executed, " << result.pretests_reused
              << " reused";
    long failures = static_cast<long>(result.invalid.size());
    if (failures > 0) std::cout << ", " << failures << " failed";
    std::cout << "\n";
    return kExitOk;
}

int cmd_run(const fs::path& config_path, bool force_resume, bool dry_run) {
    RunContext ctx(config_path);
    std::vector<Question> questions = ctx.load_questions();
    if (dry_run) {
        std::cout << "run_label: " << ctx.config.run_label << "\n"
                  << "config_hash: " << config_hash(ctx.config) << "\n"
                  << "output: " << ctx.paths.root.string() << "\n"
                  << "questions: " << questions.size() << "\n"
                  << "student: " << ctx.config.student.model_id << "\n";
        for (const RoleConfig& t : ctx.config.teachers)
            std::cout << "teacher: " << t.model_id << "\n";
        std::cout << "sessions planned: " << questions.size() * ctx.config.teachers.size() << "\n";
        return kExitOk;
    }
    reconcile_manifest(ctx.paths, ctx.config, force_resume);
    ExperimentResult result =
        run_experiment(ctx.experiment(std::move(questions)), ctx.registry, ctx.clock_factory());
    std::cout << "pretests: " << result.pretests_executed << " executed, " << result.pretests_reused
              << " reused\n"
              << "sessions: " << result.sessions_executed << " executed, " << result.sessions_skipped
              << " skipped, " << result.invalid.size() << " invalid\n";
    for (const MetricsSummary& m : result.metrics)
        std::cout << m.teacher_model << ": pre " << m.acc_pre << " post " << m.acc_post << " alg "
                  << m.alg << "\n";
    return kExitOk;
}

struct PairSpec {
    std::string question_id;
    std::string teacher_x;
    std::string teacher_y;
};

std::vector<PairSpec> load_pair_spec(const fs::path& path) {
    json doc = json::parse(read_text_file(path));
    std::vector<PairSpec> specs;
    for (const json& p : doc.at("pairs"))
        specs.push_back({p.at("question_id").get<std::string>(),
                         p.at("teacher_x").get<std::string>(),
                         p.at("teacher_y").get<std::string>()});
    return specs;
}

// UIC cases paired with a seeded non-improving control, the same shape the
// comparative analysis in the reference workflow uses.
std::vector<PairSpec> auto_uic_pairs(const std::vector<Transcript>& transcripts, uint64_t seed) {
    std::map<std::string, std::set<std::string>> improvements;
    std::map<std::pair<std::string, std::string>, const Transcript*> index;
    for (const Transcript& t : transcripts) {
        if (!t.valid || !t.posttest) continue;
        index[{t.teacher_model, t.question_id}] = &t;
        if (transcript_improved(t)) improvements[t.teacher_model].insert(t.question_id);
        else improvements[t.teacher_model];
    }
    std::map<std::string, std::vector<std::string>> improvers_by_qid;
    for (const auto& [teacher, qids] : improvements)
        for (const std::string& qid : qids) improvers_by_qid[qid].push_back(teacher);
    std::vector<PairSpec> specs;
    std::mt19937_64 rng(seed);
    for (const auto& [qid, improvers] : improvers_by_qid) {
        if (improvers.size() != 1) continue;  // unique improvements only
        std::vector<std::string> controls;
        for (const auto& [key, t] : index)
            if (key.second == qid && key.first != improvers[0] && !transcript_improved(*t))
                controls.push_back(key.first);
        if (controls.empty()) continue;
        std::string control = controls[static_cast<size_t>(rng() % controls.size())];
        specs.push_back({qid, improvers[0], control});
    }
    return specs;
}

int cmd_judge(const fs::path& config_path, const fs::path& pairs_path, bool auto_pairs,
              uint64_t seed_override, bool has_seed_override) {
    RunContext ctx(config_path);
    if (!ctx.config.judge) throw DataError("config has no judge section");
    JudgeConfig judge_config = *ctx.config.judge;
    if (has_seed_override) judge_config.seed = seed_override;
    else if (judge_config.seed == 0) judge_config.seed = ctx.config.seed;
    std::vector<Transcript> transcripts = ctx.load_transcripts();
    std::map<std::pair<std::string, std::string>, const Transcript*> index;
    std::map<std::pair<std::string, std::string>, bool> improved;
    for (const Transcript& t : transcripts) {
        index[{t.teacher_model, t.question_id}] = &t;
        improved[{t.teacher_model, t.question_id}] = transcript_improved(t);
    }
    std::vector<PairSpec> specs =
        auto_pairs ? auto_uic_pairs(transcripts, judge_config.seed) : load_pair_spec(pairs_path);
    Backend& backend = ctx.registry.for_model(judge_config.model_id);
    auto clock = ctx.clock_factory()();
    std::vector<PerspectiveReport> all_reports;
    long unevaluated = 0;
    for (const PairSpec& spec : specs) {
        auto x = index.find({spec.teacher_x, spec.question_id});
        auto y = index.find({spec.teacher_y, spec.question_id});
        if (x == index.end() || y == index.end())
            throw DataError("pair " + spec.question_id + ": transcript missing for " +
                            (x == index.end() ? spec.teacher_x : spec.teacher_y));
        AnonymizedPair pair = anonymize_pair(*x->second, *y->second, judge_config.seed);
        try {
            std::vector<PerspectiveReport> reports = evaluate_pair(
                backend, *clock, judge_config, pair,
                {Perspective::holistic, Perspective::teacher_centric, Perspective::student_centric});
            for (PerspectiveReport& r : reports) {
                fs::path out = ctx.paths.judge_dir() /
                               (path_component(r.question_id) + "_" + perspective_name(r.perspective) +
                                ".json");
                atomic_write_text(out, report_to_json(r, pair).dump(2) + "\n");
                all_reports.push_back(std::move(r));
            }
        } catch (const PairUnevaluated& e) {
            std::cerr << "unevaluated: " << e.what() << "\n";
            ++unevaluated;
        }
    }
    atomic_write_text(ctx.paths.judge_dir() / "scores.csv",
                      export_score_table(all_reports, improved));
    std::cout << "judged " << (specs.size() - static_cast<size_t>(unevaluated)) << "/" << specs.size()
              << " pairs; " << all_reports.size() << " reports\n";
    return unevaluated == 0 ? kExitOk : kExitBackend;
}

int cmd_metrics(const fs::path& config_path, const fs::path& stats_path) {
    RunContext ctx(config_path);
    std::vector<Transcript> transcripts = ctx.load_transcripts();
    std::vector<MetricsSummary> summaries = summarize_run(transcripts);
    if (!stats_path.empty()) {
        auto stats = load_stats(stats_path);
        std::map<std::string, int> level_of;
        for (const auto& [qid, s] : stats)
            if (s.valid_responses > 0) level_of[qid] = compute_difficulty(s);
        for (MetricsSummary& m : summaries) {
            std::vector<QuestionOutcome> outcomes;
            for (const Transcript& t : transcripts)
                if (t.valid && t.posttest && t.teacher_model == m.teacher_model)
                    outcomes.push_back({t.question_id, t.pretest.correct, t.posttest->correct});
            m.per_level_gains = gains_by_level(outcomes, level_of).per_level_alg;
        }
    }
    for (const MetricsSummary& m : summaries)
        atomic_write_text(ctx.paths.metrics_dir() / (path_component(m.teacher_model) + ".json"),
                          json(m).dump(2) + "\n");
    atomic_write_text(ctx.paths.metrics_dir() / "summary.csv", metrics_to_csv(summaries));
    std::cout << metrics_to_csv(summaries);
    return kExitOk;
}

int cmd_review_export(const fs::path& config_path, size_t n, uint64_t seed, bool has_seed) {
    RunContext ctx(config_path);
    uint64_t effective_seed = has_seed ? seed : ctx.config.seed;
    std::vector<Transcript> transcripts = ctx.load_transcripts();
    std::map<std::string, Question> questions = ctx.question_index();
    std::map<std::string, std::set<std::string>> improvements;
    std::map<std::pair<std::string, std::string>, Transcript> index;
    for (Transcript& t : transcripts) {
        if (!t.valid || !t.posttest) continue;
        if (transcript_improved(t)) improvements[t.teacher_model].insert(t.question_id);
        else improvements[t.teacher_model];
        index[{t.teacher_model, t.question_id}] = std::move(t);
    }
    std::map<std::string, std::vector<std::string>> improvers_by_qid;
    for (const auto& [teacher, qids] : improvements)
        for (const std::string& qid : qids) improvers_by_qid[qid].push_back(teacher);
    std::vector<UicCase> cases;
    for (const auto& [qid, improvers] : improvers_by_qid)
        if (improvers.size() == 1) cases.push_back({qid, improvers[0]});
    std::vector<DialoguePair> pairs = select_pairs(cases, index, n, effective_seed);
    json pair_meta = json::array();
    for (const DialoguePair& pair : pairs) {
        auto qit = questions.find(pair.question_id);
        if (qit == questions.end())
            throw DataError("question " + pair.question_id + " not in corpus " +
                            ctx.config.corpus_path.string());
        fs::path out = ctx.paths.review_dir() / ("review_" + path_component(pair.question_id) + ".txt");
        atomic_write_text(out, export_questionnaire(pair, qit->second));
        pair_meta.push_back({{"question_id", pair.question_id},
                             {"improving_teacher", pair.improving.teacher_model},
                             {"control_teacher", pair.control.teacher_model},
                             {"improving_is_teacher1", pair.improving_is_teacher1}});
    }
    json doc{{"format_version", kFormatVersion}, {"seed", effective_seed}, {"pairs", pair_meta}};
    atomic_write_text(ctx.paths.review_dir() / "pairs.json", doc.dump(2) + "\n");
    std::cout << "exported " << pairs.size() << " questionnaires to "
              << ctx.paths.review_dir().string() << "\n";
    return kExitOk;
}

int cmd_review_align(const fs::path& config_path, const std::vector<fs::path>& rating_files) {
    RunContext ctx(config_path);
    fs::path pairs_file = ctx.paths.review_dir() / "pairs.json";
    json doc = json::parse(read_text_file(pairs_file));
    check_format_version(doc, pairs_file.string());

    std::vector<Transcript> transcripts = ctx.load_transcripts();
    std::map<std::pair<std::string, std::string>, const Transcript*> index;
    for (const Transcript& t : transcripts) index[{t.teacher_model, t.question_id}] = &t;

    std::vector<DialoguePair> pairs;
    std::set<std::string> known;
    for (const json& p : doc.at("pairs")) {
        DialoguePair pair;
        pair.question_id = p.at("question_id").get<std::string>();
        std::string improving = p.at("improving_teacher").get<std::string>();
        std::string control = p.at("control_teacher").get<std::string>();
        auto x = index.find({improving, pair.question_id});
        auto y = index.find({control, pair.question_id});
        if (x == index.end() || y == index.end())
            throw DataError(pairs_file.string() + ": transcripts missing for pair " +
                            pair.question_id);
        pair.improving = *x->second;
        pair.control = *y->second;
        pair.improving_is_teacher1 = p.at("improving_is_teacher1").get<bool>();
        known.insert(pair.question_id);
        pairs.push_back(std::move(pair));
    }
    std::vector<ExpertRating> ratings = ingest_ratings(rating_files, known);
    std::map<std::string, std::string> judge_choice;
    for (const std::string& qid : known) {
        fs::path report = ctx.paths.judge_dir() / (path_component(qid) + "_holistic.json");
        if (!fs::exists(report)) throw DataError("missing judge report " + report.string());
        json j = json::parse(read_text_file(report));
        judge_choice[qid] = j.at("verdict").at("model").get<std::string>();
    }
    AlignmentReport report = alignment(pairs, ratings, judge_choice);
    atomic_write_text(ctx.paths.review_dir() / "alignment.json", json(report).dump(2) + "\n");
    std::cout << "pairs: " << report.n_pairs << "\nagreements: " << report.n_agreements << " ("
              << report.agreement_rate * 100.0 << "%)\nmean rating, gain side: "
              << report.mean_score_gain_side
              << "\nmean rating, control side: " << report.mean_score_control_side << "\n";
    return kExitOk;
}

int cmd_verify(const fs::path& config_path) {
    RunContext ctx(config_path);
    std::map<std::string, Question> questions = ctx.question_index();
    fs::path sessions = ctx.paths.root / "sessions";
    if (!fs::exists(sessions)) throw DataError("missing run directory: " + sessions.string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(sessions))
        if (entry.is_regular_file() && entry.path().extension() == ".json")
            files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    long violations = 0;
    for (const fs::path& file : files) {
        Transcript t;
        try {
            t = load_transcript(file);
        } catch (const std::exception& e) {
            std::cerr << file.string() << ": " << e.what() << "\n";
            ++violations;
            continue;
        }
        auto qit = questions.find(t.question_id);
        if (qit == questions.end()) {
            std::cerr << file.string() << ": question " << t.question_id << " not in corpus\n";
            ++violations;
            continue;
        }
        for (const BoundaryViolation& v : assert_content_boundary(t, qit->second)) {
            std::cerr << file.string() << ": " << v.where << " round " << v.round
                      << " leaks \"" << v.matched << "\"\n";
            ++violations;
        }
        // Structural invariants.
        for (size_t i = 0; i < t.turns.size(); ++i)
            if (t.turns[i].round != static_cast<int>(i) + 1) {
                std::cerr << file.string() << ": rounds not consecutive at index " << i << "\n";
                ++violations;
            }
        if (t.valid && !t.posttest) {
            std::cerr << file.string() << ": valid transcript without post-test\n";
            ++violations;
        }
        std::map<std::string, int> per_phase;
        for (const RetryEvent& e : t.retry_log)
            if (++per_phase[e.phase] > 5) {
                std::cerr << file.string() << ": more than 5 retries in phase " << e.phase << "\n";
                ++violations;
            }
        int64_t prev = t.timestamps.pretest_ms;
        for (int64_t ts : t.timestamps.turn_ms) {
            if (ts <= prev) {
                std::cerr << file.string() << ": non-increasing turn timestamp\n";
                ++violations;
            }
            prev = ts;
        }
        if (t.posttest && t.timestamps.posttest_ms <= prev) {
            std::cerr << file.string() << ": post-test timestamp out of order\n";
            ++violations;
        }
    }
    std::cout << "verified " << files.size() << " transcripts, " << violations << " violations\n";
    return violations == 0 ? kExitOk : kExitData;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"tutorbench: teaching-effectiveness evaluation harness"};
    app.require_subcommand(1);

    // sample
    auto* sample = app.add_subcommand("sample", "Stratified-sample a corpus by category and difficulty");
    fs::path sample_input, sample_stats, sample_out, sample_coverage;
    std::string sample_format = "native";
    long per_cell = 10;
    std::vector<std::string> excluded = {"other"};
    sample->add_option("--input", sample_input, "source corpus file")->required();
    sample->add_option("--format", sample_format, "native | mmlu_pro_like | gpqa_like");
    sample->add_option("--stats", sample_stats, "per-question accuracy stats (JSON)")->required();
    sample->add_option("--out", sample_out, "output corpus (JSONL)")->required();
    sample->add_option("--coverage", sample_coverage, "coverage summary CSV");
    sample->add_option("--per-cell", per_cell, "questions per (category, level) cell");
    sample->add_option("--exclude", excluded, "categories to exclude");

    fs::path config_path;
    bool force_resume = false, dry_run = false;

    auto* pretest = app.add_subcommand("pretest", "Run the pre-test phase only");
    pretest->add_option("--config", config_path, "harness config (JSON)")->required();

    auto* run = app.add_subcommand("run", "Run the full experiment (pre-test, dialogues, post-test)");
    run->add_option("--config", config_path, "harness config (JSON)")->required();
    run->add_flag("--force-resume", force_resume, "resume even if the config hash changed");
    run->add_flag("--dry-run", dry_run, "print the resolved plan and exit");

    auto* judge = app.add_subcommand("judge", "Evaluate transcript pairs with the judge model");
    fs::path pairs_path;
    bool auto_pairs = false;
    uint64_t judge_seed = 0;
    judge->add_option("--config", config_path, "harness config (JSON)")->required();
    judge->add_option("--pairs", pairs_path, "pair spec JSON ({\"pairs\": [...]})");
    judge->add_flag("--auto-uic", auto_pairs, "derive pairs from unique-improvement cases");
    auto* seed_opt = judge->add_option("--seed", judge_seed, "anonymization seed override");

    auto* metrics = app.add_subcommand("metrics", "Aggregate metrics tables from a run directory");
    fs::path stats_path;
    metrics->add_option("--config", config_path, "harness config (JSON)")->required();
    metrics->add_option("--stats", stats_path, "stats file for per-level gains");

    auto* review_export = app.add_subcommand("review-export", "Export anonymized questionnaires");
    size_t review_n = 50;
    uint64_t review_seed = 0;
    review_export->add_option("--config", config_path, "harness config (JSON)")->required();
    review_export->add_option("--n", review_n, "number of pairs");
    auto* review_seed_opt = review_export->add_option("--seed", review_seed, "selection seed");

    auto* review_align = app.add_subcommand("review-align", "Compute human-judge alignment");
    std::vector<fs::path> rating_files;
    review_align->add_option("--config", config_path, "harness config (JSON)")->required();
    review_align->add_option("--ratings", rating_files, "rating CSV files")->required();

    auto* verify = app.add_subcommand("verify", "Audit transcripts for boundary and invariant violations");
    verify->add_option("--config", config_path, "harness config (JSON)")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (sample->parsed())
            return cmd_sample(sample_input, sample_format, sample_stats, sample_out,
                              sample_coverage, per_cell, excluded);
        if (pretest->parsed()) return cmd_pretest(config_path);
        if (run->parsed()) return cmd_run(config_path, force_resume, dry_run);
        if (judge->parsed()) {
            if (!auto_pairs && pairs_path.empty()) {
                std::cerr << "judge: either --pairs or --auto-uic is required\n";
                return kExitUsage;
            }
            return cmd_judge(config_path, pairs_path, auto_pairs, judge_seed, seed_opt->count() > 0);
        }
        if (metrics->parsed()) return cmd_metrics(config_path, stats_path);
        if (review_export->parsed())
            return cmd_review_export(config_path, review_n, review_seed,
                                     review_seed_opt->count() > 0);
        if (review_align->parsed()) return cmd_review_align(config_path, rating_files);
        if (verify->parsed()) return cmd_verify(config_path);
    } catch (const ResumeRefused& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const GatewayError& e) {
        std::cerr << "backend error: " << e.what() << "\n";
        return e.kind == GatewayError::Kind::config ? kExitUsage : kExitBackend;
    } catch (const PairUnevaluated& e) {
        std::cerr << "backend error: " << e.what() << "\n";
        return kExitBackend;
    } catch (const json::exception& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const TutorbenchError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitUsage;
}
