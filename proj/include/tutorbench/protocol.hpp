#pragma once
// Session protocol: pre-test -> N interaction rounds -> post-test per
// (teacher, student, question), fanned out across an experiment with a
// bounded task pool and file-level resume. Each session gets its own clock
// so transcripts are reproducible under any scheduling.

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "tutorbench/agents.hpp"
#include "tutorbench/corpus.hpp"
#include "tutorbench/gateway.hpp"
#include "tutorbench/metrics.hpp"

namespace tutorbench {

struct RetryEvent {
    std::string phase;
    std::string reason;  // retry_empty | retry_overlong
    int attempt = 0;
};

inline void to_json(json& j, const RetryEvent& e) {
    j = json{{"phase", e.phase}, {"reason", e.reason}, {"attempt", e.attempt}};
}

inline void from_json(const json& j, RetryEvent& e) {
    j.at("phase").get_to(e.phase);
    j.at("reason").get_to(e.reason);
    j.at("attempt").get_to(e.attempt);
}

struct Timestamps {
    int64_t pretest_ms = 0;
    std::vector<int64_t> turn_ms;
    int64_t posttest_ms = 0;
};

inline void to_json(json& j, const Timestamps& t) {
    j = json{{"pretest_ms", t.pretest_ms}, {"turn_ms", t.turn_ms}, {"posttest_ms", t.posttest_ms}};
}

inline void from_json(const json& j, Timestamps& t) {
    j.at("pretest_ms").get_to(t.pretest_ms);
    j.at("turn_ms").get_to(t.turn_ms);
    j.at("posttest_ms").get_to(t.posttest_ms);
}

struct Transcript {
    std::string question_id;
    std::string category;
    std::string teacher_model;
    std::string student_model;
    PreTestRecord pretest;
    std::vector<DialogueTurn> turns;
    std::optional<PostTestRecord> posttest;
    std::vector<RetryEvent> retry_log;
    Timestamps timestamps;
    bool valid = true;
    std::string invalid_reason;
};

inline void to_json(json& j, const Transcript& t) {
    j = json{{"format_version", kFormatVersion},
             {"question_id", t.question_id},
             {"category", t.category},
             {"teacher_model", t.teacher_model},
             {"student_model", t.student_model},
             {"pretest", t.pretest},
             {"turns", t.turns},
             {"retry_log", t.retry_log},
             {"timestamps", t.timestamps},
             {"valid", t.valid},
             {"invalid_reason", t.invalid_reason}};
    j["posttest"] = t.posttest ? json(*t.posttest) : json(nullptr);
}

inline void from_json(const json& j, Transcript& t) {
    check_format_version(j, "transcript");
    j.at("question_id").get_to(t.question_id);
    j.at("category").get_to(t.category);
    j.at("teacher_model").get_to(t.teacher_model);
    j.at("student_model").get_to(t.student_model);
    j.at("pretest").get_to(t.pretest);
    j.at("turns").get_to(t.turns);
    j.at("retry_log").get_to(t.retry_log);
    j.at("timestamps").get_to(t.timestamps);
    j.at("valid").get_to(t.valid);
    j.at("invalid_reason").get_to(t.invalid_reason);
    if (j.contains("posttest") && !j["posttest"].is_null())
        t.posttest = j["posttest"].get<PostTestRecord>();
}

// Hard failure of one generation phase after the full retry budget.
struct PhaseFailure : TutorbenchError {
    std::string phase;
    PhaseFailure(const std::string& ph, const std::string& msg)
        : TutorbenchError(msg), phase(ph) {}
};

// Runs one quality-gated generation: transport retries happen inside
// complete(); gate rejections are re-requested up to max_attempts, each
// rejection logged. Exhaustion is a hard failure.
inline GenerationResult generate_gated(Backend& backend, Clock& clock,
                                       const GenerationRequest& request, int max_tokens,
                                       int recommended_tokens, double threshold, int max_attempts,
                                       const std::string& phase, std::vector<RetryEvent>& retry_log,
                                       const RetryPolicy& policy = {}) {
    for (int attempt = 1; attempt <= max_attempts; ++attempt) {
        GenerationResult result;
        try {
            result = complete(backend, request, policy, clock);
        } catch (const GatewayError& e) {
            throw PhaseFailure(phase, e.what());
        }
        switch (quality_gate(result, max_tokens, recommended_tokens, threshold)) {
            case GateDecision::accept:
                return result;
            case GateDecision::retry_empty:
                retry_log.push_back({phase, "retry_empty", attempt});
                break;
            case GateDecision::retry_overlong:
                retry_log.push_back({phase, "retry_overlong", attempt});
                break;
        }
    }
    throw PhaseFailure(phase, "empty-after-retries: no acceptable response within " +
                                  std::to_string(max_attempts) + " attempts");
}

// ---------------------------------------------------------------------------
// Phases
// ---------------------------------------------------------------------------

inline PreTestRecord run_test_phase(Backend& student_backend, Clock& clock,
                                    const RoleConfig& student, const Question& question,
                                    const std::optional<std::string>& pretest_raw,
                                    const std::vector<DialogueTurn>& turns,
                                    const std::string& phase, std::vector<RetryEvent>& retry_log) {
    GenerationRequest request;
    request.model_id = student.model_id;
    request.temperature = student.temperature;
    request.max_tokens = student.max_tokens_test;
    request.messages = build_student_test_context(student, question, pretest_raw, turns);
    GenerationResult result =
        generate_gated(student_backend, clock, request, student.max_tokens_test,
                       student.recommended_tokens_test, student.rerun_threshold,
                       student.max_retries, phase, retry_log);
    return grade_response(question, result.content);
}

struct PretestOutcome {
    std::map<std::string, PreTestRecord> records;
    std::vector<RetryEvent> retry_log;
    std::vector<std::pair<std::string, std::string>> invalid;  // (question_id, reason)
};

inline PretestOutcome run_pretest(Backend& student_backend, Clock& clock,
                                  const RoleConfig& student,
                                  const std::vector<Question>& questions) {
    PretestOutcome out;
    for (const Question& q : questions) {
        try {
            out.records[q.question_id] = run_test_phase(student_backend, clock, student, q,
                                                        std::nullopt, {}, "pretest", out.retry_log);
        } catch (const PhaseFailure& e) {
            out.invalid.emplace_back(q.question_id, e.what());
        }
    }
    return out;
}

// Teacher generates first each round, then the student replies; both pass
// the quality gate. Contexts come exclusively from the agents builders.
// Turns accumulate in place so a phase failure keeps the completed rounds.
inline void run_interaction_into(Backend& teacher_backend, Backend& student_backend, Clock& clock,
                                 const RoleConfig& teacher, const RoleConfig& student,
                                 const Question& question, const PreTestRecord& pretest,
                                 int num_rounds, std::vector<DialogueTurn>& turns,
                                 std::vector<RetryEvent>& retry_log,
                                 Timestamps* timestamps = nullptr) {
    std::string pretest_block = render_pretest_info(question, pretest);
    for (int round = static_cast<int>(turns.size()) + 1; round <= num_rounds; ++round) {
        GenerationRequest teacher_request;
        teacher_request.model_id = teacher.model_id;
        teacher_request.temperature = teacher.temperature;
        teacher_request.max_tokens = teacher.max_tokens_dialogue;
        teacher_request.messages =
            build_teacher_context(question.category, num_rounds, teacher.recommended_tokens_dialogue,
                                  pretest_block, turns, round);
        GenerationResult teacher_result = generate_gated(
            teacher_backend, clock, teacher_request, teacher.max_tokens_dialogue,
            teacher.recommended_tokens_dialogue, teacher.rerun_threshold, teacher.max_retries,
            "teacher_round_" + std::to_string(round), retry_log);

        GenerationRequest student_request;
        student_request.model_id = student.model_id;
        student_request.temperature = student.temperature;
        student_request.max_tokens = student.max_tokens_dialogue;
        student_request.messages = build_student_dialogue_context(
            student, question.category, question, pretest.raw_response, turns, teacher_result.content);
        GenerationResult student_result = generate_gated(
            student_backend, clock, student_request, student.max_tokens_dialogue,
            student.recommended_tokens_dialogue, student.rerun_threshold, student.max_retries,
            "student_round_" + std::to_string(round), retry_log);

        DialogueTurn turn;
        turn.round = round;
        turn.teacher_text = teacher_result.content;
        turn.student_text = student_result.content;
        turn.teacher_tokens = effective_tokens(teacher_result);
        turn.student_tokens = effective_tokens(student_result);
        turns.push_back(std::move(turn));
        if (timestamps) timestamps->turn_ms.push_back(clock.now_ms());
    }
}

inline std::vector<DialogueTurn> run_interaction(Backend& teacher_backend, Backend& student_backend,
                                                 Clock& clock, const RoleConfig& teacher,
                                                 const RoleConfig& student, const Question& question,
                                                 const PreTestRecord& pretest, int num_rounds,
                                                 std::vector<RetryEvent>& retry_log,
                                                 Timestamps* timestamps = nullptr) {
    std::vector<DialogueTurn> turns;
    run_interaction_into(teacher_backend, student_backend, clock, teacher, student, question,
                         pretest, num_rounds, turns, retry_log, timestamps);
    return turns;
}

inline PostTestRecord run_posttest(Backend& student_backend, Clock& clock,
                                   const RoleConfig& student, const Question& question,
                                   const PreTestRecord& pretest,
                                   const std::vector<DialogueTurn>& turns,
                                   std::vector<RetryEvent>& retry_log) {
    if (turns.empty()) throw DataError("post-test requires completed dialogue turns");
    return run_test_phase(student_backend, clock, student, question, pretest.raw_response, turns,
                          "posttest", retry_log);
}

// One full session. Phase failures flag the transcript invalid and keep
// whatever turns completed.
inline Transcript run_session(Backend& teacher_backend, Backend& student_backend, Clock& clock,
                              const RoleConfig& teacher, const RoleConfig& student,
                              const Question& question, const PreTestRecord& pretest,
                              int num_rounds) {
    Transcript t;
    t.question_id = question.question_id;
    t.category = question.category;
    t.teacher_model = teacher.model_id;
    t.student_model = student.model_id;
    t.pretest = pretest;
    t.timestamps.pretest_ms = clock.now_ms();
    try {
        run_interaction_into(teacher_backend, student_backend, clock, teacher, student, question,
                             pretest, num_rounds, t.turns, t.retry_log, &t.timestamps);
        t.posttest = run_posttest(student_backend, clock, student, question, pretest, t.turns,
                                  t.retry_log);
        t.timestamps.posttest_ms = clock.now_ms();
    } catch (const PhaseFailure& e) {
        t.valid = false;
        t.invalid_reason = e.phase + ": " + e.what();
    }
    return t;
}

// ---------------------------------------------------------------------------
// Content boundary audit
// ---------------------------------------------------------------------------

struct BoundaryViolation {
    std::string where;    // teacher_context | student_context
    int round = 0;        // offending round, 0 for pre-dialogue material
    std::string matched;  // the substring that leaked
};

// Teacher-bound texts must not contain any option text (the gold answer text
// is options[answer_index], so it is covered); student-bound texts must not
// carry the pre-test grading marker. Student-authored text is exempt, so the
// scan runs over teacher-authored turns only.
inline std::vector<BoundaryViolation> assert_content_boundary(const Transcript& transcript,
                                                              const Question& question) {
    std::vector<BoundaryViolation> violations;
    for (const DialogueTurn& turn : transcript.turns) {
        for (const std::string& option : question.options) {
            if (option.empty()) continue;
            if (turn.teacher_text.find(option) != std::string::npos)
                violations.push_back({"teacher_context", turn.round, option});
        }
        static const std::string grading_marker = "Student's Answer is Correct or Not:";
        if (turn.teacher_text.find(grading_marker) != std::string::npos)
            violations.push_back({"student_context", turn.round, grading_marker});
    }
    return violations;
}

// ---------------------------------------------------------------------------
// Experiment fan-out
// ---------------------------------------------------------------------------

struct ExperimentConfig {
    std::vector<Question> questions;
    RoleConfig student;
    std::vector<RoleConfig> teachers;
    int num_rounds = 5;
    int max_concurrent_tasks = 5;
    std::filesystem::path output_dir;
    std::string run_label;
};

struct RunPaths {
    std::filesystem::path root;

    explicit RunPaths(const std::filesystem::path& output_dir, const std::string& run_label)
        : root(output_dir / run_label) {}

    std::filesystem::path pretest_file(const std::string& student, const std::string& qid) const {
        return root / "pretest" / path_component(student) / (path_component(qid) + ".json");
    }
    std::filesystem::path session_file(const std::string& teacher, const std::string& qid) const {
        return root / "sessions" / path_component(teacher) / (path_component(qid) + ".json");
    }
    std::filesystem::path sessions_dir(const std::string& teacher) const {
        return root / "sessions" / path_component(teacher);
    }
    std::filesystem::path run_report() const { return root / "run_report.json"; }
    std::filesystem::path metrics_dir() const { return root / "metrics"; }
    std::filesystem::path judge_dir() const { return root / "judge"; }
    std::filesystem::path review_dir() const { return root / "review"; }
    std::filesystem::path manifest() const { return root / "manifest.json"; }
};

class BackendRegistry {
public:
    void add(const std::string& model_id, std::shared_ptr<Backend> backend) {
        backends_[model_id] = std::move(backend);
    }
    Backend& for_model(const std::string& model_id) const {
        auto it = backends_.find(model_id);
        if (it == backends_.end())
            throw GatewayError(GatewayError::Kind::config, "no backend configured for " + model_id);
        return *it->second;
    }
    bool has(const std::string& model_id) const { return backends_.count(model_id) > 0; }

private:
    std::map<std::string, std::shared_ptr<Backend>> backends_;
};

using ClockFactory = std::function<std::shared_ptr<Clock>()>;

inline ClockFactory system_clock_factory() {
    auto shared = std::make_shared<SystemClock>();
    return [shared] { return shared; };
}

// Fresh virtual clock per session: timestamps depend only on the session's
// own event sequence, never on scheduling.
inline ClockFactory virtual_clock_factory() {
    return [] { return std::make_shared<VirtualClock>(); };
}

// Fixed-width worker pool over an index range. Tasks own their error
// handling; an escaping exception aborts, which is intended.
inline void parallel_for(size_t n_tasks, int max_concurrent, const std::function<void(size_t)>& fn) {
    if (n_tasks == 0) return;
    int workers = std::max(1, std::min<int>(max_concurrent, static_cast<int>(n_tasks)));
    if (workers == 1) {
        for (size_t i = 0; i < n_tasks; ++i) fn(i);
        return;
    }
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (size_t i = next.fetch_add(1); i < n_tasks; i = next.fetch_add(1)) fn(i);
        });
    }
    for (std::thread& t : pool) t.join();
}

struct InvalidSession {
    std::string teacher_model;
    std::string question_id;
    std::string reason;
};

inline void to_json(json& j, const InvalidSession& s) {
    j = json{{"teacher_model", s.teacher_model},
             {"question_id", s.question_id},
             {"reason", s.reason}};
}

struct ExperimentResult {
    long pretests_executed = 0;
    long pretests_reused = 0;
    long sessions_executed = 0;
    long sessions_skipped = 0;
    std::vector<InvalidSession> invalid;
    std::vector<Transcript> transcripts;  // valid sessions only
    std::vector<MetricsSummary> metrics;  // per teacher, sorted by model id
};

// Per-teacher aggregation over valid transcripts; UIC needs the whole run,
// so it is filled by summarize_run.
inline MetricsSummary summarize_teacher(const std::string& teacher_model,
                                        const std::vector<const Transcript*>& transcripts) {
    MetricsSummary m;
    m.teacher_model = teacher_model;
    std::vector<PreTestRecord> pre, post;
    std::map<std::string, TransitionCounts> by_category;
    for (const Transcript* t : transcripts) {
        if (!t->valid || !t->posttest) continue;
        pre.push_back(t->pretest);
        post.push_back(*t->posttest);
        TransitionCounts& c = by_category[t->category];
        bool a = t->pretest.correct, b = t->posttest->correct;
        if (!a && b) ++c.n_pos;
        else if (a && !b) ++c.n_neg;
        else if (a && b) ++c.n_keep_correct;
        else ++c.n_keep_incorrect;
    }
    if (pre.empty()) throw DataError("no valid sessions for teacher " + teacher_model);
    m.n_questions = static_cast<long>(pre.size());
    m.acc_pre = accuracy(pre);
    m.acc_post = accuracy(post);
    m.alg = alg(m.acc_pre, m.acc_post);
    for (const auto& [cat, c] : by_category) {
        m.transitions.n_pos += c.n_pos;
        m.transitions.n_neg += c.n_neg;
        m.transitions.n_keep_correct += c.n_keep_correct;
        m.transitions.n_keep_incorrect += c.n_keep_incorrect;
        m.per_category_gains[cat] = static_cast<double>(c.n_pos - c.n_neg) /
                                    static_cast<double>(c.total());
    }
    m.pnir = pnir(m.transitions);
    m.css = css(m.per_category_gains);
    return m;
}

inline std::vector<MetricsSummary> summarize_run(const std::vector<Transcript>& transcripts) {
    std::map<std::string, std::vector<const Transcript*>> by_teacher;
    std::map<std::string, std::set<std::string>> improvements;
    for (const Transcript& t : transcripts) {
        if (!t.valid || !t.posttest) continue;
        by_teacher[t.teacher_model].push_back(&t);
        if (!t.pretest.correct && t.posttest->correct)
            improvements[t.teacher_model].insert(t.question_id);
        else
            improvements[t.teacher_model];  // teacher participates even with no improvements
    }
    std::map<std::string, long> uic_counts = uic(improvements);
    std::vector<MetricsSummary> out;
    for (const auto& [teacher, list] : by_teacher) {
        MetricsSummary m = summarize_teacher(teacher, list);
        m.uic = uic_counts[teacher];
        out.push_back(std::move(m));
    }
    return out;
}

// Phase 1: pre-test per question, computed once per (student, question),
// cached on disk and shared across teachers.
inline std::map<std::string, PreTestRecord> run_pretest_phase(const ExperimentConfig& config,
                                                              const BackendRegistry& registry,
                                                              const ClockFactory& make_clock,
                                                              const RunPaths& paths,
                                                              ExperimentResult& result) {
    Backend& student_backend = registry.for_model(config.student.model_id);
    std::map<std::string, PreTestRecord> pretests;
    std::mutex mu;
    parallel_for(config.questions.size(), config.max_concurrent_tasks, [&](size_t i) {
        const Question& q = config.questions[i];
        auto file = paths.pretest_file(config.student.model_id, q.question_id);
        if (std::filesystem::exists(file)) {
            json doc = json::parse(read_text_file(file));
            check_format_version(doc, file.string());
            PreTestRecord record = doc.at("record").get<PreTestRecord>();
            std::lock_guard lock(mu);
            pretests[q.question_id] = std::move(record);
            ++result.pretests_reused;
            return;
        }
        auto clock = make_clock();
        std::vector<RetryEvent> retry_log;
        try {
            PreTestRecord record = run_test_phase(student_backend, *clock, config.student, q,
                                                  std::nullopt, {}, "pretest", retry_log);
            json doc{{"format_version", kFormatVersion},
                     {"student_model", config.student.model_id},
                     {"record", record},
                     {"retry_log", retry_log}};
            atomic_write_text(file, doc.dump(2) + "\n");
            std::lock_guard lock(mu);
            pretests[q.question_id] = std::move(record);
            ++result.pretests_executed;
        } catch (const PhaseFailure& e) {
            std::lock_guard lock(mu);
            result.invalid.push_back({"", q.question_id, std::string("pretest: ") + e.what()});
        }
    });
    return pretests;
}

// Pre-tests are computed once per (student, question) and shared across all
// teachers; sessions resume from existing files. Everything is written
// atomically, so a killed run restarts cleanly.
inline ExperimentResult run_experiment(const ExperimentConfig& config,
                                       const BackendRegistry& registry,
                                       const ClockFactory& make_clock) {
    if (config.teachers.empty()) throw DataError("experiment needs at least one teacher");
    if (config.num_rounds < 1) throw DataError("num_rounds must be >= 1");
    RunPaths paths(config.output_dir, config.run_label);
    ExperimentResult result;
    std::mutex mu;

    Backend& student_backend = registry.for_model(config.student.model_id);
    std::map<std::string, PreTestRecord> pretests =
        run_pretest_phase(config, registry, make_clock, paths, result);

    // Phase 2: one session per (teacher, question) with a valid pre-test.
    struct Task {
        const RoleConfig* teacher;
        const Question* question;
    };
    std::vector<Task> tasks;
    for (const RoleConfig& teacher : config.teachers)
        for (const Question& q : config.questions)
            if (pretests.count(q.question_id)) tasks.push_back({&teacher, &q});

    parallel_for(tasks.size(), config.max_concurrent_tasks, [&](size_t i) {
        const Task& task = tasks[i];
        auto file = paths.session_file(task.teacher->model_id, task.question->question_id);
        if (std::filesystem::exists(file)) {
            json doc = json::parse(read_text_file(file));
            Transcript t = doc.get<Transcript>();
            std::lock_guard lock(mu);
            ++result.sessions_skipped;
            if (t.valid)
                result.transcripts.push_back(std::move(t));
            else
                result.invalid.push_back({t.teacher_model, t.question_id, t.invalid_reason});
            return;
        }
        auto clock = make_clock();
        Backend& teacher_backend = registry.for_model(task.teacher->model_id);
        Transcript t = run_session(teacher_backend, student_backend, *clock, *task.teacher,
                                   config.student, *task.question,
                                   pretests.at(task.question->question_id), config.num_rounds);
        atomic_write_text(file, json(t).dump(2) + "\n");
        std::lock_guard lock(mu);
        ++result.sessions_executed;
        if (t.valid)
            result.transcripts.push_back(std::move(t));
        else
            result.invalid.push_back({t.teacher_model, t.question_id, t.invalid_reason});
    });

    // Phase 3: aggregate and persist. Orders are pinned so report bytes do
    // not depend on task scheduling.
    std::sort(result.invalid.begin(), result.invalid.end(), [](const auto& a, const auto& b) {
        return std::tie(a.teacher_model, a.question_id) < std::tie(b.teacher_model, b.question_id);
    });
    result.metrics = summarize_run(result.transcripts);
    for (const MetricsSummary& m : result.metrics)
        atomic_write_text(paths.metrics_dir() / (path_component(m.teacher_model) + ".json"),
                          json(m).dump(2) + "\n");
    atomic_write_text(paths.metrics_dir() / "summary.csv", metrics_to_csv(result.metrics));

    json report{{"format_version", kFormatVersion},
                {"run_label", config.run_label},
                {"student_model", config.student.model_id},
                {"questions", config.questions.size()},
                {"teachers", json::array()},
                {"pretests_executed", result.pretests_executed},
                {"pretests_reused", result.pretests_reused},
                {"sessions_executed", result.sessions_executed},
                {"sessions_skipped", result.sessions_skipped},
                {"invalid", result.invalid}};
    for (const RoleConfig& teacher : config.teachers)
        report["teachers"].push_back(teacher.model_id);
    atomic_write_text(paths.run_report(), report.dump(2) + "\n");
    return result;
}

inline Transcript load_transcript(const std::filesystem::path& file) {
    json doc = json::parse(read_text_file(file));
    return doc.get<Transcript>();
}

}  // namespace tutorbench
