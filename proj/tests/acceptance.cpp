// Acceptance suite: one criterion per check, one pass/fail line each.
// Metric checks run against the bundled reference fixtures; pipeline checks
// drive the CLI binary over scripted backends with a virtual clock.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <regex>
#include <sstream>

#include "e2e_fixture.hpp"

using namespace tutorbench;
namespace fs = std::filesystem;

namespace {

struct Failure {
    std::string what;
};

void require(bool condition, const std::string& what) {
    if (!condition) throw Failure{what};
}

fs::path fixture(const std::string& name) {
    return fs::path(TB_FIXTURE_DIR) / name;
}

struct CommandResult {
    int exit_code = -1;
    std::string output;
};

CommandResult run_cli(const std::string& args, const fs::path& workdir) {
    fs::path log = workdir / "acceptance_cli.log";
    std::string command = "cd " + workdir.string() + " && " + std::string(TB_CLI_PATH) + " " + args +
                          " > " + log.string() + " 2>&1";
    int status = std::system(command.c_str());
    CommandResult result;
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    if (fs::exists(log)) result.output = read_text_file(log);
    return result;
}

fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / ("tb_accept_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::map<fs::path, std::string> snapshot(const fs::path& root, const std::string& subdir) {
    std::map<fs::path, std::string> bytes;
    fs::path base = root / subdir;
    if (!fs::exists(base)) return bytes;
    for (const auto& entry : fs::recursive_directory_iterator(base))
        if (entry.is_regular_file())
            bytes[fs::relative(entry.path(), root)] = read_text_file(entry.path());
    return bytes;
}

double round5(double v) { return std::round(v * 1e5) / 1e5; }

// --------------------------------------------------------------------------
// Criteria
// --------------------------------------------------------------------------

void criterion_alg() {
    auto start = std::chrono::steady_clock::now();
    json table1 = json::parse(read_text_file(fixture("table1_cells.json")));
    long checked = 0;
    for (const json& cell : table1["cells"]) {
        double delta = alg(cell["pre"].get<double>(), cell["post"].get<double>());
        require(std::abs(delta - cell["delta"].get<double>()) <= 0.01 + 1e-12,
                "table1 " + cell["teacher"].get<std::string>() + " delta mismatch");
        ++checked;
    }
    require(checked == 9, "expected 9 table1 cells");
    json table3 = json::parse(read_text_file(fixture("table3_rows.json")));
    checked = 0;
    for (const json& row : table3["rows"]) {
        for (const std::string& group : {"gpqa", "mmlu", "overall"}) {
            double delta = alg(row[group]["pre"].get<double>(), row[group]["post"].get<double>());
            require(std::abs(delta - row[group]["delta"].get<double>()) <= 0.01 + 1e-12,
                    "table3 " + row["model"].get<std::string>() + " " + group + " delta mismatch");
        }
        ++checked;
    }
    require(checked == 14, "expected 14 table3 rows");
    double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    require(elapsed < 1.0, "metric oracle exceeded 1s");
}

void criterion_pnir() {
    TransitionCounts reference;
    reference.n_neg = 36;
    reference.n_pos = 200;
    require(pnir(reference).has_value() && *pnir(reference) == 0.18, "36/200 must equal 0.18");

    TransitionCounts self_pair;  // equal positive and negative cases
    self_pair.n_neg = 8;
    self_pair.n_pos = 8;
    require(*pnir(self_pair) == 1.00, "n_neg == n_pos must equal 1.00");

    TransitionCounts no_positive;
    no_positive.n_neg = 5;
    require(!pnir(no_positive).has_value(), "n_pos = 0 must be undefined");
    require(format_metric(pnir(no_positive)) == "-", "undefined must render as '-'");
}

void criterion_css() {
    json doc = json::parse(read_text_file(fixture("subject_gains_llama70b.json")));
    SubjectGains gains;
    for (auto& [cat, g] : doc["gains"].items()) gains[cat] = g.get<double>();
    require(gains.size() == 13, "expected 13 subjects");
    double expected = doc["css_expected"].get<double>();
    double tolerance = doc["css_tolerance"].get<double>();
    auto value = css(gains);
    require(value.has_value(), "css must be defined");
    require(std::abs(*value - expected) <= tolerance, "css outside the accepted band");
    // The share normalization is forced: the raw per-subject standard
    // deviation misses the band.
    std::vector<double> raw;
    for (const auto& [cat, g] : gains) raw.push_back(g / 100.0);
    double raw_std = population_std(raw);
    require(std::abs(raw_std - 0.060) <= 0.002, "raw-gain std expected near 0.060");
    require(std::abs(raw_std - expected) > tolerance, "raw-gain std must fail the css band");
}

void criterion_run_variance() {
    json doc = json::parse(read_text_file(fixture("table2_pairs.json")));
    std::vector<double> variances;
    for (const json& pair : doc["pairs"]) {
        double variance = run_variance(pair["alg_r1"].get<double>(), pair["alg_r2"].get<double>());
        require(round5(variance) == pair["variance"].get<double>(),
                pair["model"].get<std::string>() + " variance mismatch");
        variances.push_back(variance);
    }
    require(variances.size() == 3, "expected 3 repeated-run pairs");
    double mean = (variances[0] + variances[1] + variances[2]) / 3.0;
    double lo = doc["mean_variance_band"][0].get<double>();
    double hi = doc["mean_variance_band"][1].get<double>();
    require(mean >= lo && mean <= hi, "mean variance outside band");
}

void criterion_alignment() {
    json meta = json::parse(read_text_file(fixture("alignment_pairs.json")));
    std::vector<DialoguePair> pairs;
    std::map<std::string, std::string> judge_choice;
    for (const json& p : meta["pairs"]) {
        DialoguePair pair;
        pair.question_id = p["question_id"].get<std::string>();
        auto transcript = [&](const std::string& teacher, bool improved) {
            Transcript t;
            t.question_id = pair.question_id;
            t.teacher_model = teacher;
            t.student_model = "student-sim";
            t.pretest.question_id = pair.question_id;
            t.pretest.correct = false;
            PostTestRecord post = t.pretest;
            post.correct = improved;
            t.posttest = post;
            for (int round = 1; round <= 5; ++round)
                t.turns.push_back({round, "q", "a", 1, 1});
            return t;
        };
        pair.improving = transcript(p["improving_teacher"].get<std::string>(), true);
        pair.control = transcript(p["control_teacher"].get<std::string>(), false);
        pair.improving_is_teacher1 = p["improving_is_teacher1"].get<bool>();
        judge_choice[pair.question_id] = "gain-model";
        pairs.push_back(std::move(pair));
    }
    auto ratings = ingest_ratings({fixture("alignment_ratings.csv")});
    AlignmentReport report = alignment(pairs, ratings, judge_choice);
    require(report.n_pairs == 50, "expected 50 pairs");
    require(report.n_agreements == 39, "expected 39 agreements");
    require(report.agreement_rate == 0.78, "agreement rate must be exactly 0.78");
    require(std::abs(report.mean_score_gain_side - 7.38) < 1e-9, "gain-side mean must be 7.38");
    require(std::abs(report.mean_score_control_side - 6.41) < 1e-9, "control mean must be 6.41");
}

void criterion_sampler() {
    std::vector<std::string> categories = {"business", "law",     "psychology", "biology",
                                           "chemistry", "history", "health",     "economics",
                                           "math",      "physics", "engineering", "philosophy",
                                           "computer science"};
    std::vector<Question> questions;
    std::map<std::string, QuestionStats> stats;
    int id = 0;
    auto add = [&](const std::string& category, int level, int count) {
        for (int i = 0; i < count; ++i) {
            Question q;
            q.question_id = "q" + std::to_string(id++);
            q.question = "text";
            q.options = {"a", "b"};
            q.answer = "A";
            q.answer_index = 0;
            q.category = category;
            questions.push_back(q);
            QuestionStats s;
            s.question_id = q.question_id;
            s.valid_responses = 100;
            s.correct_responses = (level - 1) * 10 + 5;
            stats[s.question_id] = s;
        }
    };
    for (const std::string& cat : categories)
        for (int level = 1; level <= 10; ++level) add(cat, level, 12);
    // Pad to 20k questions with excluded and extra rows.
    for (int level = 1; level <= 10; ++level) add("other", level, 100);
    while (id < 20000) add(categories[static_cast<size_t>(id) % 13], 1 + id % 10, 1);

    auto start = std::chrono::steady_clock::now();
    SampleResult sample = stratified_sample(questions, stats);
    double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    require(sample.questions.size() == 1300, "saturated sample must be exactly 1300");
    std::map<std::pair<std::string, int>, long> counts;
    for (const Question& q : sample.questions) {
        require(q.category != "other", "excluded category leaked into the sample");
        ++counts[{q.category, compute_difficulty(stats.at(q.question_id))}];
    }
    for (const auto& [cell, count] : counts)
        require(count <= 10, "cell bound exceeded for " + cell.first);
    require(elapsed < 1.0, "20k-question sampling exceeded 1s");
}

void criterion_determinism() {
    auto start = std::chrono::steady_clock::now();
    fs::path dir_a = fresh_dir("det_a");
    fs::path dir_b = fresh_dir("det_b");
    tbtest::write_e2e_fixture(dir_a, "r");
    tbtest::write_e2e_fixture(dir_b, "r");
    require(run_cli("run --config config.json", dir_a).exit_code == 0, "first run failed");
    require(run_cli("run --config config.json", dir_b).exit_code == 0, "second run failed");
    fs::path run_a = dir_a / "runs" / "r";
    fs::path run_b = dir_b / "runs" / "r";
    auto sessions_a = snapshot(run_a, "sessions");
    require(sessions_a.size() == 10, "expected 10 transcripts (2 teachers x 5 questions)");
    require(sessions_a == snapshot(run_b, "sessions"), "transcripts differ between runs");
    require(snapshot(run_a, "metrics") == snapshot(run_b, "metrics"), "metrics differ between runs");

    // Simulated kill: drop three sessions and one pre-test, then resume.
    fs::remove(run_a / "sessions" / "teach-alpha" / "q2.json");
    fs::remove(run_a / "sessions" / "teach-beta" / "q4.json");
    fs::remove(run_a / "sessions" / "teach-beta" / "q5.json");
    CommandResult resumed = run_cli("run --config config.json", dir_a);
    require(resumed.exit_code == 0, "resume failed");
    require(resumed.output.find("sessions: 3 executed, 7 skipped") != std::string::npos,
            "resume must execute exactly the 3 missing sessions");
    require(snapshot(run_a, "sessions") == sessions_a, "resumed transcripts not byte-identical");
    double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    require(elapsed < 5.0, "end-to-end determinism check exceeded 5s");
}

void criterion_content_boundary() {
    fs::path dir = fresh_dir("boundary");
    tbtest::write_e2e_fixture(dir, "b");
    require(run_cli("run --config config.json", dir).exit_code == 0, "run failed");
    CommandResult clean = run_cli("verify --config config.json", dir);
    require(clean.exit_code == 0, "verify must pass on compliant transcripts");
    require(clean.output.find("0 violations") != std::string::npos, "unexpected violations");

    fs::path victim = dir / "runs" / "b" / "sessions" / "teach-alpha" / "q3.json";
    json doc = json::parse(read_text_file(victim));
    doc["turns"][1]["teacher_text"] =
        doc["turns"][1]["teacher_text"].get<std::string>() + " the key is opt-q3-beta";
    atomic_write_text(victim, doc.dump(2) + "\n");
    CommandResult flagged = run_cli("verify --config config.json", dir);
    require(flagged.exit_code != 0, "planted violation must fail verify");
    require(flagged.output.find("teacher_context round 2") != std::string::npos,
            "violation must carry round-level detail");
    require(flagged.output.find("opt-q3-beta") != std::string::npos,
            "violation must name the leaked substring");
}

void criterion_quality_gate() {
    // (a) zero-token twice, then text.
    {
        ScriptedBackend backend;
        backend.add_sequence({}, {{"", 0, std::nullopt}, {"", 0, std::nullopt},
                                  {"recovered", 40, std::nullopt}});
        VirtualClock clock;
        GenerationRequest request;
        request.messages = {{Role::user, "go"}};
        std::vector<RetryEvent> retry_log;
        GenerationResult result =
            generate_gated(backend, clock, request, 1024, 150, 0.80, 5, "phase", retry_log);
        require(result.content == "recovered", "must succeed on the third attempt");
        require(retry_log.size() == 2, "expected 2 logged retries");
        require(retry_log[0].reason == "retry_empty" && retry_log[1].reason == "retry_empty",
                "retries must be retry_empty");
    }
    // (b) overlong 900/1024, then text.
    {
        ScriptedBackend backend;
        backend.add_sequence({}, {{"long", 900, std::nullopt}, {"concise", 60, std::nullopt}});
        VirtualClock clock;
        GenerationRequest request;
        request.messages = {{Role::user, "go"}};
        std::vector<RetryEvent> retry_log;
        GenerationResult result =
            generate_gated(backend, clock, request, 1024, 150, 0.80, 5, "phase", retry_log);
        require(result.content == "concise", "must accept the retried response");
        require(retry_log.size() == 1 && retry_log[0].reason == "retry_overlong",
                "expected exactly one overlong retry");
    }
    // (c) six transport failures exhaust the backoff schedule.
    {
        ScriptedBackend backend;
        backend.set_default({"", std::nullopt, "transport"});
        VirtualClock clock;
        GenerationRequest request;
        request.messages = {{Role::user, "go"}};
        bool failed = false;
        try {
            complete(backend, request, {}, clock);
        } catch (const GatewayError& e) {
            failed = true;
            require(e.attempts == 6, "expected 6 attempts");
        }
        require(failed, "transport failures must raise after retries");
        std::vector<double> expected{10.0, 20.0, 40.0, 80.0, 160.0};
        require(clock.sleeps() == expected, "backoff delays must be 10/20/40/80/160");
    }
}

void criterion_judge_schema() {
    auto doc_for = [](Perspective p, const std::string& choice) {
        return tbtest::judge_document(p, choice);
    };
    // Rejections.
    json bad_score = doc_for(Perspective::holistic, "teacher_a");
    bad_score["teacher_a"]["Feedback Effectiveness"]["score"] = 11;
    bool rejected = false;
    try {
        parse_report(bad_score, Perspective::holistic);
    } catch (const JudgeParseError&) {
        rejected = true;
    }
    require(rejected, "score 11 must be rejected");

    json no_verdict = doc_for(Perspective::holistic, "teacher_a");
    no_verdict.erase("verdict");
    rejected = false;
    try {
        parse_report(no_verdict, Perspective::holistic);
    } catch (const JudgeParseError&) {
        rejected = true;
    }
    require(rejected, "missing verdict must be rejected");

    json wrong_dims = doc_for(Perspective::teacher_centric, "teacher_a");
    rejected = false;
    try {
        parse_report(wrong_dims, Perspective::holistic);
    } catch (const JudgeParseError&) {
        rejected = true;
    }
    require(rejected, "wrong dimension count must be rejected");

    // A full scripted pair evaluation: 34 dimension scores + 3 verdicts.
    Transcript x, y;
    for (auto* t : {&x, &y}) {
        t->question_id = "qa";
        t->student_model = "student-sim";
        t->pretest.question_id = "qa";
        for (int round = 1; round <= 5; ++round) t->turns.push_back({round, "q", "a", 1, 1});
        PostTestRecord post = t->pretest;
        t->posttest = post;
    }
    x.teacher_model = "model-one";
    y.teacher_model = "model-two";
    AnonymizedPair pair = anonymize_pair(x, y, 99);
    ScriptedBackend backend;
    for (Perspective p : {Perspective::holistic, Perspective::teacher_centric,
                          Perspective::student_centric}) {
        ScriptMatcher m;
        m.kind = "judge";
        m.schema = perspective_name(p) + "_comparative";
        backend.add_rule(m, {doc_for(p, "teacher_a").dump(), 100, std::nullopt});
    }
    VirtualClock clock;
    JudgeConfig config;
    config.model_id = "judge-model";
    auto reports = evaluate_pair(backend, clock, config, pair,
                                 {Perspective::holistic, Perspective::teacher_centric,
                                  Perspective::student_centric});
    long dim_scores = 0, verdicts = 0;
    for (const PerspectiveReport& r : reports) {
        for (const auto& [teacher, scores] : r.scores) dim_scores += static_cast<long>(scores.size());
        verdicts += r.verdict_model.empty() ? 0 : 1;
    }
    require(dim_scores == 34, "expected 34 dimension scores per pair");
    require(verdicts == 3, "expected 3 verdicts per pair");
    require(dimension_analysis_count(296) == 5032, "296 dialogues must account to 5032 analyses");
}

void criterion_extraction() {
    // Brute-force oracle: collect all matches, keep the last.
    auto oracle = [](const std::string& text) -> std::optional<char> {
        std::regex canonical(R"(The answer is \(([A-Z])\))");
        std::regex parenthesized(R"(\(([A-Z])\))");
        std::optional<char> last_canonical, last_paren;
        for (auto it = std::sregex_iterator(text.begin(), text.end(), canonical);
             it != std::sregex_iterator(); ++it)
            last_canonical = (*it)[1].str()[0];
        for (auto it = std::sregex_iterator(text.begin(), text.end(), parenthesized);
             it != std::sregex_iterator(); ++it)
            last_paren = (*it)[1].str()[0];
        return last_canonical ? last_canonical : last_paren;
    };
    std::vector<std::string> shapes = {
        "reasoning text. The answer is (E)",
        "The answer is (A). Revised: The answer is (C)",
        "first (A) ... The answer is (C). The answer is (B)",
        "no answer present",
        "the answer is (c)",
        "the answer is (C)",
        "The answer is (J)",
        "leaning towards (B) here",
        "(A) then (D) with no canonical phrase",
        "The answer is E",
        "The answer is (E).",
        "line one\nline two\nThe answer is (H)\n",
        "The answer is (B) although (D) tempted me",
        "(Z)",
    };
    require(shapes.size() >= 12, "need at least 12 shapes");
    for (const std::string& text : shapes) {
        auto expected = oracle(text);
        auto actual = extract_answer(text);
        require(actual == expected,
                "extraction mismatch on: " + text);
    }
}

struct Criterion {
    int id;
    std::string name;
    std::function<void()> check;
};

}  // namespace

int main() {
    std::vector<Criterion> criteria = {
        {1, "metric oracle: learning gain over reference cells", criterion_alg},
        {2, "metric oracle: positive-negative impact ratio", criterion_pnir},
        {3, "metric oracle: cross-subject stability", criterion_css},
        {4, "metric oracle: repeated-run variance", criterion_run_variance},
        {5, "alignment oracle: 39/50 majority fixture", criterion_alignment},
        {6, "sampler law: saturated stratified sample", criterion_sampler},
        {7, "end-to-end determinism and resume", criterion_determinism},
        {8, "content boundary audit", criterion_content_boundary},
        {9, "quality gate and transport recovery", criterion_quality_gate},
        {10, "judge schema law and pair accounting", criterion_judge_schema},
        {11, "answer extraction against the brute-force oracle", criterion_extraction},
    };
    int failures = 0;
    for (const Criterion& criterion : criteria) {
        try {
            criterion.check();
            std::cout << "[PASS] criterion " << criterion.id << ": " << criterion.name << "\n";
        } catch (const Failure& f) {
            ++failures;
            std::cout << "[FAIL] criterion " << criterion.id << ": " << criterion.name << " — "
                      << f.what << "\n";
        } catch (const std::exception& e) {
            ++failures;
            std::cout << "[FAIL] criterion " << criterion.id << ": " << criterion.name
                      << " — unexpected error: " << e.what() << "\n";
        }
    }
    if (failures == 0) {
        std::cout << "all " << criteria.size() << " acceptance criteria passed\n";
        return 0;
    }
    std::cout << failures << " acceptance criteria failed\n";
    return 1;
}
