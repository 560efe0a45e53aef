// Drives the built binary end to end over scripted backends: run/resume,
// exit codes, verify, metrics, judge, and the review workflow.

#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "e2e_fixture.hpp"

using namespace tutorbench;
namespace fs = std::filesystem;

namespace {

struct CommandResult {
    int exit_code = -1;
    std::string output;  // stdout + stderr
};

CommandResult run_cli(const std::string& args, const fs::path& workdir) {
    fs::path log = workdir / "cli_output.log";
    std::string command = "cd " + workdir.string() + " && " + std::string(TB_CLI_PATH) + " " + args +
                          " > " + log.string() + " 2>&1";
    int status = std::system(command.c_str());
    CommandResult result;
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    if (fs::exists(log)) result.output = read_text_file(log);
    return result;
}

fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / ("tb_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("usage errors exit with code 1", "[cli]") {
    fs::path dir = fresh_dir("usage");
    CHECK(run_cli("", dir).exit_code == 1);
    CHECK(run_cli("unknown-subcommand", dir).exit_code == 1);
    CHECK(run_cli("run", dir).exit_code == 1);  // missing --config
}

TEST_CASE("missing or malformed config exits with code 1", "[cli]") {
    fs::path dir = fresh_dir("badconfig");
    CHECK(run_cli("run --config nonexistent.json", dir).exit_code == 1);
    atomic_write_text(dir / "broken.json", "{not json");
    CHECK(run_cli("run --config broken.json", dir).exit_code == 1);
}

TEST_CASE("dry run prints the plan without executing", "[cli]") {
    fs::path dir = fresh_dir("dryrun");
    tbtest::write_e2e_fixture(dir, "plan");
    CommandResult result = run_cli("run --config config.json --dry-run", dir);
    CHECK(result.exit_code == 0);
    CHECK(result.output.find("sessions planned: 10") != std::string::npos);
    CHECK(result.output.find("config_hash: ") != std::string::npos);
    CHECK_FALSE(fs::exists(dir / "runs" / "plan" / "sessions"));
}

TEST_CASE("config hash is stable under key reordering", "[cli]") {
    fs::path dir = fresh_dir("hash");
    tbtest::write_e2e_fixture(dir, "h");
    std::string hash_of = [&](const CommandResult& r) {
        size_t pos = r.output.find("config_hash: ");
        REQUIRE(pos != std::string::npos);
        return r.output.substr(pos + 13, 16);
    }(run_cli("run --config config.json --dry-run", dir));

    // Rewrite the config with keys in a different order; nlohmann re-sorts
    // on parse, so we shuffle by rebuilding the document bottom-up.
    json doc = json::parse(read_text_file(dir / "config.json"));
    json reordered;
    std::vector<std::string> keys;
    for (auto& [key, value] : doc.items()) keys.push_back(key);
    for (auto it = keys.rbegin(); it != keys.rend(); ++it) reordered[*it] = doc[*it];
    atomic_write_text(dir / "config.json", reordered.dump(0) + "\n");
    CommandResult second = run_cli("run --config config.json --dry-run", dir);
    CHECK(second.output.find("config_hash: " + hash_of) != std::string::npos);
}

TEST_CASE("full scripted pipeline", "[cli]") {
    fs::path dir = fresh_dir("pipeline");
    tbtest::write_e2e_fixture(dir, "demo");

    CommandResult first = run_cli("run --config config.json", dir);
    REQUIRE(first.exit_code == 0);
    CHECK(first.output.find("sessions: 10 executed, 0 skipped") != std::string::npos);
    fs::path run_dir = dir / "runs" / "demo";
    CHECK(fs::exists(run_dir / "run_report.json"));
    CHECK(fs::exists(run_dir / "sessions" / "teach-alpha" / "q1.json"));
    CHECK(fs::exists(run_dir / "metrics" / "summary.csv"));

    SECTION("second run performs zero new sessions") {
        CommandResult second = run_cli("run --config config.json", dir);
        REQUIRE(second.exit_code == 0);
        CHECK(second.output.find("sessions: 0 executed, 10 skipped") != std::string::npos);
    }

    SECTION("changed config refuses to resume without the override") {
        json doc = json::parse(read_text_file(dir / "config.json"));
        doc["max_concurrent_tasks"] = 3;
        atomic_write_text(dir / "config.json", doc.dump(2) + "\n");
        CommandResult refused = run_cli("run --config config.json", dir);
        CHECK(refused.exit_code == 1);
        CHECK(refused.output.find("force-resume") != std::string::npos);
        CommandResult forced = run_cli("run --config config.json --force-resume", dir);
        CHECK(forced.exit_code == 0);
    }

    SECTION("verify passes on compliant transcripts") {
        CommandResult verify = run_cli("verify --config config.json", dir);
        CHECK(verify.exit_code == 0);
        CHECK(verify.output.find("10 transcripts, 0 violations") != std::string::npos);
    }

    SECTION("verify flags a planted boundary violation with round detail") {
        fs::path victim = run_dir / "sessions" / "teach-alpha" / "q2.json";
        json doc = json::parse(read_text_file(victim));
        doc["turns"][2]["teacher_text"] =
            doc["turns"][2]["teacher_text"].get<std::string>() + " notice opt-q2-beta here";
        atomic_write_text(victim, doc.dump(2) + "\n");
        CommandResult verify = run_cli("verify --config config.json", dir);
        CHECK(verify.exit_code == 2);
        CHECK(verify.output.find("teacher_context round 3") != std::string::npos);
        CHECK(verify.output.find("opt-q2-beta") != std::string::npos);
    }

    SECTION("metrics subcommand reproduces the aggregate table") {
        CommandResult metrics = run_cli("metrics --config config.json", dir);
        REQUIRE(metrics.exit_code == 0);
        CHECK(metrics.output.find("teach-alpha") != std::string::npos);
        // alpha: pre 2/5, post 4/5.
        CHECK(metrics.output.find("0.4000,0.8000,0.4000") != std::string::npos);
    }

    SECTION("judge, review-export, and review-align complete the pipeline") {
        CommandResult judged = run_cli("judge --config config.json --auto-uic", dir);
        REQUIRE(judged.exit_code == 0);
        CHECK(fs::exists(run_dir / "judge" / "scores.csv"));
        CHECK(fs::exists(run_dir / "judge" / "q1_holistic.json"));
        json report = json::parse(read_text_file(run_dir / "judge" / "q1_holistic.json"));
        CHECK(report["label_map"].size() == 2);
        CHECK(report["verdict"]["model"].get<std::string>() != "");

        CommandResult exported = run_cli("review-export --config config.json --n 2 --seed 5", dir);
        REQUIRE(exported.exit_code == 0);
        json pairs = json::parse(read_text_file(run_dir / "review" / "pairs.json"));
        REQUIRE(pairs["pairs"].size() == 2);

        // One rater scoring Teacher 1 higher on both pairs.
        std::string csv = ratings_csv_header() + "\n";
        for (const json& p : pairs["pairs"])
            csv += "expert1," + p["question_id"].get<std::string>() + ",8,6,,no,\n";
        atomic_write_text(dir / "ratings.csv", csv);
        CommandResult aligned = run_cli("review-align --config config.json --ratings ratings.csv", dir);
        REQUIRE(aligned.exit_code == 0);
        CHECK(fs::exists(run_dir / "review" / "alignment.json"));
        json alignment = json::parse(read_text_file(run_dir / "review" / "alignment.json"));
        CHECK(alignment["n_pairs"] == 2);
    }

    SECTION("questionnaires are blind") {
        run_cli("judge --config config.json --auto-uic", dir);
        run_cli("review-export --config config.json --n 2 --seed 5", dir);
        for (const auto& entry : fs::directory_iterator(run_dir / "review")) {
            if (entry.path().filename().string().rfind("review_", 0) != 0) continue;
            std::string text = read_text_file(entry.path());
            CHECK(text.find("teach-alpha") == std::string::npos);
            CHECK(text.find("teach-beta") == std::string::npos);
        }
    }
}

TEST_CASE("metrics on a missing run dir names the offending path", "[cli]") {
    fs::path dir = fresh_dir("norun");
    tbtest::write_e2e_fixture(dir, "never-ran");
    CommandResult result = run_cli("metrics --config config.json", dir);
    CHECK(result.exit_code == 2);
    CHECK(result.output.find("never-ran") != std::string::npos);
}

TEST_CASE("corrupt transcript is a data error naming the file", "[cli]") {
    fs::path dir = fresh_dir("corrupt");
    tbtest::write_e2e_fixture(dir, "c");
    REQUIRE(run_cli("run --config config.json", dir).exit_code == 0);
    fs::path victim = dir / "runs" / "c" / "sessions" / "teach-beta" / "q4.json";
    atomic_write_text(victim, "{broken");
    CommandResult result = run_cli("metrics --config config.json", dir);
    CHECK(result.exit_code == 2);
    CHECK(result.output.find("q4.json") != std::string::npos);
}

TEST_CASE("persistently unevaluable judge pairs exit with code 3", "[cli]") {
    fs::path dir = fresh_dir("badjudge");
    tbtest::write_e2e_fixture(dir, "j");
    REQUIRE(run_cli("run --config config.json", dir).exit_code == 0);
    // Replace the judge rules with garbage output.
    json script = json::parse(read_text_file(dir / "script.json"));
    script["models"]["judge-model"] = {{"default", {{"reply", "not json"}, {"tokens", 5}}}};
    atomic_write_text(dir / "script.json", script.dump(2) + "\n");
    CommandResult result = run_cli("judge --config config.json --auto-uic", dir);
    CHECK(result.exit_code == 3);
    CHECK(result.output.find("unevaluated") != std::string::npos);
}

TEST_CASE("sample subcommand produces a stratified corpus and coverage table", "[cli]") {
    fs::path dir = fresh_dir("sample");
    // Corpus: two categories, a handful of questions, plus an "other" row.
    std::string corpus;
    json stats = json::object();
    int id = 0;
    for (const std::string& cat : {"law", "math", "other"}) {
        for (int i = 0; i < 4; ++i) {
            std::string qid = "s" + std::to_string(id++);
            json rec{{"question_id", qid},
                     {"question", "q " + qid},
                     {"options", {"a", "b"}},
                     {"answer", "A"},
                     {"answer_index", 0},
                     {"cot_content", ""},
                     {"category", cat}};
            corpus += rec.dump() + "\n";
            stats[qid] = {{"valid_responses", 10}, {"correct_responses", 5}};
        }
    }
    atomic_write_text(dir / "corpus.jsonl", corpus);
    atomic_write_text(dir / "stats.json", stats.dump());
    CommandResult result = run_cli(
        "sample --input corpus.jsonl --stats stats.json --out sampled.jsonl "
        "--coverage coverage.csv --per-cell 3",
        dir);
    REQUIRE(result.exit_code == 0);
    ParseResult sampled = parse_corpus(dir / "sampled.jsonl", CorpusFormat::native);
    CHECK(sampled.questions.size() == 6);  // 3 per cell, 2 kept categories
    for (const Question& q : sampled.questions) CHECK(q.category != "other");
    std::string coverage = read_text_file(dir / "coverage.csv");
    CHECK(coverage.find("law,6,3") != std::string::npos);
}
