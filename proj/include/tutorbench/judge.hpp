#pragma once
// Comparative LLM-as-judge evaluation: anonymized transcript pairs scored
// across three analytical perspectives (17 dimensions total) with
// schema-validated structured output and seeded side assignment.

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "tutorbench/protocol.hpp"

namespace tutorbench {

enum class Perspective { holistic, teacher_centric, student_centric };

inline std::string perspective_name(Perspective p) {
    switch (p) {
        case Perspective::holistic: return "holistic";
        case Perspective::teacher_centric: return "teacher_centric";
        case Perspective::student_centric: return "student_centric";
    }
    return "holistic";
}

inline Perspective perspective_from_string(const std::string& s) {
    if (s == "holistic") return Perspective::holistic;
    if (s == "teacher_centric") return Perspective::teacher_centric;
    if (s == "student_centric") return Perspective::student_centric;
    throw DataError("unknown perspective: " + s);
}

inline const std::vector<std::string>& perspective_dimensions(Perspective p) {
    static const std::vector<std::string> holistic{
        "Assessment Effectiveness", "Questioning Effectiveness", "Feedback Effectiveness",
        "Instructional Adaptation Effectiveness", "Learning Objective Achievement Effectiveness"};
    static const std::vector<std::string> teacher{
        "Question Relevance",      "Cognitive Level",        "Knowledge Dimension",
        "Question Diversity",      "Scaffolding Progression", "Metacognitive Promotion"};
    static const std::vector<std::string> student{
        "Response Relevance",        "Cognitive Level Demonstration", "Knowledge Dimension Integration",
        "Response Diversity",        "Elaboration Progression",       "Metacognitive Reflection"};
    switch (p) {
        case Perspective::holistic: return holistic;
        case Perspective::teacher_centric: return teacher;
        case Perspective::student_centric: return student;
    }
    return holistic;
}

struct DimensionScore {
    std::string dimension;
    std::string analysis;
    int score = 0;  // 1..10
};

enum class Verdict { A, B, tie };

inline std::string verdict_label(Verdict v) {
    switch (v) {
        case Verdict::A: return "teacher_a";
        case Verdict::B: return "teacher_b";
        case Verdict::tie: return "tie";
    }
    return "tie";
}

struct PerspectiveReport {
    Perspective perspective = Perspective::holistic;
    std::string question_id;
    // Keyed by anonymous label before de-anonymization, by model id after.
    std::map<std::string, std::vector<DimensionScore>> scores;
    Verdict verdict = Verdict::tie;
    std::string verdict_analysis;
    std::string verdict_model;  // winning model id after de-anonymization; "tie" otherwise
};

struct AnonymizedPair {
    std::string question_id;
    std::string category;
    std::string teacher_a_model;
    std::string teacher_b_model;
    const Transcript* transcript_a = nullptr;
    const Transcript* transcript_b = nullptr;
};

// Deterministic side assignment from (seed, question_id); the payload
// carries only the anonymous labels.
inline AnonymizedPair anonymize_pair(const Transcript& x, const Transcript& y, uint64_t seed) {
    if (x.question_id != y.question_id)
        throw DataError("cannot pair transcripts for different questions: " + x.question_id +
                        " vs " + y.question_id);
    if (x.student_model != y.student_model)
        throw DataError("cannot pair transcripts with different student models on " + x.question_id);
    std::mt19937_64 rng(seed ^ fnv1a64(x.question_id));
    bool swap_sides = (rng() & 1) != 0;
    AnonymizedPair pair;
    pair.question_id = x.question_id;
    pair.category = x.category;
    pair.transcript_a = swap_sides ? &y : &x;
    pair.transcript_b = swap_sides ? &x : &y;
    pair.teacher_a_model = pair.transcript_a->teacher_model;
    pair.teacher_b_model = pair.transcript_b->teacher_model;
    return pair;
}

namespace detail {

inline std::string format_interaction(const Transcript& t, Perspective p) {
    std::string out;
    for (const DialogueTurn& turn : t.turns) {
        if (p != Perspective::student_centric) out += "Teacher: " + turn.teacher_text + "\n";
        if (p != Perspective::teacher_centric) out += "Student: " + turn.student_text + "\n";
    }
    return out;
}

}  // namespace detail

inline std::string judge_system_message() {
    return "You are an expert in educational assessment with a deep understanding of learning "
           "theories and pedagogical practices. Your task is to evaluate the teaching "
           "effectiveness based on provided teacher-student interaction data (which may include "
           "pre-test results and the dialogue). Carefully analyze the interaction according to "
           "the specific dimensions and instructions provided for the current evaluation task. "
           "Output your evaluation in the specified structured JSON format, adhering strictly to "
           "the provided JSON schema.";
}

// Holistic payloads carry the pre-test context and full dialogues; the
// centric views carry only their side's lines and no pre-test block.
inline std::string build_judge_payload(Perspective perspective, const AnonymizedPair& pair) {
    std::string out = "Question ID: " + pair.question_id + "\n";
    out += "Category: " + pair.category + "\n\n";
    if (perspective == Perspective::holistic) {
        json pretest = pair.transcript_a->pretest;
        out += "Pre-test Result:\n" + pretest.dump(2) + "\n\n";
    }
    out += "<|The Start of teacher_a's Interaction with Student|>\n";
    out += detail::format_interaction(*pair.transcript_a, perspective);
    out += "<|The End of teacher_a's Interaction with Student|>\n\n";
    out += "<|The Start of teacher_b's Interaction with Student|>\n";
    out += detail::format_interaction(*pair.transcript_b, perspective);
    out += "<|The End of teacher_b's Interaction with Student|>\n\n";
    out += "Please provide your evaluation of both teachers:";
    return out;
}

inline json judge_response_schema(Perspective perspective) {
    json dimension_props = json::object();
    json required_dims = json::array();
    for (const std::string& dim : perspective_dimensions(perspective)) {
        dimension_props[dim] = {
            {"type", "object"},
            {"properties",
             {{"analysis", {{"type", "string"}}},
              {"score", {{"type", "integer"}, {"minimum", 1}, {"maximum", 10}}}}},
            {"required", json::array({"analysis", "score"})}};
        required_dims.push_back(dim);
    }
    json teacher_obj = {{"type", "object"},
                        {"properties", dimension_props},
                        {"required", required_dims},
                        {"additionalProperties", false}};
    return json{
        {"type", "object"},
        {"properties",
         {{"teacher_a", teacher_obj},
          {"teacher_b", teacher_obj},
          {"verdict",
           {{"type", "object"},
            {"properties",
             {{"analysis", {{"type", "string"}}},
              {"choice", {{"type", "string"}, {"enum", json::array({"teacher_a", "teacher_b", "tie"})}}}}},
            {"required", json::array({"analysis", "choice"})}}}}},
        {"required", json::array({"teacher_a", "teacher_b", "verdict"})},
        {"additionalProperties", false}};
}

struct JudgeConfig {
    std::string model_id;
    double temperature = 0.0;
    int max_tokens = 4096;
    int max_attempts = 5;
    uint64_t seed = 0;
};

inline void to_json(json& j, const JudgeConfig& c) {
    j = json{{"model_id", c.model_id},
             {"temperature", c.temperature},
             {"max_tokens", c.max_tokens},
             {"max_attempts", c.max_attempts},
             {"seed", c.seed}};
}

inline void from_json(const json& j, JudgeConfig& c) {
    j.at("model_id").get_to(c.model_id);
    c.temperature = j.value("temperature", 0.0);
    c.max_tokens = j.value("max_tokens", 4096);
    c.max_attempts = j.value("max_attempts", 5);
    c.seed = j.value("seed", 0);
}

inline GenerationRequest build_judge_prompt(Perspective perspective, const AnonymizedPair& pair,
                                            const JudgeConfig& config) {
    GenerationRequest request;
    request.model_id = config.model_id;
    request.temperature = config.temperature;
    request.max_tokens = config.max_tokens;
    request.response_schema =
        JsonSchemaSpec{perspective_name(perspective) + "_comparative", judge_response_schema(perspective)};
    request.messages.push_back({Role::system, judge_system_message()});
    request.messages.push_back({Role::user, build_judge_payload(perspective, pair)});
    return request;
}

struct JudgeParseError : TutorbenchError {
    using TutorbenchError::TutorbenchError;
};

inline Verdict verdict_from_choice(const std::string& raw) {
    std::string s;
    for (char c : raw) s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (s == "a" || s == "teacher_a") return Verdict::A;
    if (s == "b" || s == "teacher_b") return Verdict::B;
    if (s == "tie") return Verdict::tie;
    throw JudgeParseError("invalid verdict choice: " + raw);
}

// Validates the comparative document shape: both teachers present with
// exactly the perspective's dimensions, scores within 1..10, non-empty
// analyses, and a verdict.
inline PerspectiveReport parse_report(const json& doc, Perspective perspective) {
    PerspectiveReport report;
    report.perspective = perspective;
    const std::vector<std::string>& dims = perspective_dimensions(perspective);
    for (const std::string& side : {std::string("teacher_a"), std::string("teacher_b")}) {
        if (!doc.contains(side) || !doc[side].is_object())
            throw JudgeParseError("missing object: " + side);
        const json& obj = doc[side];
        if (obj.size() != dims.size())
            throw JudgeParseError(side + ": expected " + std::to_string(dims.size()) +
                                  " dimensions, got " + std::to_string(obj.size()));
        std::vector<DimensionScore> scores;
        for (const std::string& dim : dims) {
            if (!obj.contains(dim)) throw JudgeParseError(side + ": missing dimension '" + dim + "'");
            const json& cell = obj[dim];
            if (!cell.contains("analysis") || !cell["analysis"].is_string() ||
                cell["analysis"].get<std::string>().empty())
                throw JudgeParseError(side + "/" + dim + ": missing analysis");
            if (!cell.contains("score") || !cell["score"].is_number_integer())
                throw JudgeParseError(side + "/" + dim + ": missing integer score");
            int score = cell["score"].get<int>();
            if (score < 1 || score > 10)
                throw JudgeParseError(side + "/" + dim + ": score " + std::to_string(score) +
                                      " outside 1..10");
            scores.push_back({dim, cell["analysis"].get<std::string>(), score});
        }
        report.scores[side] = std::move(scores);
    }
    if (!doc.contains("verdict") || !doc["verdict"].is_object())
        throw JudgeParseError("missing verdict");
    const json& verdict = doc["verdict"];
    if (!verdict.contains("choice") || !verdict["choice"].is_string())
        throw JudgeParseError("verdict missing choice");
    report.verdict = verdict_from_choice(verdict["choice"].get<std::string>());
    report.verdict_analysis = verdict.value("analysis", "");
    return report;
}

// Re-keys sides to real model ids and resolves the verdict to a model.
inline void deanonymize(PerspectiveReport& report, const AnonymizedPair& pair) {
    std::map<std::string, std::vector<DimensionScore>> real;
    real[pair.teacher_a_model] = std::move(report.scores["teacher_a"]);
    real[pair.teacher_b_model] = std::move(report.scores["teacher_b"]);
    report.scores = std::move(real);
    report.question_id = pair.question_id;
    switch (report.verdict) {
        case Verdict::A: report.verdict_model = pair.teacher_a_model; break;
        case Verdict::B: report.verdict_model = pair.teacher_b_model; break;
        case Verdict::tie: report.verdict_model = "tie"; break;
    }
}

struct PairUnevaluated : TutorbenchError {
    using TutorbenchError::TutorbenchError;
};

// One report per requested perspective. Schema violations re-request with
// the same attempt budget as every other phase; persistent failure leaves
// the pair unevaluated.
inline std::vector<PerspectiveReport> evaluate_pair(Backend& judge_backend, Clock& clock,
                                                    const JudgeConfig& config,
                                                    const AnonymizedPair& pair,
                                                    const std::vector<Perspective>& perspectives,
                                                    const RetryPolicy& policy = {}) {
    std::vector<PerspectiveReport> reports;
    for (Perspective p : perspectives) {
        GenerationRequest request = build_judge_prompt(p, pair, config);
        std::optional<PerspectiveReport> parsed;
        std::string last_error;
        for (int attempt = 1; attempt <= config.max_attempts && !parsed; ++attempt) {
            GenerationResult result = complete(judge_backend, request, policy, clock);
            try {
                parsed = parse_report(json::parse(result.content), p);
            } catch (const json::exception& e) {
                last_error = e.what();
            } catch (const JudgeParseError& e) {
                last_error = e.what();
            }
        }
        if (!parsed)
            throw PairUnevaluated("pair " + pair.question_id + " (" + perspective_name(p) +
                                  "): " + last_error);
        deanonymize(*parsed, pair);
        reports.push_back(std::move(*parsed));
    }
    return reports;
}

// Persisted judge document: the comparative shape plus the label map.
inline json report_to_json(const PerspectiveReport& report, const AnonymizedPair& pair) {
    json sides = json::object();
    for (const auto& [model, scores] : report.scores) {
        std::string label = (model == pair.teacher_a_model) ? "teacher_a" : "teacher_b";
        json obj = json::object();
        for (const DimensionScore& s : scores)
            obj[s.dimension] = {{"analysis", s.analysis}, {"score", s.score}};
        sides[label] = obj;
    }
    return json{{"format_version", kFormatVersion},
                {"question_id", report.question_id},
                {"perspective", perspective_name(report.perspective)},
                {"teacher_a", sides["teacher_a"]},
                {"teacher_b", sides["teacher_b"]},
                {"verdict",
                 {{"analysis", report.verdict_analysis},
                  {"choice", verdict_label(report.verdict)},
                  {"model", report.verdict_model}}},
                {"label_map",
                 {{"teacher_a", pair.teacher_a_model}, {"teacher_b", pair.teacher_b_model}}}};
}

// One row per dimension score plus one verdict row per report.
// improved_flags keys are (teacher_model, question_id).
inline std::string export_score_table(
    const std::vector<PerspectiveReport>& reports,
    const std::map<std::pair<std::string, std::string>, bool>& improved_flags = {}) {
    std::string out = "question_id,teacher,perspective,dimension,score,improved_flag\n";
    auto flag_of = [&](const std::string& teacher, const std::string& qid) -> std::string {
        auto it = improved_flags.find({teacher, qid});
        if (it == improved_flags.end()) return "";
        return it->second ? "1" : "0";
    };
    for (const PerspectiveReport& r : reports) {
        for (const auto& [teacher, scores] : r.scores)
            for (const DimensionScore& s : scores)
                out += csv_field(r.question_id) + "," + csv_field(teacher) + "," +
                       perspective_name(r.perspective) + "," + csv_field(s.dimension) + "," +
                       std::to_string(s.score) + "," + flag_of(teacher, r.question_id) + "\n";
        out += csv_field(r.question_id) + "," + csv_field(r.verdict_model) + "," +
               perspective_name(r.perspective) + ",verdict,," + "\n";
    }
    return out;
}

// Accounting convention: every dialogue side receives 17 dimension analyses
// across the three perspectives; verdicts are not counted.
inline long dimension_analysis_count(long n_dialogues) { return n_dialogues * 17; }

}  // namespace tutorbench
