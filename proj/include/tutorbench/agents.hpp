#pragma once
// Student and teacher agents: prompt construction, answer extraction, and
// the response-quality gate. Builders are pure; the teacher-side builders
// never receive the options field, which is the structural half of the
// content-boundary enforcement.

#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "tutorbench/corpus.hpp"
#include "tutorbench/gateway.hpp"

namespace tutorbench {

struct RoleConfig {
    std::string model_id;
    double temperature = 0.0;
    int max_tokens_dialogue = 1024;
    int max_tokens_test = 2048;           // student only
    int recommended_tokens_dialogue = 150;
    int recommended_tokens_test = 1024;   // student only
    double rerun_threshold = 0.80;
    int max_retries = 5;
    int num_rounds = 5;
    bool include_pretest_info = true;     // student dialogue context flag
    bool use_few_shot = false;            // carried, unexercised
    std::optional<std::string> education_theory;  // carried, unexercised
};

inline void to_json(json& j, const RoleConfig& c) {
    j = json{{"model_id", c.model_id},
             {"temperature", c.temperature},
             {"max_tokens_dialogue", c.max_tokens_dialogue},
             {"max_tokens_test", c.max_tokens_test},
             {"recommended_tokens_dialogue", c.recommended_tokens_dialogue},
             {"recommended_tokens_test", c.recommended_tokens_test},
             {"rerun_threshold", c.rerun_threshold},
             {"max_retries", c.max_retries},
             {"num_rounds", c.num_rounds},
             {"include_pretest_info", c.include_pretest_info},
             {"use_few_shot", c.use_few_shot}};
    if (c.education_theory) j["education_theory"] = *c.education_theory;
}

inline void from_json(const json& j, RoleConfig& c) {
    j.at("model_id").get_to(c.model_id);
    c.temperature = j.value("temperature", 0.0);
    c.max_tokens_dialogue = j.value("max_tokens_dialogue", 1024);
    c.max_tokens_test = j.value("max_tokens_test", 2048);
    c.recommended_tokens_dialogue = j.value("recommended_tokens_dialogue", 150);
    c.recommended_tokens_test = j.value("recommended_tokens_test", 1024);
    c.rerun_threshold = j.value("rerun_threshold", 0.80);
    c.max_retries = j.value("max_retries", 5);
    c.num_rounds = j.value("num_rounds", 5);
    c.include_pretest_info = j.value("include_pretest_info", true);
    c.use_few_shot = j.value("use_few_shot", false);
    if (j.contains("education_theory") && j["education_theory"].is_string())
        c.education_theory = j["education_theory"].get<std::string>();
}

struct PreTestRecord {
    std::string question_id;
    std::string raw_response;
    std::optional<char> extracted_choice;
    bool correct = false;
    std::string reasoning;  // raw response with the final answer line stripped
};

inline void to_json(json& j, const PreTestRecord& r) {
    j = json{{"question_id", r.question_id},
             {"raw_response", r.raw_response},
             {"correct", r.correct},
             {"reasoning", r.reasoning}};
    if (r.extracted_choice)
        j["extracted_choice"] = std::string(1, *r.extracted_choice);
    else
        j["extracted_choice"] = nullptr;
}

inline void from_json(const json& j, PreTestRecord& r) {
    j.at("question_id").get_to(r.question_id);
    j.at("raw_response").get_to(r.raw_response);
    j.at("correct").get_to(r.correct);
    j.at("reasoning").get_to(r.reasoning);
    if (j.contains("extracted_choice") && j["extracted_choice"].is_string()) {
        std::string s = j["extracted_choice"].get<std::string>();
        if (!s.empty()) r.extracted_choice = s[0];
    }
}

using PostTestRecord = PreTestRecord;

struct DialogueTurn {
    int round = 0;
    std::string teacher_text;
    std::string student_text;
    long teacher_tokens = 0;
    long student_tokens = 0;
};

inline void to_json(json& j, const DialogueTurn& t) {
    j = json{{"round", t.round},
             {"teacher_text", t.teacher_text},
             {"student_text", t.student_text},
             {"teacher_tokens", t.teacher_tokens},
             {"student_tokens", t.student_tokens}};
}

inline void from_json(const json& j, DialogueTurn& t) {
    j.at("round").get_to(t.round);
    j.at("teacher_text").get_to(t.teacher_text);
    j.at("student_text").get_to(t.student_text);
    j.at("teacher_tokens").get_to(t.teacher_tokens);
    j.at("student_tokens").get_to(t.student_tokens);
}

// ---------------------------------------------------------------------------
// Prompt templates
// ---------------------------------------------------------------------------

inline std::string build_student_system_message(const std::string& category, int recommended_tokens) {
    if (category.empty()) throw DataError("student system message requires a category");
    return "You are a student focusing on " + category +
           ". Analyze the question carefully, explain your thought process (" +
           std::to_string(recommended_tokens) +
           " tokens or less), and try to apply the concepts you've learned to solve problems. "
           "If you're unsure, express your uncertainty and explain your reasoning.";
}

// Question text, lettered options, then the step-by-step cue.
inline std::string build_test_prompt(const Question& question) {
    if (auto err = validate_question(question)) throw DataError(*err);
    std::string out = "Question: " + question.question + "\nOptions:\n";
    for (size_t i = 0; i < question.options.size(); ++i) {
        out += option_letter(static_cast<int>(i));
        out += ". ";
        out += question.options[i];
        out += "\n";
    }
    out += "Let's think step by step.";
    return out;
}

// Last canonical "The answer is (X)" wins; with none present, the last
// standalone parenthesized capital letter; otherwise nothing.
inline std::optional<char> extract_answer(const std::string& response_text) {
    static const std::regex canonical(R"(The answer is \(([A-Z])\))");
    static const std::regex fallback(R"(\(([A-Z])\))");
    std::optional<char> found;
    for (auto it = std::sregex_iterator(response_text.begin(), response_text.end(), canonical);
         it != std::sregex_iterator(); ++it)
        found = (*it)[1].str()[0];
    if (found) return found;
    for (auto it = std::sregex_iterator(response_text.begin(), response_text.end(), fallback);
         it != std::sregex_iterator(); ++it)
        found = (*it)[1].str()[0];
    return found;
}

// Chain-of-thought portion: the raw response with its final canonical answer
// sentence removed. Falls back to the whole text when no pattern is present.
inline std::string strip_answer_line(const std::string& raw_response) {
    static const std::regex canonical(R"(The answer is \(([A-Z])\))");
    std::smatch last;
    for (auto it = std::sregex_iterator(raw_response.begin(), raw_response.end(), canonical);
         it != std::sregex_iterator(); ++it)
        last = *it;
    if (last.empty()) return trim(raw_response);
    return trim(raw_response.substr(0, static_cast<size_t>(last.position(0))));
}

inline PreTestRecord grade_response(const Question& question, const std::string& raw_response) {
    PreTestRecord record;
    record.question_id = question.question_id;
    record.raw_response = raw_response;
    record.extracted_choice = extract_answer(raw_response);
    record.correct = record.extracted_choice && *record.extracted_choice == question.answer[0];
    record.reasoning = strip_answer_line(raw_response);
    return record;
}

// Teacher-visible pre-test block. Reads only the question id and text; the
// options list never reaches any teacher-bound builder.
inline std::string render_pretest_info(const Question& question, const PreTestRecord& record) {
    if (record.question_id != question.question_id)
        throw DataError("pre-test record " + record.question_id + " does not belong to question " +
                        question.question_id);
    std::string answer = record.extracted_choice ? std::string(1, *record.extracted_choice) : "None";
    return "Question ID: " + question.question_id + "\n" +
           "Question: " + question.question + "\n" +
           "Student's Reasoning: " + record.reasoning + "\n" +
           "Student's Answer: " + answer + "\n" +
           "Student's Answer is Correct or Not: " + (record.correct ? "Correct." : "Incorrect.");
}

inline std::string build_teacher_system_message(const std::string& category, int num_rounds,
                                                int recommended_tokens,
                                                const std::string& pretest_block) {
    if (category.empty()) throw DataError("teacher system message requires a category");
    return "You are an expert teacher in " + category +
           " dedicated to enhancing the student's understanding after analyzing the student's "
           "response to a pre-test.\n\n"
           "Your task is to ask " +
           std::to_string(num_rounds) +
           " rounds of relevant, thought-provoking questions to the student. You should ask one "
           "new question per round (and if needed, provide necessary corrections or feedback for "
           "the student's previous round's answers), each under " +
           std::to_string(recommended_tokens) +
           " tokens, without revealing the correct answers or specific details of the pre-test "
           "questions.\n\n"
           "Your goal is to prepare the student for the post-test by fostering a deeper and more "
           "comprehensive understanding of the subject matter.\n\n"
           "Here are the pre-test results of the student: " +
           pretest_block;
}

inline std::string teacher_generation_cue(int round, int recommended_tokens) {
    return "Teacher: Generate the round " + std::to_string(round) + " question (" +
           std::to_string(recommended_tokens) +
           " tokens or less) to promote better understanding:";
}

// System message with the pre-test block embedded, alternating
// assistant("Teacher: ...") / user("Student: ...") history, then the
// generation cue as the final user message.
inline std::vector<ChatMessage> build_teacher_context(const std::string& category, int num_rounds,
                                                      int recommended_tokens,
                                                      const std::string& pretest_block,
                                                      const std::vector<DialogueTurn>& turns,
                                                      int next_round) {
    if (next_round < 1 || next_round > num_rounds)
        throw DataError("next_round " + std::to_string(next_round) + " outside 1.." +
                        std::to_string(num_rounds));
    std::vector<ChatMessage> messages;
    messages.push_back(
        {Role::system,
         build_teacher_system_message(category, num_rounds, recommended_tokens, pretest_block)});
    for (const DialogueTurn& t : turns) {
        messages.push_back({Role::assistant, "Teacher: " + t.teacher_text});
        messages.push_back({Role::user, "Student: " + t.student_text});
    }
    messages.push_back({Role::user, teacher_generation_cue(next_round, recommended_tokens)});
    return messages;
}

// The student's own view of the pre-test: the full test prompt it saw
// (question and options) followed by its raw response. Carries no grading
// outcome and no gold answer.
inline std::string build_student_pretest_block(const Question& question,
                                               const std::string& pretest_raw_response) {
    return build_test_prompt(question) + "\n" + pretest_raw_response;
}

// Dialogue context for the student: persona, optional pre-test block, the
// round history, and the teacher's latest question as the final user message.
inline std::vector<ChatMessage> build_student_dialogue_context(
    const RoleConfig& config, const std::string& category, const Question& question,
    const std::optional<std::string>& pretest_raw_response, const std::vector<DialogueTurn>& turns,
    const std::string& latest_teacher_text) {
    if (latest_teacher_text.empty()) throw DataError("latest teacher text must be non-empty");
    std::vector<ChatMessage> messages;
    messages.push_back(
        {Role::system, build_student_system_message(category, config.recommended_tokens_dialogue)});
    if (config.include_pretest_info && pretest_raw_response)
        messages.push_back({Role::user, build_student_pretest_block(question, *pretest_raw_response)});
    for (const DialogueTurn& t : turns) {
        messages.push_back({Role::user, "Teacher: " + t.teacher_text});
        messages.push_back({Role::assistant, "Student: " + t.student_text});
    }
    messages.push_back({Role::user, "Teacher: " + latest_teacher_text});
    return messages;
}

// Test-taking context. The pre-test carries just the persona and the prompt;
// the post-test additionally replays the pre-test block and the dialogue.
inline std::vector<ChatMessage> build_student_test_context(
    const RoleConfig& config, const Question& question,
    const std::optional<std::string>& pretest_raw_response = std::nullopt,
    const std::vector<DialogueTurn>& turns = {}) {
    std::vector<ChatMessage> messages;
    messages.push_back(
        {Role::system, build_student_system_message(question.category, config.recommended_tokens_test)});
    if (pretest_raw_response)
        messages.push_back({Role::user, build_student_pretest_block(question, *pretest_raw_response)});
    for (const DialogueTurn& t : turns) {
        messages.push_back({Role::user, "Teacher: " + t.teacher_text});
        messages.push_back({Role::assistant, "Student: " + t.student_text});
    }
    messages.push_back({Role::user, build_test_prompt(question)});
    return messages;
}

// ---------------------------------------------------------------------------
// Quality gate
// ---------------------------------------------------------------------------

enum class GateDecision { accept, retry_empty, retry_overlong };

// retry_overlong needs both triggers: past the threshold share of the hard
// cap and past the recommended length.
inline GateDecision quality_gate(long tokens, int max_tokens, int recommended_tokens,
                                 double threshold) {
    if (tokens == 0) return GateDecision::retry_empty;
    if (static_cast<double>(tokens) > threshold * max_tokens && tokens > recommended_tokens)
        return GateDecision::retry_overlong;
    return GateDecision::accept;
}

inline GateDecision quality_gate(const GenerationResult& result, int max_tokens,
                                 int recommended_tokens, double threshold) {
    return quality_gate(effective_tokens(result), max_tokens, recommended_tokens, threshold);
}

}  // namespace tutorbench
