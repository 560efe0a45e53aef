#pragma once
// Question corpus handling: load and validate multiple-choice records,
// rate difficulty from per-question accuracy stats, and draw stratified
// samples per (category, difficulty) cell.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "tutorbench/common.hpp"

namespace tutorbench {

// Standardized record shared by every pipeline stage.
struct Question {
    std::string question_id;
    std::string question;
    std::vector<std::string> options;
    std::string answer;       // option letter
    int answer_index = 0;     // zero-based, A=0
    std::string cot_content;  // may be empty
    std::string category;
};

inline void to_json(json& j, const Question& q) {
    j = json{{"question_id", q.question_id}, {"question", q.question},
             {"options", q.options},         {"answer", q.answer},
             {"answer_index", q.answer_index}, {"cot_content", q.cot_content},
             {"category", q.category}};
}

inline void from_json(const json& j, Question& q) {
    j.at("question_id").get_to(q.question_id);
    j.at("question").get_to(q.question);
    j.at("options").get_to(q.options);
    j.at("answer").get_to(q.answer);
    j.at("answer_index").get_to(q.answer_index);
    q.cot_content = j.value("cot_content", "");
    j.at("category").get_to(q.category);
}

// Returns a diagnostic for the first violated invariant, or nullopt if valid.
inline std::optional<std::string> validate_question(const Question& q) {
    if (q.question_id.empty()) return "missing question_id";
    if (q.options.size() < 2 || q.options.size() > 26)
        return "options count " + std::to_string(q.options.size()) + " outside 2..26";
    if (q.answer_index < 0 || q.answer_index >= static_cast<int>(q.options.size()))
        return "answer_index " + std::to_string(q.answer_index) + " out of bounds for " +
               std::to_string(q.options.size()) + " options";
    if (q.answer.size() != 1 || q.answer[0] != option_letter(q.answer_index))
        return "answer '" + q.answer + "' does not match answer_index " + std::to_string(q.answer_index);
    if (q.category.empty()) return "empty category";
    return std::nullopt;
}

struct QuestionStats {
    std::string question_id;
    long valid_responses = 0;
    long correct_responses = 0;

    double mean_accuracy() const {
        if (valid_responses <= 0) throw DataError("mean_accuracy undefined with no valid responses");
        return static_cast<double>(correct_responses) / static_cast<double>(valid_responses);
    }
};

inline void to_json(json& j, const QuestionStats& s) {
    j = json{{"question_id", s.question_id},
             {"valid_responses", s.valid_responses},
             {"correct_responses", s.correct_responses}};
}

inline void from_json(const json& j, QuestionStats& s) {
    j.at("question_id").get_to(s.question_id);
    j.at("valid_responses").get_to(s.valid_responses);
    j.at("correct_responses").get_to(s.correct_responses);
}

// Levels partition [0,1] into ten half-open 10% bins; 1 is hardest.
// Accuracy exactly k/10 lands in the upper bin, except 1.0 which stays at 10.
inline int compute_difficulty(const QuestionStats& stats) {
    if (stats.valid_responses <= 0)
        throw DataError("difficulty undefined for " + stats.question_id + ": no valid responses");
    if (stats.correct_responses > stats.valid_responses)
        throw DataError("correct_responses exceeds valid_responses for " + stats.question_id);
    double acc = stats.mean_accuracy();
    int level = static_cast<int>(std::floor(acc * 10.0)) + 1;
    return std::min(level, 10);
}

enum class CorpusFormat { mmlu_pro_like, gpqa_like, native };

inline CorpusFormat corpus_format_from_string(const std::string& s) {
    if (s == "mmlu_pro_like" || s == "mmlu-pro") return CorpusFormat::mmlu_pro_like;
    if (s == "gpqa_like" || s == "gpqa") return CorpusFormat::gpqa_like;
    if (s == "native") return CorpusFormat::native;
    throw DataError("unknown corpus format: " + s);
}

struct ParseResult {
    std::vector<Question> questions;
    std::vector<std::string> diagnostics;  // one entry per rejected record or warning
};

namespace detail {

inline std::string id_of(const json& rec, size_t record_no) {
    if (rec.contains("question_id")) {
        const json& id = rec["question_id"];
        if (id.is_string()) return id.get<std::string>();
        if (id.is_number_integer()) return std::to_string(id.get<long long>());
    }
    return "record#" + std::to_string(record_no);
}

inline std::optional<Question> record_to_question(const json& rec, CorpusFormat format,
                                                  size_t record_no, std::string& diag) {
    Question q;
    try {
        switch (format) {
            case CorpusFormat::native:
                q = rec.get<Question>();
                break;
            case CorpusFormat::mmlu_pro_like: {
                // Same field names as native, but question_id may be numeric and
                // the answer letter may be absent when answer_index is present.
                q.question_id = id_of(rec, record_no);
                rec.at("question").get_to(q.question);
                rec.at("options").get_to(q.options);
                rec.at("answer_index").get_to(q.answer_index);
                if (rec.contains("answer") && rec["answer"].is_string())
                    q.answer = rec["answer"].get<std::string>();
                else
                    q.answer = std::string(1, option_letter(q.answer_index));
                q.cot_content = rec.value("cot_content", "");
                rec.at("category").get_to(q.category);
                break;
            }
            case CorpusFormat::gpqa_like: {
                // Correct answer first, then the listed distractors.
                q.question_id = id_of(rec, record_no);
                rec.at("question").get_to(q.question);
                q.options.push_back(rec.at("correct_answer").get<std::string>());
                for (const auto& opt : rec.at("incorrect_answers"))
                    q.options.push_back(opt.get<std::string>());
                q.answer_index = 0;
                q.answer = "A";
                q.cot_content = rec.value("explanation", "");
                if (rec.contains("category"))
                    rec.at("category").get_to(q.category);
                else
                    rec.at("subdomain").get_to(q.category);
                break;
            }
        }
    } catch (const json::exception& e) {
        diag = id_of(rec, record_no) + ": " + e.what();
        return std::nullopt;
    }
    if (auto err = validate_question(q)) {
        diag = id_of(rec, record_no) + ": " + *err;
        return std::nullopt;
    }
    return q;
}

}  // namespace detail

// Accepts either line-delimited records or one top-level JSON array.
// Invalid records are dropped with a per-record diagnostic; duplicate ids
// after the first are rejected.
inline ParseResult parse_corpus(const std::filesystem::path& path, CorpusFormat format) {
    std::string text = read_text_file(path);
    std::vector<json> records;

    std::string body = trim(text);
    if (body.empty()) {
        ParseResult empty;
        empty.diagnostics.push_back("warning: empty corpus file " + path.string());
        return empty;
    }
    if (body.front() == '[') {
        json arr = json::parse(body);  // throws on malformed documents
        if (!arr.is_array()) throw DataError(path.string() + ": top-level value is not an array");
        for (auto& rec : arr) records.push_back(std::move(rec));
    } else {
        std::istringstream lines(text);
        std::string line;
        size_t line_no = 0;
        ParseResult result;
        std::set<std::string> seen;
        while (std::getline(lines, line)) {
            ++line_no;
            std::string t = trim(line);
            if (t.empty()) continue;
            json rec;
            try {
                rec = json::parse(t);
            } catch (const json::exception& e) {
                result.diagnostics.push_back("line " + std::to_string(line_no) + ": " + e.what());
                continue;
            }
            std::string diag;
            if (auto q = detail::record_to_question(rec, format, line_no, diag)) {
                if (!seen.insert(q->question_id).second) {
                    result.diagnostics.push_back(q->question_id + ": duplicate question_id");
                    continue;
                }
                result.questions.push_back(std::move(*q));
            } else {
                result.diagnostics.push_back(diag);
            }
        }
        return result;
    }

    ParseResult result;
    std::set<std::string> seen;
    size_t record_no = 0;
    for (const json& rec : records) {
        ++record_no;
        std::string diag;
        if (auto q = detail::record_to_question(rec, format, record_no, diag)) {
            if (!seen.insert(q->question_id).second) {
                result.diagnostics.push_back(q->question_id + ": duplicate question_id");
                continue;
            }
            result.questions.push_back(std::move(*q));
        } else {
            result.diagnostics.push_back(diag);
        }
    }
    return result;
}

struct CoverageCell {
    std::string category;
    int level = 0;
    long count = 0;
};

struct SampleResult {
    std::vector<Question> questions;
    std::vector<CoverageCell> coverage;  // sorted by (category, level)
};

// Keeps the first per_cell questions of each (category, level) cell in corpus
// order; cells are emitted sorted by (category, level). Questions without
// stats and excluded categories are dropped.
inline SampleResult stratified_sample(const std::vector<Question>& questions,
                                      const std::map<std::string, QuestionStats>& stats,
                                      long per_cell = 10,
                                      const std::set<std::string>& excluded_categories = {"other"}) {
    if (per_cell < 1) throw DataError("per_cell must be >= 1");
    std::map<std::pair<std::string, int>, std::vector<const Question*>> cells;
    for (const Question& q : questions) {
        if (excluded_categories.count(q.category)) continue;
        auto it = stats.find(q.question_id);
        if (it == stats.end() || it->second.valid_responses <= 0) continue;
        auto& cell = cells[{q.category, compute_difficulty(it->second)}];
        if (static_cast<long>(cell.size()) < per_cell) cell.push_back(&q);
    }
    SampleResult result;
    for (const auto& [key, cell] : cells) {
        result.coverage.push_back({key.first, key.second, static_cast<long>(cell.size())});
        for (const Question* q : cell) result.questions.push_back(*q);
    }
    return result;
}

struct CorpusSummary {
    std::map<std::string, long> per_category;
    std::map<int, long> per_level;  // empty when no stats are supplied
    long total = 0;
};

inline CorpusSummary corpus_summary(const std::vector<Question>& questions,
                                    const std::map<std::string, QuestionStats>* stats = nullptr) {
    CorpusSummary s;
    for (const Question& q : questions) {
        ++s.per_category[q.category];
        ++s.total;
        if (stats) {
            auto it = stats->find(q.question_id);
            if (it != stats->end() && it->second.valid_responses > 0)
                ++s.per_level[compute_difficulty(it->second)];
        }
    }
    return s;
}

// Native line-delimited serialization; one record per line, stable key order.
inline std::string corpus_to_jsonl(const std::vector<Question>& questions) {
    std::string out;
    for (const Question& q : questions) {
        out += json(q).dump();
        out += "\n";
    }
    return out;
}

inline std::string coverage_to_csv(const std::vector<CoverageCell>& coverage) {
    std::string out = "category,level,count\n";
    for (const CoverageCell& c : coverage) {
        out += csv_field(c.category) + "," + std::to_string(c.level) + "," + std::to_string(c.count) + "\n";
    }
    return out;
}

// Stats files: either a JSON array of records or a map question_id -> record.
inline std::map<std::string, QuestionStats> load_stats(const std::filesystem::path& path) {
    json doc = json::parse(read_text_file(path));
    std::map<std::string, QuestionStats> stats;
    if (doc.is_array()) {
        for (const auto& rec : doc) {
            QuestionStats s = rec.get<QuestionStats>();
            stats[s.question_id] = s;
        }
    } else if (doc.is_object()) {
        for (auto& [key, rec] : doc.items()) {
            QuestionStats s;
            s.question_id = key;
            rec.at("valid_responses").get_to(s.valid_responses);
            rec.at("correct_responses").get_to(s.correct_responses);
            stats[key] = s;
        }
    } else {
        throw DataError(path.string() + ": stats file must be a JSON array or object");
    }
    return stats;
}

}  // namespace tutorbench
