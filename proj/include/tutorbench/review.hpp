#pragma once
// Human-review workflow: draw improving/control dialogue pairs from the
// unique-improvement cases, export blind questionnaires, ingest expert
// ratings, and measure agreement with the judge's verdicts.

#include <algorithm>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "tutorbench/protocol.hpp"

namespace tutorbench {

// Exactly one member produced a positive transition on the question.
// Teacher 1 / Teacher 2 labels hide model identity; the seeded side bit is
// recorded so reports can de-anonymize.
struct DialoguePair {
    std::string question_id;
    Transcript improving;
    Transcript control;
    bool improving_is_teacher1 = true;

    std::string teacher1_model() const {
        return improving_is_teacher1 ? improving.teacher_model : control.teacher_model;
    }
    std::string teacher2_model() const {
        return improving_is_teacher1 ? control.teacher_model : improving.teacher_model;
    }
};

struct UicCase {
    std::string question_id;
    std::string improving_teacher;
};

inline bool transcript_improved(const Transcript& t) {
    return t.valid && t.posttest && !t.pretest.correct && t.posttest->correct;
}

// Seeded sample of n cases without replacement; the control side is chosen
// seeded-uniformly among teachers that did not improve the same question.
// Inputs are sorted first so reproducibility does not depend on container
// iteration order.
inline std::vector<DialoguePair> select_pairs(
    std::vector<UicCase> uic_cases,
    const std::map<std::pair<std::string, std::string>, Transcript>& transcripts_by_teacher_qid,
    size_t n, uint64_t seed) {
    if (n > uic_cases.size())
        throw DataError("requested " + std::to_string(n) + " pairs but only " +
                        std::to_string(uic_cases.size()) + " cases available");
    std::sort(uic_cases.begin(), uic_cases.end(), [](const UicCase& a, const UicCase& b) {
        return std::tie(a.question_id, a.improving_teacher) <
               std::tie(b.question_id, b.improving_teacher);
    });
    std::mt19937_64 rng(seed);
    // Partial Fisher-Yates: the first n slots become the sample.
    for (size_t i = 0; i < n; ++i) {
        size_t j = i + static_cast<size_t>(rng() % (uic_cases.size() - i));
        std::swap(uic_cases[i], uic_cases[j]);
    }
    std::vector<DialoguePair> pairs;
    for (size_t i = 0; i < n; ++i) {
        const UicCase& c = uic_cases[i];
        auto improving_it = transcripts_by_teacher_qid.find({c.improving_teacher, c.question_id});
        if (improving_it == transcripts_by_teacher_qid.end())
            throw DataError("no transcript for improving teacher " + c.improving_teacher + " on " +
                            c.question_id);
        std::vector<const Transcript*> controls;
        for (const auto& [key, t] : transcripts_by_teacher_qid) {
            if (key.second != c.question_id || key.first == c.improving_teacher) continue;
            if (!transcript_improved(t)) controls.push_back(&t);
        }
        if (controls.empty())
            throw DataError("no non-improving control transcript for " + c.question_id);
        const Transcript* control = controls[static_cast<size_t>(rng() % controls.size())];
        DialoguePair pair;
        pair.question_id = c.question_id;
        pair.improving = improving_it->second;
        pair.control = *control;
        pair.improving_is_teacher1 = (rng() & 1) != 0;
        pairs.push_back(std::move(pair));
    }
    return pairs;
}

inline const std::string& questionnaire_header() {
    static const std::string header =
        "Teaching Behaviors Evaluation Questionnaire\n"
        "\n"
        "Project Introduction\n"
        "This project aims to evaluate the differences in instructional behaviors and capabilities "
        "among different teachers during the formative assessment process. We arrange each group of "
        "teachers to conduct multiple rounds of teaching activities in parallel, based on the same "
        "question and the same student's reasoning answer. The purpose is to promote the student's "
        "deeper and more comprehensive understanding of the question content. Each case includes two "
        "teachers engaging in a 5-round teaching interaction process with the same student on the "
        "same question. This parallel comparison design allows us to directly compare how different "
        "teachers' teaching methods, questioning strategies, and feedback approaches affect student "
        "understanding.\n"
        "\n"
        "Reviewer Role Description\n"
        "As a review expert with teaching credentials, you will score the teaching abilities "
        "demonstrated by the two teachers during the teaching interaction process.\n"
        "\n"
        "Focus Guidance\n"
        "In this evaluation process, we focus primarily on the teachers' instructional behaviors and "
        "capabilities, rather than the teacher's knowledge and the student's performance.\n"
        "\n"
        "Rating Instructions\n"
        "These dialogues begin with a student's incorrect response. Each teacher has been instructed "
        "to guide the student toward improved understanding without directly revealing the answer.\n"
        "\n"
        "Please evaluate these interactions through educational theory lenses:\n"
        "- Informal Formative Assessment (IFA): Ongoing evaluation during instruction that provides "
        "immediate feedback to improve learning, rather than simply testing knowledge.\n"
        "- Zone of Proximal Development (ZPD): The gap between what a learner can do independently "
        "and what they can achieve with guidance from a more knowledgeable person.\n"
        "\n"
        "Rating Criteria:\n"
        "- 9-10 points: Excellent teaching guidance\n"
        "- 7-8 points: Good teaching performance\n"
        "- 5-6 points: Meets basic teaching requirements\n"
        "- 3-4 points: Insufficient teaching guidance\n"
        "- 1-2 points: Weak teaching guidance ability\n";
    return header;
}

// Blind questionnaire for one pair: header, question with options, the
// student's pre-test reasoning, both five-round interactions under
// Teacher 1 / Teacher 2 labels, rating slots, and the feedback form.
inline std::string export_questionnaire(const DialoguePair& pair, const Question& question,
                                        const std::string& header = questionnaire_header()) {
    const Transcript& t1 = pair.improving_is_teacher1 ? pair.improving : pair.control;
    const Transcript& t2 = pair.improving_is_teacher1 ? pair.control : pair.improving;
    if (t1.turns.size() != 5 || t2.turns.size() != 5)
        throw DataError("questionnaire export requires full 5-round transcripts for " +
                        pair.question_id);
    std::string out = header;
    out += "\n--------------------------------------------------------------------\n";
    out += "Case: Question ID: " + question.question_id + " (" + question.category + " Category)\n\n";
    out += "Question:\n" + question.question + "\n\nOptions:\n";
    for (size_t i = 0; i < question.options.size(); ++i) {
        out += option_letter(static_cast<int>(i));
        out += ". " + question.options[i] + "\n";
    }
    out += "\nStudent Reasoning Answer: " + t1.pretest.reasoning + "\n\n";
    std::string choice =
        t1.pretest.extracted_choice ? std::string(1, *t1.pretest.extracted_choice) : "None";
    out += "The answer is " + choice + ".\n\n";
    out += "Teaching Interaction (5 Rounds):\n\n";
    for (int round = 1; round <= 5; ++round) {
        const DialogueTurn& a = t1.turns[static_cast<size_t>(round - 1)];
        const DialogueTurn& b = t2.turns[static_cast<size_t>(round - 1)];
        out += "Q" + std::to_string(round) + " (Teacher 1): " + a.teacher_text + "\n";
        out += "Q" + std::to_string(round) + " (Teacher 2): " + b.teacher_text + "\n";
        out += "A" + std::to_string(round) + " (Teacher 1): " + a.student_text + "\n";
        out += "A" + std::to_string(round) + " (Teacher 2): " + b.student_text + "\n\n";
    }
    out += "Rating (Teacher 1): ______/10\n";
    out += "Rating (Teacher 2): ______/10\n\n";
    out += "Comments (Teacher 1): \n";
    out += "Comments (Teacher 2): \n";
    out += "--------------------------------------------------------------------\n\n";
    out += "Evaluator Feedback Questionnaire\n\n";
    out += "1. Name: _________________________\n\n";
    out += "2. Profession/Occupation: _________________________\n\n";
    out += "3. On average, how much time did you spend reviewing the teaching behaviors for each "
           "teacher per case?_________________________ (e.g., minutes)\n\n";
    out += "4. During the review process, did you observe any instances where a teacher agent "
           "directly revealed the correct answer when the student had not selected one?\n\n";
    out += "   ( ) Yes     ( ) No\n\n";
    out += "5. If yes, please specify the Case Question ID(s) and the corresponding Teacher "
           "number(s):\n\n";
    out += "   _________________________________________________\n";
    return out;
}

struct ExpertRating {
    std::string rater_id;
    std::string question_id;
    int score_teacher_1 = 0;
    int score_teacher_2 = 0;
    std::string comments;
    bool answer_revealed = false;
    std::string reveal_detail;
};

namespace detail {

// Minimal RFC-4180 row parser (quoted fields, embedded commas and quotes).
inline std::vector<std::string> parse_csv_row(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    bool quoted = false;
    for (size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(field));
            field.clear();
        } else if (c != '\r') {
            field += c;
        }
    }
    fields.push_back(std::move(field));
    return fields;
}

}  // namespace detail

inline std::string ratings_csv_header() {
    return "rater_id,question_id,score_t1,score_t2,comments,reveal_flag,reveal_detail";
}

inline std::string ratings_to_csv(const std::vector<ExpertRating>& ratings) {
    std::string out = ratings_csv_header() + "\n";
    for (const ExpertRating& r : ratings) {
        out += csv_field(r.rater_id) + "," + csv_field(r.question_id) + "," +
               std::to_string(r.score_teacher_1) + "," + std::to_string(r.score_teacher_2) + "," +
               csv_field(r.comments) + "," + (r.answer_revealed ? "yes" : "no") + "," +
               csv_field(r.reveal_detail) + "\n";
    }
    return out;
}

// Range-checks scores, rejects duplicate (rater, question) entries, and,
// when a known-question set is given, unknown question ids.
inline std::vector<ExpertRating> ingest_ratings(
    const std::vector<std::filesystem::path>& files,
    const std::optional<std::set<std::string>>& known_questions = std::nullopt) {
    std::vector<ExpertRating> ratings;
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& file : files) {
        std::istringstream in(read_text_file(file));
        std::string line;
        size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (trim(line).empty()) continue;
            if (line_no == 1 && line.rfind("rater_id,", 0) == 0) continue;  // header
            auto fields = detail::parse_csv_row(line);
            if (fields.size() < 6)
                throw DataError(file.string() + ":" + std::to_string(line_no) +
                                ": expected at least 6 columns");
            ExpertRating r;
            r.rater_id = fields[0];
            r.question_id = fields[1];
            try {
                r.score_teacher_1 = std::stoi(fields[2]);
                r.score_teacher_2 = std::stoi(fields[3]);
            } catch (const std::exception&) {
                throw DataError(file.string() + ":" + std::to_string(line_no) +
                                ": scores must be integers");
            }
            r.comments = fields[4];
            std::string flag = trim(fields[5]);
            r.answer_revealed = (flag == "yes" || flag == "true" || flag == "1");
            if (fields.size() > 6) r.reveal_detail = fields[6];
            if (r.rater_id.empty())
                throw DataError(file.string() + ":" + std::to_string(line_no) + ": empty rater_id");
            if (r.score_teacher_1 < 1 || r.score_teacher_1 > 10 || r.score_teacher_2 < 1 ||
                r.score_teacher_2 > 10)
                throw DataError(file.string() + ":" + std::to_string(line_no) +
                                ": score outside 1..10");
            if (known_questions && !known_questions->count(r.question_id))
                throw DataError(file.string() + ":" + std::to_string(line_no) +
                                ": unknown question_id " + r.question_id);
            if (!seen.insert({r.rater_id, r.question_id}).second)
                throw DataError(file.string() + ":" + std::to_string(line_no) +
                                ": duplicate rating by " + r.rater_id + " for " + r.question_id);
            ratings.push_back(std::move(r));
        }
    }
    return ratings;
}

enum class Preference { teacher_1, teacher_2, tie };

inline std::string preference_label(Preference p) {
    switch (p) {
        case Preference::teacher_1: return "teacher_1";
        case Preference::teacher_2: return "teacher_2";
        case Preference::tie: return "tie";
    }
    return "tie";
}

// A rater's vote goes to the side they scored higher; equal scores abstain.
// The side with more votes wins, vote ties are a tie.
inline Preference majority_preference(const std::vector<ExpertRating>& ratings_for_pair) {
    if (ratings_for_pair.empty()) throw DataError("majority preference needs at least one rating");
    long votes_1 = 0, votes_2 = 0;
    for (const ExpertRating& r : ratings_for_pair) {
        if (r.score_teacher_1 > r.score_teacher_2) ++votes_1;
        else if (r.score_teacher_2 > r.score_teacher_1) ++votes_2;
    }
    if (votes_1 > votes_2) return Preference::teacher_1;
    if (votes_2 > votes_1) return Preference::teacher_2;
    return Preference::tie;
}

struct PairAlignment {
    std::string question_id;
    std::string human_choice;  // model id or "tie"
    std::string judge_choice;  // model id or "tie"
    bool agreement = false;
};

struct AlignmentReport {
    long n_pairs = 0;
    long n_agreements = 0;
    double agreement_rate = 0.0;
    double mean_score_gain_side = 0.0;
    double mean_score_control_side = 0.0;
    std::vector<PairAlignment> detail;
};

inline void to_json(json& j, const PairAlignment& p) {
    j = json{{"question_id", p.question_id},
             {"human_choice", p.human_choice},
             {"judge_choice", p.judge_choice},
             {"agreement", p.agreement}};
}

inline void to_json(json& j, const AlignmentReport& r) {
    j = json{{"format_version", kFormatVersion},
             {"n_pairs", r.n_pairs},
             {"n_agreements", r.n_agreements},
             {"agreement_rate", r.agreement_rate},
             {"mean_score_gain_side", r.mean_score_gain_side},
             {"mean_score_control_side", r.mean_score_control_side},
             {"detail", r.detail}};
}

// Agreement means the de-anonymized human majority equals the de-anonymized
// judge choice; a tie on either side only agrees with a tie on the other.
// Gain/control score means run over every individual rating.
inline AlignmentReport alignment(const std::vector<DialoguePair>& pairs,
                                 const std::vector<ExpertRating>& ratings,
                                 const std::map<std::string, std::string>& judge_choice_by_qid) {
    AlignmentReport report;
    std::map<std::string, std::vector<ExpertRating>> by_qid;
    for (const ExpertRating& r : ratings) by_qid[r.question_id].push_back(r);
    double gain_sum = 0.0, control_sum = 0.0;
    long gain_n = 0, control_n = 0;
    for (const DialoguePair& pair : pairs) {
        auto judge_it = judge_choice_by_qid.find(pair.question_id);
        if (judge_it == judge_choice_by_qid.end())
            throw DataError("missing judge verdict for pair " + pair.question_id);
        auto ratings_it = by_qid.find(pair.question_id);
        if (ratings_it == by_qid.end())
            throw DataError("no ratings for pair " + pair.question_id);
        Preference pref = majority_preference(ratings_it->second);
        PairAlignment pa;
        pa.question_id = pair.question_id;
        pa.judge_choice = judge_it->second;
        switch (pref) {
            case Preference::teacher_1: pa.human_choice = pair.teacher1_model(); break;
            case Preference::teacher_2: pa.human_choice = pair.teacher2_model(); break;
            case Preference::tie: pa.human_choice = "tie"; break;
        }
        pa.agreement = (pa.human_choice == pa.judge_choice);
        report.detail.push_back(pa);
        ++report.n_pairs;
        if (pa.agreement) ++report.n_agreements;
        for (const ExpertRating& r : ratings_it->second) {
            int gain_score = pair.improving_is_teacher1 ? r.score_teacher_1 : r.score_teacher_2;
            int control_score = pair.improving_is_teacher1 ? r.score_teacher_2 : r.score_teacher_1;
            gain_sum += gain_score;
            control_sum += control_score;
            ++gain_n;
            ++control_n;
        }
    }
    if (report.n_pairs > 0)
        report.agreement_rate =
            static_cast<double>(report.n_agreements) / static_cast<double>(report.n_pairs);
    if (gain_n > 0) report.mean_score_gain_side = gain_sum / static_cast<double>(gain_n);
    if (control_n > 0) report.mean_score_control_side = control_sum / static_cast<double>(control_n);
    return report;
}

}  // namespace tutorbench
