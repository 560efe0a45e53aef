#pragma once
// Outcome metrics over graded pre/post records: accuracy, learning gain,
// transition counts, impact ratio, subject-share stability, unique
// improvements, difficulty profiles, repeated-run variance, and correlation.
// Undefined values stay std::nullopt and render as "-".

#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "tutorbench/agents.hpp"

namespace tutorbench {

struct TransitionCounts {
    long n_pos = 0;            // pre-incorrect -> post-correct
    long n_neg = 0;            // pre-correct -> post-incorrect
    long n_keep_correct = 0;
    long n_keep_incorrect = 0;

    long total() const { return n_pos + n_neg + n_keep_correct + n_keep_incorrect; }
};

// Per-category absolute learning gains, as fractions.
using SubjectGains = std::map<std::string, double>;

struct MetricsSummary {
    std::string teacher_model;
    long n_questions = 0;
    double acc_pre = 0.0;
    double acc_post = 0.0;
    double alg = 0.0;
    std::optional<double> pnir;
    std::optional<double> css;
    long uic = 0;
    TransitionCounts transitions;
    SubjectGains per_category_gains;
    std::map<int, double> per_level_gains;
};

inline std::string format_metric(const std::optional<double>& v, int precision = 4) {
    if (!v) return "-";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.*f", precision, *v);
    return buf;
}

inline double accuracy(const std::vector<PreTestRecord>& records) {
    if (records.empty()) throw DataError("accuracy undefined over zero records");
    long correct = 0;
    for (const PreTestRecord& r : records)
        if (r.correct) ++correct;
    return static_cast<double>(correct) / static_cast<double>(records.size());
}

inline double alg(double acc_pre, double acc_post) { return acc_post - acc_pre; }

inline TransitionCounts transitions(const std::map<std::string, PreTestRecord>& pre,
                                    const std::map<std::string, PostTestRecord>& post) {
    if (pre.size() != post.size())
        throw DataError("pre/post question sets differ in size");
    TransitionCounts counts;
    for (const auto& [qid, p] : pre) {
        auto it = post.find(qid);
        if (it == post.end()) throw DataError("post-test missing question " + qid);
        bool a = p.correct, b = it->second.correct;
        if (!a && b) ++counts.n_pos;
        else if (a && !b) ++counts.n_neg;
        else if (a && b) ++counts.n_keep_correct;
        else ++counts.n_keep_incorrect;
    }
    return counts;
}

// Undefined whenever there are no positive cases; Table-1-style reports
// render that as "-".
inline std::optional<double> pnir(const TransitionCounts& counts) {
    if (counts.n_pos == 0) return std::nullopt;
    return static_cast<double>(counts.n_neg) / static_cast<double>(counts.n_pos);
}

// Normalized share of the total gain per category. Undefined when the total
// gain is not positive.
inline std::optional<std::map<std::string, double>> slgpd(const SubjectGains& gains) {
    double total = 0.0;
    for (const auto& [cat, g] : gains) total += g;
    if (total <= 0.0) return std::nullopt;
    std::map<std::string, double> shares;
    for (const auto& [cat, g] : gains) shares[cat] = g / total;
    return shares;
}

inline double population_std(const std::vector<double>& values) {
    if (values.empty()) throw DataError("std undefined over zero values");
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    return std::sqrt(ss / static_cast<double>(values.size()));
}

inline double population_variance(const std::vector<double>& values) {
    double s = population_std(values);
    return s * s;
}

// Population standard deviation of the normalized subject shares.
inline std::optional<double> css(const SubjectGains& gains) {
    if (gains.size() < 2) return std::nullopt;
    auto shares = slgpd(gains);
    if (!shares) return std::nullopt;
    std::vector<double> v;
    v.reserve(shares->size());
    for (const auto& [cat, s] : *shares) v.push_back(s);
    return population_std(v);
}

// A question counts for a teacher only when that teacher is the sole
// improver on it.
inline std::map<std::string, long> uic(
    const std::map<std::string, std::set<std::string>>& per_teacher_improvements) {
    std::map<std::string, long> improvers_per_question_count;
    for (const auto& [teacher, qids] : per_teacher_improvements)
        for (const std::string& qid : qids) ++improvers_per_question_count[qid];
    std::map<std::string, long> counts;
    for (const auto& [teacher, qids] : per_teacher_improvements) {
        counts[teacher] = 0;
        for (const std::string& qid : qids)
            if (improvers_per_question_count[qid] == 1) ++counts[teacher];
    }
    return counts;
}

struct LevelGainProfile {
    std::map<int, double> per_level_alg;            // (pos - neg) / n per level
    std::optional<std::map<int, double>> shares;    // per-level share of total gain
    double std_across_levels = 0.0;                 // population std of per-level gains
};

struct QuestionOutcome {
    std::string question_id;
    bool pre_correct = false;
    bool post_correct = false;
};

inline LevelGainProfile gains_by_level(const std::vector<QuestionOutcome>& outcomes,
                                       const std::map<std::string, int>& level_of) {
    std::map<int, long> pos, neg, n;
    for (const QuestionOutcome& q : outcomes) {
        auto it = level_of.find(q.question_id);
        if (it == level_of.end()) continue;  // unrated questions stay out of the profile
        ++n[it->second];
        if (!q.pre_correct && q.post_correct) ++pos[it->second];
        if (q.pre_correct && !q.post_correct) ++neg[it->second];
    }
    LevelGainProfile profile;
    double total_gain = 0.0;
    std::vector<double> gains;
    for (const auto& [level, count] : n) {
        double g = static_cast<double>(pos[level] - neg[level]) / static_cast<double>(count);
        profile.per_level_alg[level] = g;
        gains.push_back(g);
        total_gain += g;
    }
    if (!gains.empty()) profile.std_across_levels = population_std(gains);
    if (total_gain > 0.0) {
        std::map<int, double> shares;
        for (const auto& [level, g] : profile.per_level_alg) shares[level] = g / total_gain;
        profile.shares = shares;
    }
    return profile;
}

// Variance between two repeated-run ALG results, in whatever unit the
// caller uses (the reference tables use percentage points).
inline double run_variance(double alg_run1, double alg_run2) {
    return population_variance({alg_run1, alg_run2});
}

// Pearson product-moment coefficient over paired per-model values.
inline double correlation(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw DataError("correlation requires equal-length vectors");
    size_t n = x.size();
    if (n < 3) throw DataError("correlation requires at least 3 pairs");
    double mx = 0.0, my = 0.0;
    for (size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double cov = 0.0, sx = 0.0, sy = 0.0;
    for (size_t i = 0; i < n; ++i) {
        cov += (x[i] - mx) * (y[i] - my);
        sx += (x[i] - mx) * (x[i] - mx);
        sy += (y[i] - my) * (y[i] - my);
    }
    if (sx == 0.0 || sy == 0.0) throw DataError("correlation undefined with zero variance");
    return cov / std::sqrt(sx * sy);
}

inline void to_json(json& j, const TransitionCounts& c) {
    j = json{{"n_pos", c.n_pos},
             {"n_neg", c.n_neg},
             {"n_keep_correct", c.n_keep_correct},
             {"n_keep_incorrect", c.n_keep_incorrect}};
}

inline void from_json(const json& j, TransitionCounts& c) {
    j.at("n_pos").get_to(c.n_pos);
    j.at("n_neg").get_to(c.n_neg);
    j.at("n_keep_correct").get_to(c.n_keep_correct);
    j.at("n_keep_incorrect").get_to(c.n_keep_incorrect);
}

inline void to_json(json& j, const MetricsSummary& m) {
    j = json{{"format_version", kFormatVersion},
             {"teacher_model", m.teacher_model},
             {"n_questions", m.n_questions},
             {"acc_pre", m.acc_pre},
             {"acc_post", m.acc_post},
             {"alg", m.alg},
             {"uic", m.uic},
             {"transitions", m.transitions},
             {"per_category_gains", m.per_category_gains},
             {"per_level_gains", json::object()}};
    j["pnir"] = m.pnir ? json(*m.pnir) : json(nullptr);
    j["css"] = m.css ? json(*m.css) : json(nullptr);
    for (const auto& [level, g] : m.per_level_gains)
        j["per_level_gains"][std::to_string(level)] = g;
}

inline void from_json(const json& j, MetricsSummary& m) {
    check_format_version(j, "metrics summary");
    j.at("teacher_model").get_to(m.teacher_model);
    j.at("n_questions").get_to(m.n_questions);
    j.at("acc_pre").get_to(m.acc_pre);
    j.at("acc_post").get_to(m.acc_post);
    j.at("alg").get_to(m.alg);
    j.at("uic").get_to(m.uic);
    j.at("transitions").get_to(m.transitions);
    j.at("per_category_gains").get_to(m.per_category_gains);
    if (j.contains("pnir") && j["pnir"].is_number()) m.pnir = j["pnir"].get<double>();
    if (j.contains("css") && j["css"].is_number()) m.css = j["css"].get<double>();
    if (j.contains("per_level_gains"))
        for (auto& [key, g] : j["per_level_gains"].items())
            m.per_level_gains[std::stoi(key)] = g.get<double>();
}

// Flat table mirroring the reference report columns.
inline std::string metrics_to_csv(const std::vector<MetricsSummary>& summaries,
                                  const std::string& dataset_label = "overall") {
    std::string out = "teacher,dataset,n,pre,post,alg,css,pnir,uic\n";
    for (const MetricsSummary& m : summaries) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.4f,%.4f,%.4f", m.acc_pre, m.acc_post, m.alg);
        out += csv_field(m.teacher_model) + "," + csv_field(dataset_label) + "," +
               std::to_string(m.n_questions) + "," + buf + "," + format_metric(m.css, 3) + "," +
               format_metric(m.pnir, 2) + "," + std::to_string(m.uic) + "\n";
    }
    return out;
}

}  // namespace tutorbench
