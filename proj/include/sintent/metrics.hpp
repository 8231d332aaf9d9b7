#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sintent/error.hpp"

namespace sintent {

struct PRF {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

inline double harmonic_f1(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

inline PRF make_prf(double p, double r) { return {p, r, harmonic_f1(p, r)}; }

inline nlohmann::json to_json(const PRF& m) {
    return {{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}};
}

enum class Averaging { macro, micro };

struct ClassCounts {
    std::int64_t tp = 0, fp = 0, fn = 0;
};

// Per-class TP/FP/FN -> PRF. Macro averages P and R over classes that occur
// in predictions or truths; an unpredicted class has P = 0.
inline PRF prf_from_counts(const std::map<int, ClassCounts>& counts, Averaging avg) {
    if (avg == Averaging::micro) {
        ClassCounts s;
        for (const auto& [c, k] : counts) {
            s.tp += k.tp;
            s.fp += k.fp;
            s.fn += k.fn;
        }
        const double p = s.tp + s.fp > 0 ? static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fp) : 0.0;
        const double r = s.tp + s.fn > 0 ? static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fn) : 0.0;
        return make_prf(p, r);
    }
    double sp = 0.0, sr = 0.0;
    int n = 0;
    for (const auto& [c, k] : counts) {
        if (k.tp + k.fp + k.fn == 0)
            continue;
        sp += k.tp + k.fp > 0 ? static_cast<double>(k.tp) / static_cast<double>(k.tp + k.fp) : 0.0;
        sr += k.tp + k.fn > 0 ? static_cast<double>(k.tp) / static_cast<double>(k.tp + k.fn) : 0.0;
        ++n;
    }
    if (n == 0)
        return {};
    return make_prf(sp / n, sr / n);
}

struct TokenPosition {
    std::size_t sequence = 0;
    std::size_t token = 0;

    auto operator<=>(const TokenPosition&) const = default;
};

// Exact-position boundary detection. No predictions -> P = 0.
inline PRF ib_prf(const std::vector<TokenPosition>& predicted, const std::vector<TokenPosition>& truth) {
    const std::set<TokenPosition> pred(predicted.begin(), predicted.end());
    const std::set<TokenPosition> gold(truth.begin(), truth.end());
    std::size_t tp = 0;
    for (const auto& p : pred)
        tp += gold.count(p);
    const double p = pred.empty() ? 0.0 : static_cast<double>(tp) / static_cast<double>(pred.size());
    const double r = gold.empty() ? 0.0 : static_cast<double>(tp) / static_cast<double>(gold.size());
    return make_prf(p, r);
}

// Multi-class PRF from paired (predicted, true) labels. Labels outside
// [0, num_classes) (e.g. O) are not classes: a true O adds nothing, a
// predicted O only costs the true class a false negative.
inline PRF classification_prf(const std::vector<int>& predicted, const std::vector<int>& truth, int num_classes,
                              Averaging avg = Averaging::macro) {
    if (predicted.size() != truth.size())
        throw DataError("classification_prf: length mismatch");
    auto is_class = [num_classes](int c) { return c >= 0 && c < num_classes; };
    std::map<int, ClassCounts> counts;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const int p = predicted[i], y = truth[i];
        if (p == y) {
            if (is_class(y))
                ++counts[y].tp;
            continue;
        }
        if (is_class(p))
            ++counts[p].fp;
        if (is_class(y))
            ++counts[y].fn;
    }
    return prf_from_counts(counts, avg);
}

// Intent argmax read at each ground-truth boundary vs the true class.
inline PRF intent_at_oracle_boundary(const std::vector<int>& predicted, const std::vector<int>& truth,
                                     int num_classes, Averaging avg = Averaging::macro) {
    return classification_prf(predicted, truth, num_classes, avg);
}

struct LabeledPosition {
    std::size_t sequence = 0;
    std::size_t token = 0;
    int class_id = 0;
};

// A true positive needs the right class at the true boundary (within
// `window` tokens); each truth is matched at most once.
inline PRF intent_at_predicted_boundary(const std::vector<LabeledPosition>& predicted,
                                        const std::vector<LabeledPosition>& truth, int num_classes,
                                        std::size_t window = 0, Averaging avg = Averaging::macro) {
    std::map<std::size_t, std::vector<std::size_t>> truth_by_seq;
    for (std::size_t i = 0; i < truth.size(); ++i)
        truth_by_seq[truth[i].sequence].push_back(i);
    std::vector<bool> matched(truth.size(), false);
    std::map<int, ClassCounts> counts;
    auto is_class = [num_classes](int c) { return c >= 0 && c < num_classes; };
    for (const auto& p : predicted) {
        bool hit = false;
        if (auto it = truth_by_seq.find(p.sequence); it != truth_by_seq.end()) {
            for (auto ti : it->second) {
                const auto& g = truth[ti];
                const auto dist = p.token > g.token ? p.token - g.token : g.token - p.token;
                if (!matched[ti] && dist <= window && g.class_id == p.class_id) {
                    matched[ti] = true;
                    hit = true;
                    break;
                }
            }
        }
        if (!is_class(p.class_id))
            continue;
        if (hit)
            ++counts[p.class_id].tp;
        else
            ++counts[p.class_id].fp;
    }
    for (std::size_t i = 0; i < truth.size(); ++i)
        if (!matched[i] && is_class(truth[i].class_id))
            ++counts[truth[i].class_id].fn;
    return prf_from_counts(counts, avg);
}

// Token-level intent tagging PRF, O excluded from the class average.
inline PRF intent_prf_unmasked(const std::vector<int>& predicted_tags, const std::vector<int>& true_tags,
                               int num_classes, Averaging avg = Averaging::macro) {
    return classification_prf(predicted_tags, true_tags, num_classes, avg);
}

// ---------------------------------------------------------------------------
// Real-time replay

// One line of the decisions JSONL.
struct DecisionRecord {
    std::string id;
    bool fired = false;
    std::optional<std::string> predicted_class;
    std::int64_t turn = -1;
    std::int64_t token = -1;
    std::int64_t global_token = -1; // customer words since conversation start
    double score = 0.0;
    std::string true_class;
    std::int64_t true_turn = 0;
    std::int64_t true_token = 0;
    std::int64_t true_global_token = 0;

    bool operator==(const DecisionRecord&) const = default;
};

inline nlohmann::json to_json(const DecisionRecord& r) {
    nlohmann::json j;
    j["id"] = r.id;
    j["fired"] = r.fired;
    j["class"] = r.predicted_class ? nlohmann::json(*r.predicted_class) : nlohmann::json(nullptr);
    j["turn"] = r.turn;
    j["token"] = r.token;
    j["global_token"] = r.global_token;
    j["score"] = r.score;
    j["true_class"] = r.true_class;
    j["true_turn"] = r.true_turn;
    j["true_token"] = r.true_token;
    j["true_global_token"] = r.true_global_token;
    return j;
}

inline DecisionRecord decision_record_from_json(const nlohmann::json& j) {
    DecisionRecord r;
    r.id = j.at("id").get<std::string>();
    r.fired = j.at("fired").get<bool>();
    if (const auto& c = j.at("class"); !c.is_null())
        r.predicted_class = c.get<std::string>();
    r.turn = j.at("turn").get<std::int64_t>();
    r.token = j.at("token").get<std::int64_t>();
    r.global_token = j.at("global_token").get<std::int64_t>();
    r.score = j.at("score").get<double>();
    r.true_class = j.at("true_class").get<std::string>();
    r.true_turn = j.at("true_turn").get<std::int64_t>();
    r.true_token = j.at("true_token").get<std::int64_t>();
    r.true_global_token = j.at("true_global_token").get<std::int64_t>();
    if (r.fired && !r.predicted_class)
        throw DataError("decision '" + r.id + "' fired without a class");
    return r;
}

inline void write_decisions(std::ostream& out, const std::vector<DecisionRecord>& records) {
    for (const auto& r : records)
        out << to_json(r).dump() << '\n';
}

inline std::vector<DecisionRecord> read_decisions(std::istream& in) {
    std::vector<DecisionRecord> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        try {
            out.push_back(decision_record_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(n, e.what());
        }
    }
    return out;
}

inline std::vector<DecisionRecord> load_decisions(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot open decisions file '" + path + "'");
    return read_decisions(in);
}

struct RealTimeReport {
    std::size_t n = 0;
    std::size_t n_fired = 0;
    std::size_t n_missed = 0;
    double acc = 0.0;
    double acc_rt = 0.0;
    double acc_rp = 0.0;
    double mtd = 0.0; // turns, predicted - true (negative = early)
    double mpd = 0.0; // customer words, predicted - true
    std::map<std::int64_t, std::size_t> turn_diff_histogram;
};

// Accuracies count misses as wrong; MTD / MPD average over fired records only
// (0 when nothing fired).
inline RealTimeReport realtime_metrics(const std::vector<DecisionRecord>& records) {
    if (records.empty())
        throw DataError("realtime_metrics: no decision records");
    RealTimeReport rep;
    rep.n = records.size();
    std::size_t correct = 0, correct_turn = 0, correct_pos = 0;
    std::int64_t turn_sum = 0, pos_sum = 0;
    for (const auto& r : records) {
        if (!r.fired) {
            ++rep.n_missed;
            continue;
        }
        ++rep.n_fired;
        const std::int64_t dt = r.turn - r.true_turn;
        turn_sum += dt;
        pos_sum += r.global_token - r.true_global_token;
        ++rep.turn_diff_histogram[dt];
        if (r.predicted_class && *r.predicted_class == r.true_class) {
            ++correct;
            if (dt == 0) {
                ++correct_turn;
                if (r.token == r.true_token)
                    ++correct_pos;
            }
        }
    }
    const auto n = static_cast<double>(rep.n);
    rep.acc = static_cast<double>(correct) / n;
    rep.acc_rt = static_cast<double>(correct_turn) / n;
    rep.acc_rp = static_cast<double>(correct_pos) / n;
    if (rep.n_fired > 0) {
        rep.mtd = static_cast<double>(turn_sum) / static_cast<double>(rep.n_fired);
        rep.mpd = static_cast<double>(pos_sum) / static_cast<double>(rep.n_fired);
    }
    return rep;
}

inline nlohmann::json to_json(const RealTimeReport& r) {
    nlohmann::json hist = nlohmann::json::object();
    for (const auto& [k, v] : r.turn_diff_histogram)
        hist[std::to_string(k)] = v;
    return {{"n", r.n},         {"n_fired", r.n_fired}, {"n_missed", r.n_missed}, {"acc", r.acc},
            {"acc_rt", r.acc_rt}, {"acc_rp", r.acc_rp}, {"mtd", r.mtd},           {"mpd", r.mpd},
            {"turn_diff_histogram", hist}};
}

// `turn_diff,count`, ascending.
inline void write_histogram_csv(std::ostream& out, const std::map<std::int64_t, std::size_t>& hist) {
    out << "turn_diff,count\n";
    for (const auto& [k, v] : hist)
        out << k << ',' << v << '\n';
}

inline void export_histogram(const RealTimeReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw DataError("cannot write histogram '" + path + "'");
    write_histogram_csv(out, report.turn_diff_histogram);
    if (!out)
        throw DataError("failed writing histogram '" + path + "'");
}

inline std::map<std::int64_t, std::size_t> read_histogram_csv(std::istream& in) {
    std::map<std::int64_t, std::size_t> hist;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (n == 1) {
            if (line != "turn_diff,count")
                throw ParseError(n, "expected header 'turn_diff,count'");
            continue;
        }
        if (line.empty())
            continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos)
            throw ParseError(n, "expected 'turn_diff,count'");
        try {
            hist[std::stoll(line.substr(0, comma))] = std::stoull(line.substr(comma + 1));
        } catch (const std::exception&) {
            throw ParseError(n, "bad histogram row '" + line + "'");
        }
    }
    return hist;
}

} // namespace sintent
