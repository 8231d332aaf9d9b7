#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include <json.hpp>

#include "sintent/corpus.hpp"
#include "sintent/metrics.hpp"
#include "sintent/model.hpp"
#include "sintent/stream.hpp"

namespace sintent {

// Per-timestep outputs of a streaming model over one annotated turn.
struct ScoredSequence {
    LabeledSequence seq;      // lookahead applied
    std::vector<double> score; // IB probability, or max non-O probability for intent_only
    std::vector<int> cls;      // argmax over the C classes
    std::vector<int> tag;      // argmax over C + 1 (kOutside for O)
};

// Runs every annotated turn of `transcripts` through the model, starting from
// the context-encoded state when the model has a context encoder. Pad tokens
// for lookahead come from a per-transcript generator seeded by `eval_seed`.
template <typename T>
std::vector<ScoredSequence> score_sequences(const Model<T>& model, const std::vector<Transcript>& transcripts,
                                            std::uint64_t eval_seed) {
    std::vector<ScoredSequence> out;
    const int C = model.num_classes();
    for (std::size_t i = 0; i < transcripts.size(); ++i) {
        const auto& t = transcripts[i];
        if (!t.annotation)
            continue;
        const auto ti = t.annotation->turn_index;
        std::mt19937_64 rng(conversation_seed(eval_seed, i));
        ScoredSequence s;
        s.seq = apply_lookahead(label_sequence(t.turns[ti], t.annotation, model.vocab, {t.id, ti}),
                                model.config.lookahead_k, model.vocab, rng);
        std::optional<TaskStates<T>> init;
        if (model.config.context_turns > 0) {
            std::vector<std::vector<int>> prev;
            for (std::size_t p = 0; p < ti; ++p)
                prev.push_back(encode_tokens(t.turns[p], model.vocab));
            init = encode_context(model, prev);
        }
        const auto outs = sequence_forward(model, s.seq.token_ids, init);
        for (std::size_t k = 0; k < outs.ib_probs.size(); ++k) {
            const auto& dist = outs.intent_dists[k];
            const int c = static_cast<int>(argmax(dist, 0, C));
            const int all = static_cast<int>(argmax(dist));
            s.cls.push_back(c);
            s.tag.push_back(all == C ? kOutside : all);
            s.score.push_back(model.variant == Variant::intent_only ? static_cast<double>(dist(c))
                                                                    : static_cast<double>(outs.ib_probs[k]));
        }
        out.push_back(std::move(s));
    }
    return out;
}

struct EvalOptions {
    double threshold = 0.5;
    std::size_t pb_window = 0;
    Averaging averaging = Averaging::macro;
};

struct OfflineReport {
    std::optional<PRF> ib;
    std::optional<PRF> intent_at_ob;
    std::optional<PRF> intent_at_pb;
    std::optional<PRF> intent;
    std::optional<double> accuracy;
    std::size_t sequences = 0;
    double threshold = 0.5;
};

inline nlohmann::json to_json(const OfflineReport& r) {
    nlohmann::json j;
    j["sequences"] = r.sequences;
    j["threshold"] = r.threshold;
    if (r.ib)
        j["ib_prf"] = to_json(*r.ib);
    if (r.intent_at_ob)
        j["intent_at_ob"] = to_json(*r.intent_at_ob);
    if (r.intent_at_pb)
        j["intent_at_pb"] = to_json(*r.intent_at_pb);
    if (r.intent)
        j["intent_prf"] = to_json(*r.intent);
    if (r.accuracy)
        j["accuracy"] = *r.accuracy;
    return j;
}

inline PRF intent_at_pb_from_scores(const std::vector<ScoredSequence>& scored, int num_classes,
                                    const EvalOptions& opt) {
    std::vector<LabeledPosition> pred, truth;
    for (std::size_t i = 0; i < scored.size(); ++i) {
        const auto& s = scored[i];
        for (std::size_t k = 0; k < s.score.size(); ++k)
            if (s.score[k] > opt.threshold)
                pred.push_back({i, k, s.cls[k]});
        if (auto b = s.seq.boundary())
            truth.push_back({i, *b, s.seq.intent_tags[*b]});
    }
    return intent_at_predicted_boundary(pred, truth, num_classes, opt.pb_window, opt.averaging);
}

// IB / Intent@OB / Intent@PB for IB variants; token-level intent PRF for intent_only.
inline OfflineReport report_from_scores(const std::vector<ScoredSequence>& scored, Variant variant,
                                        int num_classes, const EvalOptions& opt) {
    OfflineReport r;
    r.sequences = scored.size();
    r.threshold = opt.threshold;
    if (variant == Variant::intent_only) {
        std::vector<int> pred, gold;
        for (const auto& s : scored) {
            pred.insert(pred.end(), s.tag.begin(), s.tag.end());
            gold.insert(gold.end(), s.seq.intent_tags.begin(), s.seq.intent_tags.end());
        }
        r.intent = intent_prf_unmasked(pred, gold, num_classes, opt.averaging);
        return r;
    }
    std::vector<TokenPosition> ib_pred, ib_gold;
    std::vector<int> ob_pred, ob_gold;
    for (std::size_t i = 0; i < scored.size(); ++i) {
        const auto& s = scored[i];
        for (std::size_t k = 0; k < s.score.size(); ++k)
            if (s.score[k] > opt.threshold)
                ib_pred.push_back({i, k});
        if (auto b = s.seq.boundary()) {
            ib_gold.push_back({i, *b});
            ob_pred.push_back(s.cls[*b]);
            ob_gold.push_back(s.seq.intent_tags[*b]);
        }
    }
    r.ib = ib_prf(ib_pred, ib_gold);
    r.intent_at_ob = intent_at_oracle_boundary(ob_pred, ob_gold, num_classes, opt.averaging);
    r.intent_at_pb = intent_at_pb_from_scores(scored, num_classes, opt);
    return r;
}

// Offline classifier over the annotated turns (test sets hold intent turns only).
template <typename T>
OfflineReport evaluate_offline_classifier(const Model<T>& model, const std::vector<Transcript>& transcripts,
                                          const EvalOptions& opt) {
    std::vector<int> pred, gold;
    for (const auto& t : transcripts) {
        if (!t.annotation)
            continue;
        const auto ids = encode_tokens(t.turns[t.annotation->turn_index], model.vocab);
        const int c = static_cast<int>(argmax(offline_forward(model, ids)));
        pred.push_back(c == model.outside_index() ? kOutside : c);
        gold.push_back(t.annotation->class_id);
    }
    OfflineReport r;
    r.sequences = pred.size();
    r.threshold = opt.threshold;
    r.intent = classification_prf(pred, gold, model.num_classes(), opt.averaging);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        hit += pred[i] == gold[i];
    r.accuracy = pred.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(pred.size());
    return r;
}

template <typename T>
OfflineReport evaluate_model(const Model<T>& model, const std::vector<Transcript>& transcripts,
                             std::uint64_t eval_seed, const EvalOptions& opt) {
    if (model.is_offline())
        return evaluate_offline_classifier(model, transcripts, opt);
    return report_from_scores(score_sequences(model, transcripts, eval_seed), model.variant, model.num_classes(),
                              opt);
}

struct ThresholdSweep {
    double best_threshold = 0.5;
    double best_f1 = 0.0;
    std::vector<std::pair<double, double>> grid; // (threshold, Intent@PB F1)
};

// Grid 0.05, 0.10, ..., 0.95; the lowest threshold reaching the best F1 wins.
template <typename T>
ThresholdSweep tune_threshold(const Model<T>& model, const std::vector<Transcript>& validation,
                              std::uint64_t eval_seed, EvalOptions opt = {}) {
    if (model.is_offline())
        throw UsageError("tune-threshold needs a streaming model");
    const auto scored = score_sequences(model, validation, eval_seed);
    ThresholdSweep sweep;
    sweep.best_f1 = -1.0;
    for (int i = 1; i <= 19; ++i) {
        opt.threshold = 0.05 * i;
        const double f1 = intent_at_pb_from_scores(scored, model.num_classes(), opt).f1;
        sweep.grid.emplace_back(opt.threshold, f1);
        if (f1 > sweep.best_f1) {
            sweep.best_f1 = f1;
            sweep.best_threshold = opt.threshold;
        }
    }
    return sweep;
}

} // namespace sintent
