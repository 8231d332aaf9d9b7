#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "sintent/corpus.hpp"
#include "sintent/metrics.hpp"
#include "sintent/model.hpp"

namespace sintent {

struct StreamOptions {
    double threshold = 0.5;
    // Advance the intent stack only on the token where IB fires, from a state
    // reset at turn start (the literal reading of the replay pseudo-code).
    bool strict_algorithm1 = false;
};

struct Decision {
    int class_id = 0;
    double score = 0.0;
    std::size_t turn_index = 0;
    std::size_t token_index = 0;     // reported boundary: raw_position - lookahead, floored at 0
    std::size_t raw_position = 0;    // position within the turn where the score crossed T
    std::size_t global_position = 0; // customer words before this turn + token_index

    bool operator==(const Decision&) const = default;
};

// Word-at-a-time first-intent detector over one conversation.
//
// Customer turns are stepped through the model; agent turns are only
// buffered for the context encoder. Task states are reset (or context
// initialized) at every turn start. The first score above the threshold
// produces the conversation's single Decision; later words are ignored.
//
// Firing score per variant: IB probability for the IB variants, the largest
// non-O intent probability for intent_only, and the turn classifier's
// probability of its non-O argmax (evaluated at end of turn) for offline.
template <typename T>
class StreamSession {
public:
    StreamSession(const Model<T>& model, StreamOptions options, std::uint64_t pad_seed)
        : model_(&model), options_(options), pad_rng_(pad_seed) {
        if (options_.threshold <= 0.0 || options_.threshold >= 1.0)
            throw UsageError("threshold must lie in (0, 1)");
        if (!model.is_offline())
            states_ = zero_task_states(model);
    }

    void begin_turn(Speaker speaker) {
        if (in_turn_ && !turn_ids_.empty())
            close_turn();
        in_turn_ = true;
        speaker_ = speaker;
        ++turn_counter_;
        turn_ids_.clear();
        position_ = 0;
        if (model_->is_offline())
            return;
        if (speaker == Speaker::customer && model_->config.context_turns > 0)
            states_ = encode_context(*model_, std::vector<std::vector<int>>(context_.begin(), context_.end()));
        else
            states_ = zero_task_states(*model_);
    }

    std::optional<Decision> push_word(const std::string& word) { return push_id(model_->token_id(word)); }

    std::optional<Decision> push_id(int token_id) {
        if (!in_turn_)
            throw UsageError("push_word outside a turn");
        if (fired_) {
            ++ignored_words_;
            return std::nullopt;
        }
        turn_ids_.push_back(model_->clamp_id(token_id));
        if (speaker_ != Speaker::customer)
            return std::nullopt;
        ++customer_words_;
        if (model_->is_offline())
            return std::nullopt;
        return advance(token_id);
    }

    std::optional<Decision> push_turn(const std::vector<std::string>& words) {
        std::optional<Decision> d;
        for (const auto& w : words)
            if (auto got = push_word(w); got && !d)
                d = got;
        return d;
    }

    // Lookahead models get k random pad tokens so a turn-final boundary can
    // still fire; offline models classify the finished turn here.
    std::optional<Decision> end_turn() {
        if (!in_turn_)
            throw UsageError("end_turn outside a turn");
        std::optional<Decision> d;
        if (speaker_ == Speaker::customer && !fired_ && !turn_ids_.empty()) {
            if (model_->is_offline()) {
                d = classify_turn();
            } else {
                for (int j = 0; j < model_->config.lookahead_k && !d; ++j)
                    d = advance(model_->vocab.random_regular_id(pad_rng_));
            }
        }
        close_turn();
        return d;
    }

    const std::optional<Decision>& decision() const { return decision_; }
    bool fired() const { return fired_; }
    std::size_t ignored_words() const { return ignored_words_; }
    std::size_t model_steps() const { return model_steps_; }
    const TaskStates<T>& states() const { return states_; }
    std::size_t context_size() const { return context_.size(); }
    std::size_t customer_words() const { return customer_words_; }

private:
    std::optional<Decision> advance(int token_id) {
        const std::size_t raw = position_++;
        ++model_steps_;
        double score = 0.0;
        int cls = 0;
        const int C = model_->num_classes();
        if (model_->variant == Variant::intent_only) {
            const Vec<T> dist = intent_step(*model_, token_id, states_.intent);
            cls = static_cast<int>(argmax(dist, 0, C));
            score = static_cast<double>(dist(cls));
        } else if (options_.strict_algorithm1) {
            score = static_cast<double>(ib_step(*model_, token_id, states_.ib));
            if (score > options_.threshold) {
                const Vec<T> dist = intent_step(*model_, token_id, states_.intent);
                cls = static_cast<int>(argmax(dist, 0, C));
            }
        } else {
            const auto out = stream_step(*model_, token_id, states_);
            score = static_cast<double>(out.ib_prob);
            cls = static_cast<int>(argmax(out.intent_dist, 0, C));
        }
        if (score > options_.threshold)
            return fire(cls, score, raw);
        return std::nullopt;
    }

    std::optional<Decision> classify_turn() {
        ++model_steps_;
        const Vec<T> dist = offline_forward(*model_, turn_ids_);
        const int cls = static_cast<int>(argmax(dist));
        if (cls == model_->outside_index())
            return std::nullopt;
        return fire(cls, static_cast<double>(dist(cls)), turn_ids_.size() - 1);
    }

    Decision fire(int cls, double score, std::size_t raw) {
        const auto k = static_cast<std::size_t>(model_->config.lookahead_k);
        Decision d;
        d.class_id = cls;
        d.score = score;
        d.turn_index = turn_counter_ - 1;
        d.raw_position = raw;
        d.token_index = raw >= k ? raw - k : 0;
        // customer_words_ already includes this turn's real words
        d.global_position = customer_words_ - real_words_in_turn() + d.token_index;
        fired_ = true;
        decision_ = d;
        return d;
    }

    std::size_t real_words_in_turn() const { return speaker_ == Speaker::customer ? turn_ids_.size() : 0; }

    void close_turn() {
        if (!turn_ids_.empty() && model_->config.context_turns > 0) {
            context_.push_back(turn_ids_);
            while (context_.size() > static_cast<std::size_t>(model_->config.context_turns))
                context_.pop_front();
        }
        turn_ids_.clear();
        in_turn_ = false;
    }

    const Model<T>* model_;
    StreamOptions options_;
    std::mt19937_64 pad_rng_;
    TaskStates<T> states_;
    std::deque<std::vector<int>> context_;
    std::vector<int> turn_ids_;
    Speaker speaker_ = Speaker::customer;
    bool in_turn_ = false;
    bool fired_ = false;
    std::optional<Decision> decision_;
    std::size_t turn_counter_ = 0;
    std::size_t position_ = 0;
    std::size_t customer_words_ = 0;
    std::size_t ignored_words_ = 0;
    std::size_t model_steps_ = 0;
};

// Customer words preceding turn `turn_index`.
inline std::size_t customer_words_before(const Transcript& t, std::size_t turn_index) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < turn_index && i < t.turns.size(); ++i)
        if (t.turns[i].speaker == Speaker::customer)
            n += t.turns[i].tokens.size();
    return n;
}

// Pad-token seed for one conversation, independent of how replay is sharded.
inline std::uint64_t conversation_seed(std::uint64_t eval_seed, std::size_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(eval_seed), static_cast<std::uint32_t>(eval_seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
    std::uint64_t out[1];
    std::uint32_t words[2];
    seq.generate(words, words + 2);
    out[0] = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
    return out[0];
}

// Runs one conversation through a fresh session and stops at the first decision.
template <typename T>
std::optional<Decision> replay_conversation(const Model<T>& model, const Transcript& t, const StreamOptions& opt,
                                            std::uint64_t pad_seed) {
    StreamSession<T> s(model, opt, pad_seed);
    for (const auto& turn : t.turns) {
        s.begin_turn(turn.speaker);
        for (const auto& tok : turn.tokens) {
            if (auto d = s.push_word(tok.text))
                return d;
        }
        if (auto d = s.end_turn())
            return d;
    }
    return std::nullopt;
}

struct ReplayOptions {
    StreamOptions stream;
    std::uint64_t eval_seed = 3;
    unsigned threads = 1;
};

// Replays every annotated transcript; unannotated ones have no truth to score
// against and are skipped. Output order follows input order.
template <typename T>
std::vector<DecisionRecord> replay(const std::vector<Transcript>& transcripts, const Model<T>& model,
                                   const ReplayOptions& opt) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < transcripts.size(); ++i)
        if (transcripts[i].annotation)
            idx.push_back(i);
    std::vector<DecisionRecord> out(idx.size());
    auto work = [&](std::size_t begin, std::size_t stride) {
        for (std::size_t j = begin; j < idx.size(); j += stride) {
            const auto& t = transcripts[idx[j]];
            const auto& a = *t.annotation;
            DecisionRecord r;
            r.id = t.id;
            r.true_class = model.classes.name(a.class_id);
            r.true_turn = static_cast<std::int64_t>(a.turn_index);
            r.true_token = static_cast<std::int64_t>(a.boundary_token_index);
            r.true_global_token =
                static_cast<std::int64_t>(customer_words_before(t, a.turn_index) + a.boundary_token_index);
            if (auto d = replay_conversation(model, t, opt.stream, conversation_seed(opt.eval_seed, idx[j]))) {
                r.fired = true;
                r.predicted_class = model.classes.name(d->class_id);
                r.turn = static_cast<std::int64_t>(d->turn_index);
                r.token = static_cast<std::int64_t>(d->token_index);
                r.global_token = static_cast<std::int64_t>(d->global_position);
                r.score = d->score;
            }
            out[j] = std::move(r);
        }
    };
    const unsigned n = std::max(1u, opt.threads);
    if (n == 1) {
        work(0, 1);
    } else {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < n; ++w)
            pool.emplace_back(work, w, n);
    }
    return out;
}

} // namespace sintent
