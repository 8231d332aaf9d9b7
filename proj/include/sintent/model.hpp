#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "sintent/config.hpp"
#include "sintent/corpus.hpp"
#include "sintent/error.hpp"
#include "sintent/layers.hpp"
#include "sintent/objective.hpp"
#include "sintent/tensor.hpp"

namespace sintent {

// Shared embedding feeding an IB stack (sigmoid head) and an intent stack
// (softmax head over C classes + O). The context stack, when present, encodes
// previous turns into the initial states of both task stacks.
template <typename T>
struct MultiTaskNet {
    Parameter<T> embedding;
    LstmStack<T> ib_lstm;
    LstmStack<T> intent_lstm;
    Dense<T> ib_head;
    Dense<T> intent_head;
    std::optional<LstmStack<T>> context_lstm;

    // Both task paths read this one table.
    Parameter<T>& ib_embedding() { return embedding; }
    Parameter<T>& intent_embedding() { return embedding; }
};

// Turn-level classifier: independent forward and backward stacks, head over
// the concatenated final states.
template <typename T>
struct OfflineNet {
    Parameter<T> embedding;
    LstmStack<T> fwd_lstm;
    LstmStack<T> bwd_lstm;
    Dense<T> head;
};

template <typename T>
struct Model {
    ModelConfig config;
    Variant variant = Variant::multitask;
    Vocabulary vocab;
    ClassList classes;
    std::variant<MultiTaskNet<T>, OfflineNet<T>> net;

    int num_classes() const { return static_cast<int>(classes.size()); }
    int num_outputs() const { return num_classes() + 1; } // O is the last output
    int outside_index() const { return num_classes(); }

    bool is_offline() const { return std::holds_alternative<OfflineNet<T>>(net); }
    MultiTaskNet<T>& multitask() { return std::get<MultiTaskNet<T>>(net); }
    const MultiTaskNet<T>& multitask() const { return std::get<MultiTaskNet<T>>(net); }
    OfflineNet<T>& offline() { return std::get<OfflineNet<T>>(net); }
    const OfflineNet<T>& offline() const { return std::get<OfflineNet<T>>(net); }

    // Every parameter in canonical order (checkpoint and optimizer order).
    std::vector<Parameter<T>*> params() {
        std::vector<Parameter<T>*> out;
        auto add = [&out](auto&& list) {
            for (auto* p : list)
                out.push_back(p);
        };
        if (auto* m = std::get_if<MultiTaskNet<T>>(&net)) {
            out.push_back(&m->embedding);
            add(m->ib_lstm.params());
            add(m->ib_head.params());
            add(m->intent_lstm.params());
            add(m->intent_head.params());
            if (m->context_lstm)
                add(m->context_lstm->params());
        } else {
            auto& o = offline();
            out.push_back(&o.embedding);
            add(o.fwd_lstm.params());
            add(o.bwd_lstm.params());
            add(o.head.params());
        }
        return out;
    }

    // Parameters the variant's objective trains.
    std::vector<Parameter<T>*> trainable_params() {
        if (variant != Variant::intent_only)
            return params();
        auto& m = multitask();
        std::vector<Parameter<T>*> out{&m.embedding};
        for (auto* p : m.intent_lstm.params())
            out.push_back(p);
        for (auto* p : m.intent_head.params())
            out.push_back(p);
        return out;
    }

    int token_id(const std::string& word) const { return vocab.id(word); }
    int clamp_id(int id) const { return id >= 0 && id < static_cast<int>(vocab.size()) ? id : Vocabulary::unk_id; }
};

// Builds and initializes a model; parameters are drawn from config.seed.
template <typename T>
Model<T> make_model(ModelConfig config, Variant variant, Vocabulary vocab, ClassList classes) {
    config = effective_config(config, variant);
    config.vocab_size = static_cast<int>(vocab.size());
    config.num_classes = static_cast<int>(classes.size());
    validate_config(config);
    Model<T> m;
    m.config = config;
    m.variant = variant;
    m.vocab = std::move(vocab);
    m.classes = std::move(classes);
    std::mt19937_64 rng(config.seed);
    const double s = config.init_scale;
    const int E = config.embed_dim, H = config.hidden_dim, L = config.num_layers;
    if (variant == Variant::offline) {
        OfflineNet<T> o;
        o.embedding = Parameter<T>("embedding", config.vocab_size, E);
        o.fwd_lstm = LstmStack<T>("offline.fwd", E, H, L);
        o.bwd_lstm = LstmStack<T>("offline.bwd", E, H, L);
        o.head = Dense<T>("offline.head", 2 * H, m.num_outputs());
        init_uniform(o.embedding, -s, s, rng);
        o.fwd_lstm.init(rng, s, config.forget_bias);
        o.bwd_lstm.init(rng, s, config.forget_bias);
        o.head.init(rng, s);
        m.net = std::move(o);
    } else {
        MultiTaskNet<T> n;
        n.embedding = Parameter<T>("embedding", config.vocab_size, E);
        n.ib_lstm = LstmStack<T>("ib", E, H, L);
        n.ib_head = Dense<T>("ib.head", H, 1);
        n.intent_lstm = LstmStack<T>("intent", E, H, L);
        n.intent_head = Dense<T>("intent.head", H, m.num_outputs());
        init_uniform(n.embedding, -s, s, rng);
        n.ib_lstm.init(rng, s, config.forget_bias);
        n.ib_head.init(rng, s);
        n.intent_lstm.init(rng, s, config.forget_bias);
        n.intent_head.init(rng, s);
        if (variant == Variant::multitask_context) {
            n.context_lstm = LstmStack<T>("context", E, H, L);
            n.context_lstm->init(rng, s, config.forget_bias);
        }
        m.net = std::move(n);
    }
    return m;
}

// Same architecture and values at another precision.
template <typename U, typename T>
Model<U> cast_model(Model<T>& src) {
    Model<U> dst = make_model<U>(src.config, src.variant, src.vocab, src.classes);
    auto from = src.params();
    auto to = dst.params();
    for (std::size_t k = 0; k < from.size(); ++k)
        to[k]->value = from[k]->value.template cast<U>();
    return dst;
}

// ---------------------------------------------------------------------------
// Streaming inference

template <typename T>
struct TaskStates {
    RecurrentState<T> ib;
    RecurrentState<T> intent;

    bool operator==(const TaskStates&) const = default;
};

template <typename T>
TaskStates<T> zero_task_states(const Model<T>& model) {
    const auto& m = model.multitask();
    return {m.ib_lstm.zero_state(), m.intent_lstm.zero_state()};
}

template <typename T>
struct StepOutput {
    T ib_prob = 0;
    Vec<T> intent_dist;
};

// IB path only: advances the IB stack and returns the sigmoid score.
template <typename T>
T ib_step(const Model<T>& model, int token_id, RecurrentState<T>& state) {
    const auto& m = model.multitask();
    const Vec<T> x = m.embedding.value.row(model.clamp_id(token_id)).transpose();
    const Vec<T> h = m.ib_lstm.step(x, state);
    return dense_forward(h, m.ib_head, Activation::sigmoid)(0);
}

// Intent path only: advances the intent stack and returns the distribution.
template <typename T>
Vec<T> intent_step(const Model<T>& model, int token_id, RecurrentState<T>& state) {
    const auto& m = model.multitask();
    const Vec<T> x = m.embedding.value.row(model.clamp_id(token_id)).transpose();
    const Vec<T> h = m.intent_lstm.step(x, state);
    return dense_forward(h, m.intent_head, Activation::softmax);
}

// One word through both task stacks. Unknown ids map to UNK.
template <typename T>
StepOutput<T> stream_step(const Model<T>& model, int token_id, TaskStates<T>& states) {
    StepOutput<T> out;
    out.ib_prob = ib_step(model, token_id, states.ib);
    out.intent_dist = intent_step(model, token_id, states.intent);
    return out;
}

// Concatenates the previous turns (chronological, oldest dropped first beyond
// the token cap), runs the context stack and returns its final state as the
// initial state of both task stacks. No context -> zero states.
template <typename T>
TaskStates<T> encode_context(const Model<T>& model, const std::vector<std::vector<int>>& previous_turns) {
    const auto& m = model.multitask();
    TaskStates<T> zero = zero_task_states(model);
    if (!m.context_lstm || model.config.context_turns <= 0)
        return zero;
    const std::size_t n = std::min(previous_turns.size(), static_cast<std::size_t>(model.config.context_turns));
    std::vector<int> ids;
    for (std::size_t i = previous_turns.size() - n; i < previous_turns.size(); ++i)
        ids.insert(ids.end(), previous_turns[i].begin(), previous_turns[i].end());
    const auto cap = static_cast<std::size_t>(model.config.context_max_tokens);
    if (ids.size() > cap)
        ids.erase(ids.begin(), ids.end() - static_cast<std::ptrdiff_t>(cap));
    if (ids.empty())
        return zero;
    RecurrentState<T> s = m.context_lstm->zero_state();
    for (int id : ids)
        m.context_lstm->step(m.embedding.value.row(model.clamp_id(id)).transpose(), s);
    return {s, s};
}

template <typename T>
struct SequenceOutputs {
    std::vector<T> ib_probs;
    std::vector<Vec<T>> intent_dists;
};

// Whole-turn forward, computed as repeated stream_step.
template <typename T>
SequenceOutputs<T> sequence_forward(const Model<T>& model, std::span<const int> token_ids,
                                    std::optional<TaskStates<T>> initial = std::nullopt) {
    TaskStates<T> s = initial ? std::move(*initial) : zero_task_states(model);
    SequenceOutputs<T> out;
    for (int id : token_ids) {
        auto step = stream_step(model, id, s);
        out.ib_probs.push_back(step.ib_prob);
        out.intent_dists.push_back(std::move(step.intent_dist));
    }
    return out;
}

// Class distribution (C + 1 outputs) for a complete turn.
template <typename T>
Vec<T> offline_forward(const Model<T>& model, std::span<const int> token_ids) {
    if (token_ids.empty())
        throw DataError("offline_forward: empty turn");
    const auto& o = model.offline();
    std::vector<Vec<T>> xs;
    xs.reserve(token_ids.size());
    for (int id : token_ids)
        xs.push_back(o.embedding.value.row(model.clamp_id(id)).transpose());
    RecurrentState<T> f, b;
    lstm_sequence_forward(xs, o.fwd_lstm, std::nullopt, &f);
    std::reverse(xs.begin(), xs.end());
    lstm_sequence_forward(xs, o.bwd_lstm, std::nullopt, &b);
    Vec<T> feat(2 * model.config.hidden_dim);
    feat << f.back().h, b.back().h;
    return dense_forward(feat, o.head, Activation::softmax);
}

// ---------------------------------------------------------------------------
// Training batches

struct TrainExample {
    LabeledSequence seq;          // multitask variants: tags after lookahead
    std::vector<int> context_ids; // context variant: previous turns, capped
    int turn_label = kOutside;    // offline variant: class of the whole turn
};

namespace detail {

// Batch rows sorted by length (longest first, stable).
inline std::vector<std::size_t> sort_by_length(std::span<const std::size_t> lengths) {
    std::vector<std::size_t> order(lengths.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return lengths[a] > lengths[b]; });
    return order;
}

struct PackedIds {
    PackedLayout layout;
    std::vector<std::size_t> order;          // row r holds batch item order[r]
    std::vector<std::vector<int>> ids;       // ids[t][r]
};

// `reverse` reads each sequence back to front.
inline PackedIds pack_ids(const std::vector<const std::vector<int>*>& seqs, bool reverse = false) {
    std::vector<std::size_t> lengths;
    for (auto* s : seqs)
        lengths.push_back(s->size());
    PackedIds p;
    p.order = sort_by_length(lengths);
    std::vector<std::size_t> sorted;
    for (auto i : p.order)
        sorted.push_back(lengths[i]);
    p.layout = PackedLayout(sorted);
    p.ids.resize(p.layout.steps());
    for (std::size_t t = 0; t < p.layout.steps(); ++t) {
        const auto n = static_cast<std::size_t>(p.layout.active(t));
        p.ids[t].resize(n);
        for (std::size_t r = 0; r < n; ++r) {
            const auto& s = *seqs[p.order[r]];
            p.ids[t][r] = reverse ? s[s.size() - 1 - t] : s[t];
        }
    }
    return p;
}

template <typename T>
std::vector<Mat<T>> gather_embeddings(const Parameter<T>& emb, const PackedIds& p) {
    std::vector<Mat<T>> xs(p.ids.size());
    for (std::size_t t = 0; t < p.ids.size(); ++t) {
        xs[t].resize(static_cast<Eigen::Index>(p.ids[t].size()), emb.cols());
        for (std::size_t r = 0; r < p.ids[t].size(); ++r)
            xs[t].row(static_cast<Eigen::Index>(r)) = emb.value.row(p.ids[t][r]);
    }
    return xs;
}

template <typename T>
void scatter_embeddings(Parameter<T>& emb, const PackedIds& p, const std::vector<Mat<T>>& d_inputs) {
    for (std::size_t t = 0; t < p.ids.size(); ++t)
        for (std::size_t r = 0; r < p.ids[t].size(); ++r)
            emb.grad.row(p.ids[t][r]) += d_inputs[t].row(static_cast<Eigen::Index>(r));
}

// d/dz of softmax given d/dp: p * (g - <g, p>).
template <typename T>
Vec<T> softmax_backward(const Vec<T>& p, const Vec<T>& g) {
    return p.cwiseProduct((g.array() - g.dot(p)).matrix());
}

} // namespace detail

struct BatchOptions {
    bool train = false;    // dropout on
    bool with_grad = true; // accumulate parameter grads
};

// Mean over the batch of the variant's per-sequence objective:
//   IB variants: beta * focal(IB) + (1 - beta) * masked intent CE
//   intent_only: per-timestep intent CE (O included)
// Accumulates gradients into the model parameters when requested.
template <typename T, typename Rng>
T multitask_batch_loss(Model<T>& model, std::span<const TrainExample* const> batch, const BatchOptions& opt,
                       Rng& rng) {
    auto& net = model.multitask();
    const auto& cfg = model.config;
    const bool with_ib = model.variant != Variant::intent_only;
    const double rate = opt.train ? cfg.dropout : 0.0;
    Rng* drng = rate > 0.0 ? &rng : nullptr;
    const Eigen::Index B = static_cast<Eigen::Index>(batch.size());
    const int H = cfg.hidden_dim;
    const T inv_b = T(1) / static_cast<T>(B);
    const T beta = static_cast<T>(cfg.beta);
    const FocalConfig focal{cfg.focal_alpha, cfg.focal_gamma};

    std::vector<const std::vector<int>*> seqs;
    for (auto* ex : batch) {
        if (ex->seq.size() == 0)
            throw DataError("empty training sequence");
        seqs.push_back(&ex->seq.token_ids);
    }
    const auto packed = detail::pack_ids(seqs);
    const auto& layout = packed.layout;
    const auto xs = detail::gather_embeddings(net.embedding, packed);

    // Context encoder -> initial states (in main-batch row order).
    std::optional<detail::PackedIds> ctx_packed;
    LstmStackCache<T> ctx_cache;
    std::vector<BatchState<T>> init;
    std::vector<Eigen::Index> ctx_row_of; // main row -> context row
    const bool use_ctx = net.context_lstm.has_value() && cfg.context_turns > 0;
    if (use_ctx) {
        std::vector<const std::vector<int>*> cseqs;
        for (auto* ex : batch)
            cseqs.push_back(&ex->context_ids);
        ctx_packed = detail::pack_ids(cseqs);
        const auto cxs = detail::gather_embeddings(net.embedding, *ctx_packed);
        std::vector<BatchState<T>> ctx_final;
        stack_forward_batch(*net.context_lstm, ctx_packed->layout, cxs, nullptr, rate, drng, ctx_cache, &ctx_final);
        std::vector<Eigen::Index> item_to_ctx(batch.size());
        for (std::size_t r = 0; r < ctx_packed->order.size(); ++r)
            item_to_ctx[ctx_packed->order[r]] = static_cast<Eigen::Index>(r);
        ctx_row_of.resize(batch.size());
        for (std::size_t r = 0; r < packed.order.size(); ++r)
            ctx_row_of[r] = item_to_ctx[packed.order[r]];
        init.resize(ctx_final.size());
        for (std::size_t l = 0; l < ctx_final.size(); ++l) {
            init[l].h.resize(B, H);
            init[l].c.resize(B, H);
            for (Eigen::Index r = 0; r < B; ++r) {
                init[l].h.row(r) = ctx_final[l].h.row(ctx_row_of[r]);
                init[l].c.row(r) = ctx_final[l].c.row(ctx_row_of[r]);
            }
        }
    }
    const std::vector<BatchState<T>>* init_ptr = use_ctx ? &init : nullptr;

    const std::size_t steps = layout.steps();
    T total = 0;

    // IB path.
    LstmStackCache<T> ib_cache;
    std::vector<Mat<T>> ib_top, ib_mask, ib_prob;
    if (with_ib) {
        ib_top = stack_forward_batch(net.ib_lstm, layout, xs, init_ptr, rate, drng, ib_cache);
        ib_mask.resize(steps);
        ib_prob.resize(steps);
        for (std::size_t t = 0; t < steps; ++t) {
            if (drng) {
                ib_mask[t] = dropout_mask<T>(ib_top[t].rows(), ib_top[t].cols(), rate, *drng);
                ib_top[t] = ib_top[t].cwiseProduct(ib_mask[t]);
            }
            ib_prob[t] = sigmoid<T>(dense_forward_batch(net.ib_head, ib_top[t]));
        }
    }

    // Intent path.
    LstmStackCache<T> int_cache;
    std::vector<Mat<T>> int_top = stack_forward_batch(net.intent_lstm, layout, xs, init_ptr, rate, drng, int_cache);
    std::vector<Mat<T>> int_mask(steps), int_dist(steps);
    for (std::size_t t = 0; t < steps; ++t) {
        if (drng) {
            int_mask[t] = dropout_mask<T>(int_top[t].rows(), int_top[t].cols(), rate, *drng);
            int_top[t] = int_top[t].cwiseProduct(int_mask[t]);
        }
        int_dist[t] = softmax_rows(dense_forward_batch(net.intent_head, int_top[t]));
    }

    // Per-sequence losses and gradients w.r.t. head pre-activations.
    std::vector<Mat<T>> d_ib_logit(steps), d_int_logit(steps);
    for (std::size_t t = 0; t < steps; ++t) {
        const auto n = layout.active(t);
        if (with_ib)
            d_ib_logit[t] = Mat<T>::Zero(n, 1);
        d_int_logit[t] = Mat<T>::Zero(n, model.num_outputs());
    }
    for (Eigen::Index r = 0; r < B; ++r) {
        const auto& seq = batch[packed.order[static_cast<std::size_t>(r)]]->seq;
        const std::size_t len = seq.size();
        std::vector<Vec<T>> dists(len);
        for (std::size_t t = 0; t < len; ++t)
            dists[t] = int_dist[t].row(r).transpose();
        if (with_ib) {
            std::vector<T> probs(len);
            for (std::size_t t = 0; t < len; ++t)
                probs[t] = ib_prob[t](r, 0);
            const auto fl = focal_loss<T>(probs, seq.ib_tags, {}, focal);
            const auto il = masked_intent_loss<T>(dists, seq.intent_tags, seq.ib_tags);
            total += combined_loss<T>(fl.loss, il.loss, {cfg.beta});
            if (opt.with_grad) {
                for (std::size_t t = 0; t < len; ++t) {
                    const T p = probs[t];
                    d_ib_logit[t](r, 0) = inv_b * beta * fl.grad[t] * p * (T(1) - p);
                    if (seq.ib_tags[t])
                        d_int_logit[t].row(r) =
                            (inv_b * (T(1) - beta)) * detail::softmax_backward(dists[t], il.grad[t]).transpose();
                }
            }
        } else {
            const auto il = unmasked_intent_loss<T>(dists, seq.intent_tags);
            total += il.loss;
            if (opt.with_grad)
                for (std::size_t t = 0; t < len; ++t)
                    d_int_logit[t].row(r) = inv_b * detail::softmax_backward(dists[t], il.grad[t]).transpose();
        }
    }
    total *= inv_b;
    if (!std::isfinite(static_cast<double>(total)))
        throw NumericError("non-finite batch loss");
    if (!opt.with_grad)
        return total;

    // Heads and task stacks.
    std::vector<BatchState<T>> d_init_ib, d_init_int;
    std::vector<Mat<T>> d_x_ib;
    if (with_ib) {
        std::vector<Mat<T>> d_top(steps);
        for (std::size_t t = 0; t < steps; ++t) {
            d_top[t] = dense_backward_batch(net.ib_head, ib_top[t], d_ib_logit[t]);
            if (drng)
                d_top[t] = d_top[t].cwiseProduct(ib_mask[t]);
        }
        d_x_ib = stack_backward_batch(net.ib_lstm, layout, ib_cache, d_top, nullptr, use_ctx ? &d_init_ib : nullptr);
    }
    std::vector<Mat<T>> d_top(steps);
    for (std::size_t t = 0; t < steps; ++t) {
        d_top[t] = dense_backward_batch(net.intent_head, int_top[t], d_int_logit[t]);
        if (drng)
            d_top[t] = d_top[t].cwiseProduct(int_mask[t]);
    }
    auto d_x_int = stack_backward_batch(net.intent_lstm, layout, int_cache, d_top, nullptr,
                                        use_ctx ? &d_init_int : nullptr);
    if (with_ib)
        for (std::size_t t = 0; t < steps; ++t)
            d_x_int[t] += d_x_ib[t];
    detail::scatter_embeddings(net.embedding, packed, d_x_int);

    if (use_ctx) {
        const Eigen::Index Bc = ctx_packed->layout.batch();
        std::vector<BatchState<T>> d_final(d_init_int.size());
        for (std::size_t l = 0; l < d_init_int.size(); ++l) {
            d_final[l].h = Mat<T>::Zero(Bc, H);
            d_final[l].c = Mat<T>::Zero(Bc, H);
            for (Eigen::Index r = 0; r < B; ++r) {
                Mat<T> dh = d_init_int[l].h.row(r);
                Mat<T> dc = d_init_int[l].c.row(r);
                if (with_ib) {
                    dh += d_init_ib[l].h.row(r);
                    dc += d_init_ib[l].c.row(r);
                }
                d_final[l].h.row(ctx_row_of[r]) = dh;
                d_final[l].c.row(ctx_row_of[r]) = dc;
            }
        }
        const auto d_cx = stack_backward_batch(*net.context_lstm, ctx_packed->layout, ctx_cache, {}, &d_final);
        detail::scatter_embeddings(net.embedding, *ctx_packed, d_cx);
    }
    return total;
}

// Mean turn-level cross-entropy of the offline classifier (O = last output).
template <typename T, typename Rng>
T offline_batch_loss(Model<T>& model, std::span<const TrainExample* const> batch, const BatchOptions& opt, Rng& rng) {
    auto& net = model.offline();
    const auto& cfg = model.config;
    const double rate = opt.train ? cfg.dropout : 0.0;
    Rng* drng = rate > 0.0 ? &rng : nullptr;
    const Eigen::Index B = static_cast<Eigen::Index>(batch.size());
    const int H = cfg.hidden_dim;
    const T inv_b = T(1) / static_cast<T>(B);

    std::vector<const std::vector<int>*> seqs;
    for (auto* ex : batch) {
        if (ex->seq.size() == 0)
            throw DataError("empty training sequence");
        seqs.push_back(&ex->seq.token_ids);
    }
    const auto fwd = detail::pack_ids(seqs, false);
    const auto bwd = detail::pack_ids(seqs, true);
    const auto xf = detail::gather_embeddings(net.embedding, fwd);
    const auto xb = detail::gather_embeddings(net.embedding, bwd);
    LstmStackCache<T> cf, cb;
    std::vector<BatchState<T>> ff, fb;
    stack_forward_batch(net.fwd_lstm, fwd.layout, xf, nullptr, rate, drng, cf, &ff);
    stack_forward_batch(net.bwd_lstm, bwd.layout, xb, nullptr, rate, drng, cb, &fb);

    Mat<T> feat(B, 2 * H);
    feat.leftCols(H) = ff.back().h;
    feat.rightCols(H) = fb.back().h; // same row order: both packs sort identically
    Mat<T> mask;
    if (drng) {
        mask = dropout_mask<T>(B, 2 * H, rate, *drng);
        feat = feat.cwiseProduct(mask);
    }
    const Mat<T> dist = softmax_rows(dense_forward_batch(net.head, feat));
    T total = 0;
    Mat<T> d_logit = dist;
    for (Eigen::Index r = 0; r < B; ++r) {
        const int label = batch[fwd.order[static_cast<std::size_t>(r)]]->turn_label;
        const auto c = output_index(label, model.num_outputs());
        total -= std::log(std::max(dist(r, c), static_cast<T>(kProbClamp)));
        d_logit(r, c) -= T(1);
    }
    total *= inv_b;
    if (!std::isfinite(static_cast<double>(total)))
        throw NumericError("non-finite batch loss");
    if (!opt.with_grad)
        return total;
    d_logit *= inv_b;
    Mat<T> d_feat = dense_backward_batch(net.head, feat, d_logit);
    if (drng)
        d_feat = d_feat.cwiseProduct(mask);
    const int L = cfg.num_layers;
    std::vector<BatchState<T>> df(L), db(L);
    for (int l = 0; l < L; ++l) {
        df[l] = {Mat<T>::Zero(B, H), Mat<T>::Zero(B, H)};
        db[l] = {Mat<T>::Zero(B, H), Mat<T>::Zero(B, H)};
    }
    df.back().h = d_feat.leftCols(H);
    db.back().h = d_feat.rightCols(H);
    const auto dxf = stack_backward_batch(net.fwd_lstm, fwd.layout, cf, {}, &df);
    const auto dxb = stack_backward_batch(net.bwd_lstm, bwd.layout, cb, {}, &db);
    detail::scatter_embeddings(net.embedding, fwd, dxf);
    detail::scatter_embeddings(net.embedding, bwd, dxb);
    return total;
}

template <typename T, typename Rng>
T batch_loss(Model<T>& model, std::span<const TrainExample* const> batch, const BatchOptions& opt, Rng& rng) {
    if (batch.empty())
        throw DataError("empty batch");
    if (model.is_offline())
        return offline_batch_loss(model, batch, opt, rng);
    return multitask_batch_loss(model, batch, opt, rng);
}

// Training examples for a variant: every customer turn up to and including the
// annotated one (all of them when the transcript has no annotation). Turns
// before the intent carry all-O tags; later turns may restate the intent and
// are left out. Lookahead is applied with `rng`; offline examples carry the
// turn class or O.
template <typename Rng>
std::vector<TrainExample> build_examples(const std::vector<Transcript>& transcripts, const Vocabulary& vocab,
                                         const ModelConfig& cfg, Variant variant, Rng& rng) {
    std::vector<TrainExample> out;
    for (const auto& t : transcripts) {
        const std::size_t last = t.annotation ? t.annotation->turn_index : t.turns.size() - 1;
        for (std::size_t ti = 0; ti <= last && ti < t.turns.size(); ++ti) {
            if (t.turns[ti].speaker != Speaker::customer)
                continue;
            const bool intent_turn = t.annotation && t.annotation->turn_index == ti;
            TrainExample ex;
            ex.seq = label_sequence(t.turns[ti], intent_turn ? t.annotation : std::nullopt, vocab, {t.id, ti});
            if (intent_turn)
                ex.turn_label = t.annotation->class_id;
            if (variant != Variant::offline)
                ex.seq = apply_lookahead(std::move(ex.seq), cfg.lookahead_k, vocab, rng);
            if (cfg.context_turns > 0) {
                const std::size_t first = ti > static_cast<std::size_t>(cfg.context_turns)
                                              ? ti - static_cast<std::size_t>(cfg.context_turns)
                                              : 0;
                for (std::size_t p = first; p < ti; ++p) {
                    auto ids = encode_tokens(t.turns[p], vocab);
                    ex.context_ids.insert(ex.context_ids.end(), ids.begin(), ids.end());
                }
                const auto cap = static_cast<std::size_t>(cfg.context_max_tokens);
                if (ex.context_ids.size() > cap)
                    ex.context_ids.erase(ex.context_ids.begin(),
                                         ex.context_ids.end() - static_cast<std::ptrdiff_t>(cap));
            }
            out.push_back(std::move(ex));
        }
    }
    return out;
}

} // namespace sintent
