#pragma once

#include <algorithm>
#include <optional>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include "sintent/error.hpp"
#include "sintent/tensor.hpp"

namespace sintent {

enum class Activation { none, sigmoid, softmax };
enum class DropoutMode { train, eval };

// ---------------------------------------------------------------------------
// Embedding

template <typename T>
Vec<T> embed_forward(int token_id, const Parameter<T>& embedding) {
    if (token_id < 0 || token_id >= embedding.rows())
        throw DataError("token id " + std::to_string(token_id) + " outside embedding of " +
                        std::to_string(embedding.rows()) + " rows");
    return embedding.value.row(token_id).transpose();
}

template <typename T>
void embed_backward(int token_id, const Vec<T>& upstream, Parameter<T>& embedding) {
    embedding.grad.row(token_id) += upstream.transpose();
}

// ---------------------------------------------------------------------------
// Dense

template <typename T>
struct Dense {
    Parameter<T> weight; // out x in
    Parameter<T> bias;   // out x 1

    Dense() = default;
    Dense(const std::string& prefix, int in, int out)
        : weight(prefix + ".weight", out, in), bias(prefix + ".bias", out, 1) {}

    int input_dim() const { return static_cast<int>(weight.cols()); }
    int output_dim() const { return static_cast<int>(weight.rows()); }

    template <typename Rng>
    void init(Rng& rng, double scale = 0.1) {
        init_uniform(weight, -scale, scale, rng);
        init_uniform(bias, -scale, scale, rng);
    }

    std::vector<Parameter<T>*> params() { return {&weight, &bias}; }
};

template <typename T>
Vec<T> apply_activation(const Vec<T>& z, Activation act) {
    switch (act) {
    case Activation::sigmoid:
        return sigmoid<T>(z);
    case Activation::softmax:
        return softmax<T>(z);
    case Activation::none:
        break;
    }
    return z;
}

template <typename T>
Vec<T> dense_forward(const Vec<T>& h, const Parameter<T>& w, const Parameter<T>& b, Activation act) {
    if (h.size() != w.cols() || b.rows() != w.rows())
        throw DataError("dense_forward: dimension mismatch");
    require_finite(h, "dense input");
    Vec<T> z = w.value * h + b.value.col(0);
    return apply_activation<T>(z, act);
}

template <typename T>
Vec<T> dense_forward(const Vec<T>& h, const Dense<T>& d, Activation act) {
    return dense_forward(h, d.weight, d.bias, act);
}

// Batched affine map; rows are examples.
template <typename T>
Mat<T> dense_forward_batch(const Dense<T>& d, const Mat<T>& x) {
    Mat<T> y = x * d.weight.value.transpose();
    y.rowwise() += d.bias.value.col(0).transpose();
    return y;
}

// Accumulates parameter gradients and returns d/dx.
template <typename T>
Mat<T> dense_backward_batch(Dense<T>& d, const Mat<T>& x, const Mat<T>& dy) {
    d.weight.grad.noalias() += dy.transpose() * x;
    d.bias.grad.col(0) += dy.colwise().sum().transpose();
    return dy * d.weight.value;
}

// ---------------------------------------------------------------------------
// Dropout (inverted)

template <typename T, typename Rng>
Mat<T> dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
    Mat<T> m(rows, cols);
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (Eigen::Index i = 0; i < m.size(); ++i)
        m.data()[i] = u(rng) < rate ? T(0) : keep_scale;
    return m;
}

template <typename T, typename Rng>
Vec<T> dropout(const Vec<T>& h, double rate, DropoutMode mode, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0)
        throw UsageError("dropout rate must lie in [0, 1)");
    if (mode == DropoutMode::eval || rate == 0.0)
        return h;
    Mat<T> m = dropout_mask<T>(h.size(), 1, rate, rng);
    return h.cwiseProduct(m.col(0));
}

// ---------------------------------------------------------------------------
// LSTM

template <typename T>
struct CellState {
    Vec<T> h;
    Vec<T> c;

    bool operator==(const CellState& o) const { return h == o.h && c == o.c; }
};

// Per-layer (h, c), bottom layer first.
template <typename T>
using RecurrentState = std::vector<CellState<T>>;

// Gate blocks are stacked [input; forget; cell; output].
template <typename T>
struct LstmLayer {
    Parameter<T> w_ih; // 4H x in
    Parameter<T> w_hh; // 4H x H
    Parameter<T> bias; // 4H x 1
    int input_dim = 0;
    int hidden_dim = 0;

    LstmLayer() = default;
    LstmLayer(const std::string& prefix, int in, int hidden)
        : w_ih(prefix + ".w_ih", 4 * hidden, in), w_hh(prefix + ".w_hh", 4 * hidden, hidden),
          bias(prefix + ".bias", 4 * hidden, 1), input_dim(in), hidden_dim(hidden) {}

    // Uniform weights, forget-gate bias set to `forget_bias`.
    template <typename Rng>
    void init(Rng& rng, double scale = 0.1, double forget_bias = 1.0) {
        init_uniform(w_ih, -scale, scale, rng);
        init_uniform(w_hh, -scale, scale, rng);
        init_uniform(bias, -scale, scale, rng);
        bias.value.block(hidden_dim, 0, hidden_dim, 1).setConstant(static_cast<T>(forget_bias));
    }

    std::vector<Parameter<T>*> params() { return {&w_ih, &w_hh, &bias}; }

    CellState<T> zero_state() const { return {Vec<T>::Zero(hidden_dim), Vec<T>::Zero(hidden_dim)}; }
};

namespace detail {

template <typename T>
CellState<T> lstm_cell(const LstmLayer<T>& layer, const Vec<T>& x, const CellState<T>& s) {
    const auto H = layer.hidden_dim;
    Vec<T> gates = layer.w_ih.value * x + layer.w_hh.value * s.h + layer.bias.value.col(0);
    Vec<T> i = sigmoid<T>(gates.segment(0, H));
    Vec<T> f = sigmoid<T>(gates.segment(H, H));
    Vec<T> g = gates.segment(2 * H, H).array().tanh().matrix();
    Vec<T> o = sigmoid<T>(gates.segment(3 * H, H));
    CellState<T> out;
    out.c = f.cwiseProduct(s.c) + i.cwiseProduct(g);
    out.h = o.cwiseProduct(out.c.array().tanh().matrix());
    return out;
}

} // namespace detail

// One LSTM cell update; returns the new state (its h is the cell output).
template <typename T>
CellState<T> lstm_step(const Vec<T>& x, const CellState<T>& state, const LstmLayer<T>& layer) {
    if (x.size() != layer.input_dim || state.h.size() != layer.hidden_dim || state.c.size() != layer.hidden_dim)
        throw DataError("lstm_step: dimension mismatch");
    require_finite(x, "lstm input");
    require_finite(state.h, "lstm hidden state");
    require_finite(state.c, "lstm cell state");
    return detail::lstm_cell(layer, x, state);
}

template <typename T>
struct LstmStack {
    std::vector<LstmLayer<T>> layers;

    LstmStack() = default;
    LstmStack(const std::string& prefix, int input_dim, int hidden_dim, int num_layers) {
        for (int l = 0; l < num_layers; ++l)
            layers.emplace_back(prefix + ".l" + std::to_string(l), l == 0 ? input_dim : hidden_dim, hidden_dim);
    }

    int input_dim() const { return layers.front().input_dim; }
    int hidden_dim() const { return layers.front().hidden_dim; }
    int num_layers() const { return static_cast<int>(layers.size()); }

    template <typename Rng>
    void init(Rng& rng, double scale = 0.1, double forget_bias = 1.0) {
        for (auto& l : layers)
            l.init(rng, scale, forget_bias);
    }

    std::vector<Parameter<T>*> params() {
        std::vector<Parameter<T>*> out;
        for (auto& l : layers)
            for (auto* p : l.params())
                out.push_back(p);
        return out;
    }

    RecurrentState<T> zero_state() const {
        RecurrentState<T> s;
        for (const auto& l : layers)
            s.push_back(l.zero_state());
        return s;
    }

    bool state_matches(const RecurrentState<T>& s) const {
        if (s.size() != layers.size())
            return false;
        for (std::size_t l = 0; l < layers.size(); ++l)
            if (s[l].h.size() != layers[l].hidden_dim || s[l].c.size() != layers[l].hidden_dim)
                return false;
        return true;
    }

    // Advances every layer one step (inference: no dropout) and returns the top output.
    Vec<T> step(const Vec<T>& x, RecurrentState<T>& state) const {
        const Vec<T>* in = &x;
        for (std::size_t l = 0; l < layers.size(); ++l) {
            state[l] = detail::lstm_cell(layers[l], *in, state[l]);
            in = &state[l].h;
        }
        return *in;
    }
};

// Top-layer outputs of a unidirectional pass. Implemented as repeated `step`, so
// a caller streaming the same inputs with carried state sees identical values.
template <typename T>
std::vector<Vec<T>> lstm_sequence_forward(const std::vector<Vec<T>>& inputs, const LstmStack<T>& stack,
                                          const std::optional<std::type_identity_t<RecurrentState<T>>>& initial = std::nullopt,
                                          std::type_identity_t<RecurrentState<T>>* final_state = nullptr) {
    RecurrentState<T> state = stack.zero_state();
    if (initial) {
        if (!stack.state_matches(*initial))
            throw DataError("lstm_sequence_forward: initial state has wrong dimensions");
        state = *initial;
    }
    std::vector<Vec<T>> out;
    out.reserve(inputs.size());
    for (const auto& x : inputs) {
        if (x.size() != stack.input_dim())
            throw DataError("lstm_sequence_forward: input dimension mismatch");
        require_finite(x, "lstm input");
        out.push_back(stack.step(x, state));
    }
    if (final_state)
        *final_state = std::move(state);
    return out;
}

// Per-step concatenation [forward; backward] of two independent stacks; the
// backward stack reads the sequence reversed.
template <typename T>
std::vector<Vec<T>> bilstm_sequence_forward(const std::vector<Vec<T>>& inputs, const LstmStack<T>& fwd,
                                            const LstmStack<T>& bwd) {
    const auto f = lstm_sequence_forward(inputs, fwd);
    std::vector<Vec<T>> reversed(inputs.rbegin(), inputs.rend());
    const auto b = lstm_sequence_forward(reversed, bwd);
    const std::size_t n = inputs.size();
    std::vector<Vec<T>> out(n);
    for (std::size_t t = 0; t < n; ++t) {
        out[t].resize(f[t].size() + b[n - 1 - t].size());
        out[t] << f[t], b[n - 1 - t];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Packed batches for training

// Sequences sorted by length, longest first. At step t only the first
// active(t) rows are running, so every per-step matrix is a prefix of the batch.
struct PackedLayout {
    std::vector<std::size_t> lengths;
    std::vector<Eigen::Index> active_rows;

    PackedLayout() = default;
    explicit PackedLayout(std::vector<std::size_t> sorted_lengths) : lengths(std::move(sorted_lengths)) {
        if (!std::is_sorted(lengths.rbegin(), lengths.rend()))
            throw DataError("PackedLayout: lengths must be non-increasing");
        const std::size_t steps = lengths.empty() ? 0 : lengths.front();
        active_rows.resize(steps);
        for (std::size_t t = 0; t < steps; ++t)
            active_rows[t] = static_cast<Eigen::Index>(
                std::count_if(lengths.begin(), lengths.end(), [t](std::size_t len) { return len > t; }));
    }

    Eigen::Index batch() const { return static_cast<Eigen::Index>(lengths.size()); }
    std::size_t steps() const { return active_rows.size(); }
    Eigen::Index active(std::size_t t) const { return active_rows[t]; }
};

// (h, c) for a whole batch, one row per sequence.
template <typename T>
struct BatchState {
    Mat<T> h;
    Mat<T> c;
};

template <typename T>
struct LstmStepCache {
    Mat<T> x, h_prev, c_prev, i, f, g, o, c, tc;
};

template <typename T>
struct LstmLayerCache {
    std::vector<LstmStepCache<T>> steps;
    std::vector<Mat<T>> input_mask; // dropout on this layer's input; empty when unused
};

template <typename T>
struct LstmStackCache {
    std::vector<LstmLayerCache<T>> layers;
};

// Training forward over a packed batch. Dropout (rate > 0, rng given) is applied
// between stacked layers with a fresh mask per timestep. `final_state`, when
// given, receives each layer's state after the last step of every sequence.
template <typename T, typename Rng>
std::vector<Mat<T>> stack_forward_batch(const LstmStack<T>& stack, const PackedLayout& layout,
                                        const std::vector<Mat<T>>& inputs,
                                        const std::type_identity_t<std::vector<BatchState<T>>>* initial,
                                        double dropout_rate, Rng* rng, LstmStackCache<T>& cache,
                                        std::type_identity_t<std::vector<BatchState<T>>>* final_state = nullptr) {
    const Eigen::Index B = layout.batch();
    const std::size_t steps = layout.steps();
    cache.layers.assign(stack.layers.size(), {});
    if (final_state)
        final_state->assign(stack.layers.size(), {});
    std::vector<Mat<T>> below;
    for (std::size_t l = 0; l < stack.layers.size(); ++l) {
        const auto& layer = stack.layers[l];
        const Eigen::Index Hd = layer.hidden_dim;
        auto& lc = cache.layers[l];
        lc.steps.resize(steps);
        const bool masked = l > 0 && dropout_rate > 0.0 && rng != nullptr;
        if (masked)
            lc.input_mask.resize(steps);

        Mat<T> H = initial ? (*initial)[l].h : Mat<T>::Zero(B, Hd);
        Mat<T> C = initial ? (*initial)[l].c : Mat<T>::Zero(B, Hd);
        const Mat<T> w_ih_t = layer.w_ih.value.transpose();
        const Mat<T> w_hh_t = layer.w_hh.value.transpose();
        const auto bias_row = layer.bias.value.col(0).transpose();
        std::vector<Mat<T>> outs(steps);
        for (std::size_t t = 0; t < steps; ++t) {
            const Eigen::Index n = layout.active(t);
            auto& sc = lc.steps[t];
            if (l == 0) {
                sc.x = inputs[t];
            } else if (masked) {
                lc.input_mask[t] = dropout_mask<T>(n, below[t].cols(), dropout_rate, *rng);
                sc.x = below[t].cwiseProduct(lc.input_mask[t]);
            } else {
                sc.x = below[t];
            }
            sc.h_prev = H.topRows(n);
            sc.c_prev = C.topRows(n);
            Mat<T> gates = sc.x * w_ih_t;
            gates.noalias() += sc.h_prev * w_hh_t;
            gates.rowwise() += bias_row;
            sc.i = sigmoid<T>(gates.middleCols(0, Hd));
            sc.f = sigmoid<T>(gates.middleCols(Hd, Hd));
            sc.g = gates.middleCols(2 * Hd, Hd).array().tanh().matrix();
            sc.o = sigmoid<T>(gates.middleCols(3 * Hd, Hd));
            sc.c = sc.f.cwiseProduct(sc.c_prev) + sc.i.cwiseProduct(sc.g);
            sc.tc = sc.c.array().tanh().matrix();
            outs[t] = sc.o.cwiseProduct(sc.tc);
            H.topRows(n) = outs[t];
            C.topRows(n) = sc.c;
        }
        if (final_state)
            (*final_state)[l] = {std::move(H), std::move(C)};
        below = std::move(outs);
    }
    return below;
}

// Backpropagation through time for `stack_forward_batch`. `d_top` holds the
// gradient w.r.t. each step's top output (empty = zero); `d_final` the gradient
// w.r.t. the final states. Accumulates parameter grads, writes the gradient
// w.r.t. the initial states into `d_initial` and returns d/d(inputs).
template <typename T>
std::vector<Mat<T>> stack_backward_batch(LstmStack<T>& stack, const PackedLayout& layout,
                                         const LstmStackCache<T>& cache, const std::vector<Mat<T>>& d_top,
                                         const std::type_identity_t<std::vector<BatchState<T>>>* d_final = nullptr,
                                         std::type_identity_t<std::vector<BatchState<T>>>* d_initial = nullptr) {
    const Eigen::Index B = layout.batch();
    const std::size_t steps = layout.steps();
    if (d_initial)
        d_initial->assign(stack.layers.size(), {});
    std::vector<Mat<T>> d_out = d_top;
    for (std::size_t li = stack.layers.size(); li-- > 0;) {
        auto& layer = stack.layers[li];
        const auto& lc = cache.layers[li];
        const Eigen::Index Hd = layer.hidden_dim;
        Mat<T> dH = d_final ? (*d_final)[li].h : Mat<T>::Zero(B, Hd);
        Mat<T> dC = d_final ? (*d_final)[li].c : Mat<T>::Zero(B, Hd);
        std::vector<Mat<T>> d_x(steps);
        Mat<T> dG;
        for (std::size_t t = steps; t-- > 0;) {
            const Eigen::Index n = layout.active(t);
            const auto& sc = lc.steps[t];
            Mat<T> dh = dH.topRows(n);
            if (!d_out.empty() && d_out[t].size() > 0)
                dh += d_out[t];
            Mat<T> dc = dC.topRows(n);
            dc.array() += dh.array() * sc.o.array() * (T(1) - sc.tc.array().square());
            dG.resize(n, 4 * Hd);
            dG.middleCols(0, Hd) = (dc.array() * sc.g.array() * sc.i.array() * (T(1) - sc.i.array())).matrix();
            dG.middleCols(Hd, Hd) =
                (dc.array() * sc.c_prev.array() * sc.f.array() * (T(1) - sc.f.array())).matrix();
            dG.middleCols(2 * Hd, Hd) = (dc.array() * sc.i.array() * (T(1) - sc.g.array().square())).matrix();
            dG.middleCols(3 * Hd, Hd) =
                (dh.array() * sc.tc.array() * sc.o.array() * (T(1) - sc.o.array())).matrix();
            layer.w_ih.grad.noalias() += dG.transpose() * sc.x;
            layer.w_hh.grad.noalias() += dG.transpose() * sc.h_prev;
            layer.bias.grad.col(0) += dG.colwise().sum().transpose();
            d_x[t] = dG * layer.w_ih.value;
            dH.topRows(n) = dG * layer.w_hh.value;
            dC.topRows(n) = dc.cwiseProduct(sc.f);
        }
        if (d_initial)
            (*d_initial)[li] = {std::move(dH), std::move(dC)};
        if (li > 0 && !lc.input_mask.empty())
            for (std::size_t t = 0; t < steps; ++t)
                d_x[t] = d_x[t].cwiseProduct(lc.input_mask[t]);
        d_out = std::move(d_x);
    }
    return d_out;
}

} // namespace sintent
