#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "sintent/corpus.hpp"
#include "sintent/error.hpp"
#include "sintent/tensor.hpp"

namespace sintent {

struct FocalConfig {
    double alpha = 1.0;
    double gamma = 8.0;
};

struct MultiTaskWeights {
    double beta = 0.5;
};

template <typename T>
struct LossAndGrad {
    T loss = 0;
    std::vector<T> grad; // d loss / d input, one entry per timestep
};

template <typename T>
struct DistLossAndGrad {
    T loss = 0;
    std::vector<Vec<T>> grad; // d loss / d dist, one vector per timestep
};

inline constexpr double kProbClamp = 1e-7;

// Binary focal loss averaged over the valid timesteps:
//   L = -(alpha/T) sum_t [ y (1-p)^g log p + (1-y) p^g log(1-p) ]
// Probabilities are clamped to [1e-7, 1-1e-7]; the gradient is taken at the
// clamped value. `mask` may be empty (all valid).
template <typename T>
LossAndGrad<T> focal_loss(std::span<const T> probs, std::span<const std::uint8_t> labels,
                          std::span<const std::uint8_t> mask, const FocalConfig& cfg) {
    if (labels.size() != probs.size() || (!mask.empty() && mask.size() != probs.size()))
        throw DataError("focal_loss: length mismatch");
    std::size_t valid = 0;
    for (std::size_t t = 0; t < probs.size(); ++t)
        valid += mask.empty() || mask[t];
    if (valid == 0)
        throw DataError("focal_loss: no valid timesteps");

    const T a = static_cast<T>(cfg.alpha / static_cast<double>(valid));
    const T gamma = static_cast<T>(cfg.gamma);
    LossAndGrad<T> out;
    out.grad.assign(probs.size(), T(0));
    for (std::size_t t = 0; t < probs.size(); ++t) {
        if (!mask.empty() && !mask[t])
            continue;
        const T p = std::clamp(probs[t], static_cast<T>(kProbClamp), static_cast<T>(1.0 - kProbClamp));
        if (labels[t]) {
            const T q = T(1) - p;
            const T w = std::pow(q, gamma);
            out.loss -= a * w * std::log(p);
            // d/dp [ (1-p)^g log p ] = -g (1-p)^(g-1) log p + (1-p)^g / p
            const T dw = gamma == T(0) ? T(0) : -gamma * std::pow(q, gamma - T(1)) * std::log(p);
            out.grad[t] = -a * (dw + w / p);
        } else {
            const T w = std::pow(p, gamma);
            const T q = T(1) - p;
            out.loss -= a * w * std::log(q);
            // d/dp [ p^g log(1-p) ] = g p^(g-1) log(1-p) - p^g / (1-p)
            const T dw = gamma == T(0) ? T(0) : gamma * std::pow(p, gamma - T(1)) * std::log(q);
            out.grad[t] = -a * (dw - w / q);
        }
    }
    return out;
}

// Position of a tag in a (C+1)-way distribution: classes first, O last.
inline Eigen::Index output_index(int tag, Eigen::Index num_outputs) {
    return tag == kOutside ? num_outputs - 1 : static_cast<Eigen::Index>(tag);
}

// Cross-entropy summed over the timesteps where `ib_mask` is set. Every such
// timestep must carry a class tag.
template <typename T>
DistLossAndGrad<T> masked_intent_loss(const std::vector<Vec<T>>& dists, std::span<const int> intent_tags,
                                      std::span<const std::uint8_t> ib_mask) {
    if (intent_tags.size() != dists.size() || ib_mask.size() != dists.size())
        throw DataError("masked_intent_loss: length mismatch");
    DistLossAndGrad<T> out;
    out.grad.reserve(dists.size());
    for (std::size_t t = 0; t < dists.size(); ++t) {
        out.grad.push_back(Vec<T>::Zero(dists[t].size()));
        if (!ib_mask[t])
            continue;
        if (intent_tags[t] == kOutside)
            throw DataError("masked_intent_loss: boundary at timestep " + std::to_string(t) +
                            " has no intent class");
        const auto c = output_index(intent_tags[t], dists[t].size());
        const T p = std::max(dists[t](c), static_cast<T>(kProbClamp));
        out.loss -= std::log(p);
        out.grad[t](c) = -T(1) / p;
    }
    return out;
}

// Per-timestep cross-entropy with O as a target, averaged over timesteps.
template <typename T>
DistLossAndGrad<T> unmasked_intent_loss(const std::vector<Vec<T>>& dists, std::span<const int> intent_tags) {
    if (intent_tags.size() != dists.size())
        throw DataError("unmasked_intent_loss: length mismatch");
    if (dists.empty())
        throw DataError("unmasked_intent_loss: empty sequence");
    const T inv = T(1) / static_cast<T>(dists.size());
    DistLossAndGrad<T> out;
    out.grad.reserve(dists.size());
    for (std::size_t t = 0; t < dists.size(); ++t) {
        out.grad.push_back(Vec<T>::Zero(dists[t].size()));
        const auto c = output_index(intent_tags[t], dists[t].size());
        const T p = std::max(dists[t](c), static_cast<T>(kProbClamp));
        out.loss -= inv * std::log(p);
        out.grad[t](c) = -inv / p;
    }
    return out;
}

template <typename T>
T combined_loss(T l_ib, T l_int, const MultiTaskWeights& w) {
    if (!std::isfinite(static_cast<double>(l_ib)) || !std::isfinite(static_cast<double>(l_int)))
        throw NumericError("combined_loss: non-finite task loss");
    const T beta = static_cast<T>(w.beta);
    return beta * l_ib + (T(1) - beta) * l_int;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename T>
class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    const AdamConfig& config() const { return cfg_; }
    long step_count() const { return t_; }

    // Bias-corrected update of every parameter, then grads are zeroed. The
    // parameter list must be passed in the same order on every call.
    void step(const std::vector<Parameter<T>*>& params) {
        for (auto* p : params)
            if (!p->grad.allFinite())
                throw NumericError("adam: non-finite gradient in parameter '" + p->name + "'");
        if (moments_.empty()) {
            for (auto* p : params)
                moments_.push_back({Mat<T>::Zero(p->rows(), p->cols()), Mat<T>::Zero(p->rows(), p->cols())});
        } else if (moments_.size() != params.size()) {
            throw UsageError("adam: parameter list changed between steps");
        }
        ++t_;
        const T b1 = static_cast<T>(cfg_.beta1);
        const T b2 = static_cast<T>(cfg_.beta2);
        const T corr1 = static_cast<T>(1.0 - std::pow(cfg_.beta1, static_cast<double>(t_)));
        const T corr2 = static_cast<T>(1.0 - std::pow(cfg_.beta2, static_cast<double>(t_)));
        const T lr = static_cast<T>(cfg_.lr);
        const T eps = static_cast<T>(cfg_.eps);
        for (std::size_t k = 0; k < params.size(); ++k) {
            auto& p = *params[k];
            auto& [m, v] = moments_[k];
            m = b1 * m + (T(1) - b1) * p.grad;
            v = b2 * v + (T(1) - b2) * p.grad.cwiseProduct(p.grad);
            p.value.array() -= lr * (m.array() / corr1) / ((v.array() / corr2).sqrt() + eps);
            p.zero_grad();
        }
    }

private:
    struct Moments {
        Mat<T> m;
        Mat<T> v;
    };
    AdamConfig cfg_;
    long t_ = 0;
    std::vector<Moments> moments_;
};

} // namespace sintent
