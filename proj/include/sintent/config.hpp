#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sintent/error.hpp"

namespace sintent {

enum class Variant { offline, multitask, multitask_lookahead, multitask_context, intent_only };

inline constexpr Variant kAllVariants[] = {Variant::offline, Variant::multitask, Variant::multitask_lookahead,
                                           Variant::multitask_context, Variant::intent_only};

inline std::string_view variant_name(Variant v) {
    switch (v) {
    case Variant::offline:
        return "offline";
    case Variant::multitask:
        return "multitask";
    case Variant::multitask_lookahead:
        return "multitask_lookahead";
    case Variant::multitask_context:
        return "multitask_context";
    case Variant::intent_only:
        return "intent_only";
    }
    return "?";
}

inline std::optional<Variant> parse_variant(std::string_view s) {
    for (auto v : kAllVariants)
        if (variant_name(v) == s)
            return v;
    return std::nullopt;
}

inline std::string variant_list() {
    std::string out;
    for (auto v : kAllVariants) {
        if (!out.empty())
            out += ", ";
        out += variant_name(v);
    }
    return out;
}

// True for the variants that train an IB head with the combined objective.
inline bool uses_ib_head(Variant v) {
    return v == Variant::multitask || v == Variant::multitask_lookahead || v == Variant::multitask_context;
}

inline bool is_streaming(Variant v) { return v != Variant::offline; }

struct ModelConfig {
    int vocab_size = 0; // filled from the vocabulary
    int embed_dim = 300;
    int hidden_dim = 128;
    int num_layers = 2;
    double dropout = 0.25;
    int num_classes = 16;
    double beta = 0.5;
    double focal_alpha = 1.0;
    double focal_gamma = 8.0;
    int lookahead_k = 0;
    int context_turns = 0;
    int context_max_tokens = 120;
    int epochs = 30;
    double lr = 0.001;
    int batch_size = 32;
    double ib_threshold = 0.5;
    int min_count = 2;
    double init_scale = 0.1;
    double forget_bias = 1.0;
    std::uint64_t seed = 1;

    bool operator==(const ModelConfig&) const = default;
};

inline void validate_config(const ModelConfig& c) {
    if (c.embed_dim <= 0 || c.hidden_dim <= 0 || c.num_layers <= 0 || c.num_classes <= 0)
        throw UsageError("model dimensions must be positive");
    if (c.dropout < 0.0 || c.dropout >= 1.0)
        throw UsageError("dropout must lie in [0, 1)");
    if (c.beta < 0.0 || c.beta > 1.0)
        throw UsageError("beta must lie in [0, 1]");
    if (c.focal_alpha <= 0.0 || c.focal_gamma < 0.0)
        throw UsageError("focal alpha must be positive and gamma non-negative");
    if (c.lookahead_k < 0 || c.lookahead_k > 3)
        throw UsageError("lookahead_k must be in {0, 1, 2, 3}");
    if (c.context_turns < 0 || c.context_max_tokens <= 0)
        throw UsageError("context_turns must be >= 0 and context_max_tokens > 0");
    if (c.epochs < 0 || c.batch_size <= 0 || c.lr <= 0.0)
        throw UsageError("epochs >= 0, batch_size > 0 and lr > 0 required");
    if (c.ib_threshold <= 0.0 || c.ib_threshold >= 1.0)
        throw UsageError("ib_threshold must lie in (0, 1)");
    if (c.min_count < 1)
        throw UsageError("min_count must be >= 1");
}

// The variant pins the knobs it is named after: lookahead defaults to 1 word,
// context to 3 turns; variants without a context encoder ignore context_turns.
inline ModelConfig effective_config(ModelConfig c, Variant v) {
    switch (v) {
    case Variant::offline:
        c.lookahead_k = 0;
        c.context_turns = 0;
        break;
    case Variant::multitask_lookahead:
        if (c.lookahead_k == 0)
            c.lookahead_k = 1;
        c.context_turns = 0;
        break;
    case Variant::multitask_context:
        if (c.context_turns == 0)
            c.context_turns = 3;
        break;
    case Variant::multitask:
    case Variant::intent_only:
        c.context_turns = 0;
        break;
    }
    return c;
}

} // namespace sintent
