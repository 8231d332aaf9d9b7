#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sintent/config.hpp"
#include "sintent/corpus.hpp"
#include "sintent/gradcheck.hpp"
#include "sintent/model.hpp"

namespace sintent {

struct TinyModelSpec {
    int vocab = 20; // including PAD and UNK
    int embed_dim = 4;
    int hidden_dim = 5;
    int num_layers = 2;
    int num_classes = 3;
    int max_length = 6;
    int batch = 3;
    double epsilon = 1e-5;
    std::uint64_t seed = 11;
};

inline Vocabulary tiny_vocabulary(int size) {
    std::vector<std::string> words;
    for (int i = Vocabulary::num_special; i < size; ++i)
        words.push_back("w" + std::to_string(i));
    return Vocabulary::from_words(words);
}

inline ClassList tiny_classes(int n) {
    std::vector<std::string> names;
    for (int i = 0; i < n; ++i)
        names.push_back("c" + std::to_string(i));
    return ClassList(names);
}

// Random labelled batch for a tiny model: lengths 1..max_length, one boundary
// per sequence (the turn class for offline), context ids when the config has a context encoder.
template <typename Rng>
std::vector<TrainExample> random_examples(const TinyModelSpec& s, const ModelConfig& cfg, Rng& rng) {
    std::uniform_int_distribution<int> len(1, s.max_length), tok(Vocabulary::num_special, s.vocab - 1),
        cls(0, s.num_classes - 1);
    std::vector<TrainExample> out;
    for (int b = 0; b < s.batch; ++b) {
        TrainExample ex;
        const int n = len(rng);
        const int boundary = std::uniform_int_distribution<int>(0, n - 1)(rng);
        const int c = cls(rng);
        for (int t = 0; t < n; ++t) {
            ex.seq.token_ids.push_back(tok(rng));
            ex.seq.ib_tags.push_back(t == boundary ? 1 : 0);
            ex.seq.intent_tags.push_back(t == boundary ? c : kOutside);
        }
        ex.turn_label = b % 2 == 0 ? c : kOutside;
        if (cfg.context_turns > 0) {
            const int m = len(rng);
            for (int t = 0; t < m; ++t)
                ex.context_ids.push_back(tok(rng));
        }
        out.push_back(std::move(ex));
    }
    return out;
}

// Builds a tiny double-precision model, draws one batch and compares the
// analytic gradient of the variant's training loss with central differences.
// Dropout is off so the loss is deterministic. `fault_inject` scales one
// analytic gradient tensor by 1.5 to show the checker notices.
inline GradCheckResult check_model_gradients(const TinyModelSpec& s, Variant variant = Variant::multitask,
                                             bool fault_inject = false) {
    ModelConfig cfg;
    cfg.embed_dim = s.embed_dim;
    cfg.hidden_dim = s.hidden_dim;
    cfg.num_layers = s.num_layers;
    cfg.dropout = 0.0;
    cfg.seed = s.seed;
    cfg.init_scale = 0.5; // larger weights exercise the nonlinearities
    cfg.context_max_tokens = 120;
    auto model = make_model<double>(cfg, variant, tiny_vocabulary(s.vocab), tiny_classes(s.num_classes));
    std::mt19937_64 rng(s.seed + 1);
    const auto examples = random_examples(s, model.config, rng);
    std::vector<const TrainExample*> batch;
    for (const auto& ex : examples)
        batch.push_back(&ex);
    auto params = model.trainable_params();
    auto loss = [&](bool with_grad) {
        if (with_grad)
            for (auto* p : params)
                p->zero_grad();
        const double l = batch_loss(model, std::span<const TrainExample* const>(batch),
                                    {.train = false, .with_grad = with_grad}, rng);
        if (with_grad && fault_inject)
            params.back()->grad *= 1.5;
        return l;
    };
    return grad_check(loss, params, s.epsilon);
}

} // namespace sintent
