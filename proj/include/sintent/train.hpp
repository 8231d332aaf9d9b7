#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sintent/checkpoint.hpp"
#include "sintent/config.hpp"
#include "sintent/corpus.hpp"
#include "sintent/evaluate.hpp"
#include "sintent/model.hpp"
#include "sintent/objective.hpp"

namespace sintent {

struct TrainLogRow {
    int epoch = 0;
    std::string split;
    std::string metric;
    double value = 0.0;
};

inline void write_train_log(std::ostream& out, const std::vector<TrainLogRow>& rows) {
    out << "epoch,split,metric,value\n";
    for (const auto& r : rows)
        out << r.epoch << ',' << r.split << ',' << r.metric << ',' << detail::fmt_double(r.value) << '\n';
}

struct TrainOptions {
    std::uint64_t eval_seed = 3;
    std::function<void(const TrainLogRow&)> on_log; // progress callback, may be empty
};

template <typename T>
struct TrainResult {
    Model<T> model; // best-validation parameters
    std::vector<TrainLogRow> log;
    int best_epoch = 0;
    double best_metric = 0.0;
};

// Name of the model-selection metric per variant.
inline std::string selection_metric(Variant v) {
    switch (v) {
    case Variant::offline:
        return "turn_accuracy";
    case Variant::intent_only:
        return "intent_f1";
    default:
        return "intent_at_pb_f1";
    }
}

namespace detail {

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint32_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), stream};
    std::uint32_t w[2];
    seq.generate(w, w + 2);
    return (static_cast<std::uint64_t>(w[0]) << 32) | w[1];
}

template <typename T, typename Rng>
double mean_loss(Model<T>& model, const std::vector<TrainExample>& examples, Rng& rng) {
    if (examples.empty())
        return 0.0;
    const auto bs = static_cast<std::size_t>(model.config.batch_size);
    double total = 0.0;
    std::vector<const TrainExample*> batch;
    for (std::size_t i = 0; i < examples.size(); i += bs) {
        batch.clear();
        for (std::size_t j = i; j < std::min(i + bs, examples.size()); ++j)
            batch.push_back(&examples[j]);
        total += static_cast<double>(batch_loss(model, std::span<const TrainExample* const>(batch),
                                                {.train = false, .with_grad = false}, rng)) *
                 static_cast<double>(batch.size());
    }
    return total / static_cast<double>(examples.size());
}

template <typename T>
double turn_accuracy(const Model<T>& model, const std::vector<TrainExample>& examples) {
    if (examples.empty())
        return 0.0;
    std::size_t hit = 0;
    for (const auto& ex : examples) {
        const int c = static_cast<int>(argmax(offline_forward(model, ex.seq.token_ids)));
        hit += (c == model.outside_index() ? kOutside : c) == ex.turn_label;
    }
    return static_cast<double>(hit) / static_cast<double>(examples.size());
}

template <typename T>
double selection_value(const Model<T>& model, const std::vector<Transcript>& val,
                       const std::vector<TrainExample>& val_examples, std::uint64_t eval_seed) {
    if (model.is_offline())
        return turn_accuracy(model, val_examples);
    EvalOptions eo;
    eo.threshold = model.config.ib_threshold;
    const auto scored = score_sequences(model, val, eval_seed);
    if (model.variant == Variant::intent_only)
        return report_from_scores(scored, model.variant, model.num_classes(), eo).intent->f1;
    return intent_at_pb_from_scores(scored, model.num_classes(), eo).f1;
}

} // namespace detail

// Trains one variant. The vocabulary comes from the training split only. Each
// epoch shuffles the examples, takes Adam steps over mini-batches and scores
// the validation split; the best epoch (selection metric, then lower
// validation loss) is kept. Epoch 0 is the initialization.
template <typename T = float>
TrainResult<T> train(const std::vector<Transcript>& train_set, const std::vector<Transcript>& val_set,
                     const ClassList& classes, const ModelConfig& config, Variant variant,
                     const TrainOptions& opt = {}) {
    if (train_set.empty())
        throw DataError("training split is empty");
    TrainResult<T> res;
    res.model = make_model<T>(config, variant, build_vocabulary(train_set, config.min_count), classes);
    auto& model = res.model;
    const auto& cfg = model.config;

    std::mt19937_64 data_rng(detail::derive_seed(cfg.seed, 1));
    std::mt19937_64 shuffle_rng(detail::derive_seed(cfg.seed, 2));
    std::mt19937_64 dropout_rng(detail::derive_seed(cfg.seed, 3));
    std::mt19937_64 val_rng(opt.eval_seed);
    const auto train_ex = build_examples(train_set, model.vocab, cfg, variant, data_rng);
    const auto val_ex = build_examples(val_set, model.vocab, cfg, variant, val_rng);
    if (train_ex.empty())
        throw DataError("training split has no usable examples for variant " + std::string(variant_name(variant)));

    const std::string metric = selection_metric(variant);
    auto log = [&](int epoch, const char* split, const std::string& name, double v) {
        res.log.push_back({epoch, split, name, v});
        if (opt.on_log)
            opt.on_log(res.log.back());
    };

    auto params = model.trainable_params();
    Adam<T> adam(AdamConfig{.lr = cfg.lr});
    std::vector<Mat<T>> best;
    auto snapshot = [&] {
        best.clear();
        for (auto* p : model.params())
            best.push_back(p->value);
    };

    double best_metric = -std::numeric_limits<double>::infinity();
    double best_loss = std::numeric_limits<double>::infinity();
    snapshot(); // kept when epochs = 0

    std::vector<std::size_t> order(train_ex.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto bs = static_cast<std::size_t>(cfg.batch_size);
    std::vector<const TrainExample*> batch;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double sum = 0.0;
        std::size_t b = 0;
        for (std::size_t i = 0; i < order.size(); i += bs, ++b) {
            batch.clear();
            for (std::size_t j = i; j < std::min(i + bs, order.size()); ++j)
                batch.push_back(&train_ex[order[j]]);
            try {
                const T loss = batch_loss(model, std::span<const TrainExample* const>(batch),
                                          {.train = true, .with_grad = true}, dropout_rng);
                adam.step(params);
                sum += static_cast<double>(loss) * static_cast<double>(batch.size());
            } catch (const NumericError& e) {
                throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(b) + ": " + e.what());
            }
        }
        log(epoch, "train", "loss", sum / static_cast<double>(train_ex.size()));
        const double vl = detail::mean_loss(model, val_ex, dropout_rng);
        const double vm = detail::selection_value(model, val_set, val_ex, opt.eval_seed);
        log(epoch, "validation", "loss", vl);
        log(epoch, "validation", metric, vm);
        // Without a validation split the last epoch is kept.
        if (val_ex.empty() || vm > best_metric || (vm == best_metric && vl < best_loss)) {
            best_metric = vm;
            best_loss = vl;
            res.best_epoch = epoch;
            snapshot();
        }
    }
    auto all = model.params();
    for (std::size_t k = 0; k < all.size(); ++k) {
        all[k]->value = best[k];
        all[k]->zero_grad();
    }
    res.best_metric = cfg.epochs > 0 ? best_metric : 0.0;
    return res;
}

} // namespace sintent
