#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "sintent/checkpoint.hpp"
#include "sintent/diagnostics.hpp"
#include "sintent/model.hpp"
#include "sintent/syngen.hpp"
#include "sintent/train.hpp"

using namespace sintent;

namespace {

ModelConfig small_config() {
    ModelConfig c;
    c.embed_dim = 6;
    c.hidden_dim = 7;
    c.num_layers = 2;
    c.dropout = 0.0;
    c.seed = 17;
    c.init_scale = 0.3;
    return c;
}

template <typename T = float>
Model<T> small_model(Variant v, ModelConfig c = small_config()) {
    return make_model<T>(c, v, tiny_vocabulary(15), tiny_classes(4));
}

std::vector<int> random_ids(std::size_t n, std::mt19937_64& rng) {
    std::vector<int> ids(n);
    for (auto& id : ids)
        id = Vocabulary::num_special + static_cast<int>(rng() % 13);
    return ids;
}

template <typename T>
void zero_all(Model<T>& m) {
    for (auto* p : m.params())
        p->value.setZero();
}

std::vector<const TrainExample*> pointers(const std::vector<TrainExample>& xs) {
    std::vector<const TrainExample*> out;
    for (const auto& x : xs)
        out.push_back(&x);
    return out;
}

} // namespace

// --- construction -------------------------------------------------------------

TEST(MakeModel, ZeroWeightsGiveHalfAndUniform) {
    auto m = small_model<double>(Variant::multitask);
    zero_all(m);
    auto s = zero_task_states(m);
    const auto out = stream_step(m, 5, s);
    EXPECT_EQ(out.ib_prob, 0.5);
    ASSERT_EQ(out.intent_dist.size(), 5);
    for (int i = 0; i < 5; ++i)
        EXPECT_DOUBLE_EQ(out.intent_dist(i), 0.2);

    auto o = small_model<double>(Variant::offline);
    zero_all(o);
    const auto d = offline_forward(o, std::vector<int>{3, 4, 5});
    for (int i = 0; i < 5; ++i)
        EXPECT_DOUBLE_EQ(d(i), 0.2);
    EXPECT_EQ(argmax(d), 0);
}

TEST(MakeModel, SharedEmbeddingStorage) {
    auto m = small_model(Variant::multitask);
    EXPECT_EQ(&m.multitask().ib_embedding(), &m.multitask().intent_embedding());
    EXPECT_EQ(m.multitask().embedding.rows(), 15);
    EXPECT_EQ(m.num_outputs(), 5);
    EXPECT_EQ(m.outside_index(), 4);
}

TEST(MakeModel, SameSeedSameParameters) {
    auto a = small_model(Variant::multitask_context);
    auto b = small_model(Variant::multitask_context);
    auto pa = a.params(), pb = b.params();
    ASSERT_EQ(pa.size(), pb.size());
    for (std::size_t k = 0; k < pa.size(); ++k)
        EXPECT_EQ(pa[k]->value, pb[k]->value) << pa[k]->name;
    EXPECT_TRUE(a.multitask().context_lstm.has_value());
    EXPECT_FALSE(small_model(Variant::multitask).multitask().context_lstm.has_value());
}

TEST(MakeModel, VariantPinsItsKnobs) {
    EXPECT_EQ(small_model(Variant::multitask_lookahead).config.lookahead_k, 1);
    EXPECT_EQ(small_model(Variant::multitask_context).config.context_turns, 3);
    auto c = small_config();
    c.context_turns = 2;
    EXPECT_EQ(small_model(Variant::multitask, c).config.context_turns, 0);
    c.lookahead_k = 4;
    EXPECT_THROW(small_model(Variant::multitask_lookahead, c), UsageError);
}

// --- forward paths ----------------------------------------------------------------

TEST(StreamStep, MatchesSequenceForwardBitwise) {
    auto m = small_model(Variant::multitask);
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        const auto ids = random_ids(1 + rng() % 15, rng);
        const auto full = sequence_forward(m, ids);
        auto s = zero_task_states(m);
        for (std::size_t t = 0; t < ids.size(); ++t) {
            const auto out = stream_step(m, ids[t], s);
            EXPECT_EQ(out.ib_prob, full.ib_probs[t]);
            EXPECT_EQ(out.intent_dist, full.intent_dists[t]);
        }
    }
}

TEST(StreamStep, InterleavedSessionsDoNotInteract) {
    auto m = small_model(Variant::multitask);
    std::mt19937_64 rng(2);
    const auto a = random_ids(9, rng), b = random_ids(9, rng);
    const auto fa = sequence_forward(m, a), fb = sequence_forward(m, b);
    auto sa = zero_task_states(m), sb = zero_task_states(m);
    for (std::size_t t = 0; t < 9; ++t) {
        EXPECT_EQ(stream_step(m, a[t], sa).ib_prob, fa.ib_probs[t]);
        EXPECT_EQ(stream_step(m, b[t], sb).ib_prob, fb.ib_probs[t]);
    }
}

TEST(StreamStep, OutOfVocabularyIdReadsUnk) {
    auto m = small_model(Variant::multitask);
    auto s1 = zero_task_states(m), s2 = zero_task_states(m);
    EXPECT_EQ(stream_step(m, 999, s1).ib_prob, stream_step(m, Vocabulary::unk_id, s2).ib_prob);
}

TEST(SequenceForward, AgreesWithBatchedTrainingLoss) {
    // Recompute the training objective from the streaming outputs.
    auto m = small_model<double>(Variant::multitask);
    TinyModelSpec spec;
    spec.vocab = 15;
    spec.num_classes = 4;
    spec.batch = 5;
    spec.max_length = 9;
    std::mt19937_64 rng(3);
    const auto xs = random_examples(spec, m.config, rng);
    const auto ptrs = pointers(xs);
    const double batched = batch_loss(m, std::span<const TrainExample* const>(ptrs), {.train = false, .with_grad = false}, rng);
    double ref = 0.0;
    for (const auto& ex : xs) {
        const auto out = sequence_forward(m, ex.seq.token_ids);
        const double l_ib =
            focal_loss<double>(out.ib_probs, ex.seq.ib_tags, {}, {m.config.focal_alpha, m.config.focal_gamma}).loss;
        const double l_int = masked_intent_loss<double>(out.intent_dists, ex.seq.intent_tags, ex.seq.ib_tags).loss;
        ref += combined_loss(l_ib, l_int, {m.config.beta});
    }
    ref /= static_cast<double>(xs.size());
    EXPECT_NEAR(batched, ref, 1e-12);
}

TEST(SequenceForward, IntentOnlyLossIsPerTimestepCrossEntropy) {
    auto m = small_model<double>(Variant::intent_only);
    TinyModelSpec spec;
    spec.vocab = 15;
    spec.num_classes = 4;
    spec.batch = 4;
    std::mt19937_64 rng(4);
    const auto xs = random_examples(spec, m.config, rng);
    const auto ptrs = pointers(xs);
    const double batched = batch_loss(m, std::span<const TrainExample* const>(ptrs), {.train = false, .with_grad = false}, rng);
    double ref = 0.0;
    for (const auto& ex : xs)
        ref += unmasked_intent_loss<double>(sequence_forward(m, ex.seq.token_ids).intent_dists, ex.seq.intent_tags).loss;
    EXPECT_NEAR(batched, ref / static_cast<double>(xs.size()), 1e-12);
}

TEST(OfflineForward, IsASimplexPointAndRejectsEmptyTurns) {
    auto m = small_model(Variant::offline);
    const auto d = offline_forward(m, std::vector<int>{2, 3, 4, 5});
    EXPECT_EQ(d.size(), 5);
    EXPECT_NEAR(d.sum(), 1.0f, 1e-6f);
    EXPECT_THROW(offline_forward(m, std::vector<int>{}), DataError);
}

// --- context -----------------------------------------------------------------------

TEST(EncodeContext, EmptyHistoryIsZeroState) {
    auto m = small_model(Variant::multitask_context);
    EXPECT_EQ(encode_context(m, {}), zero_task_states(m));
}

TEST(EncodeContext, ZeroWeightsGiveZeroState) {
    auto m = small_model<double>(Variant::multitask_context);
    for (auto* p : m.multitask().context_lstm->params())
        p->value.setZero();
    EXPECT_EQ(encode_context(m, {{2, 3}, {4}}), zero_task_states(m));
}

TEST(EncodeContext, DeterministicAndUsesOnlyTheLastTurns) {
    auto m = small_model(Variant::multitask_context);
    const std::vector<std::vector<int>> hist{{9, 9, 9}, {2, 3}, {4}, {5, 6}, {7}};
    const auto a = encode_context(m, hist);
    EXPECT_EQ(a, encode_context(m, hist));
    EXPECT_EQ(a, encode_context(m, {{4}, {5, 6}, {7}})); // n = 3
    EXPECT_NE(a, zero_task_states(m));
    EXPECT_EQ(a.ib, a.intent);
}

TEST(EncodeContext, TokenCapKeepsTheMostRecentTokens) {
    auto c = small_config();
    c.context_max_tokens = 3;
    auto m = small_model(Variant::multitask_context, c);
    EXPECT_EQ(encode_context(m, {{2, 3}, {4}, {5, 6}}), encode_context(m, {{4, 5, 6}}));
}

// --- checkpoints -------------------------------------------------------------------

TEST(Checkpoint, RoundTripIsByteAndOutputIdentical) {
    std::mt19937_64 rng(5);
    for (Variant v : kAllVariants) {
        auto m = small_model(v);
        const auto bytes = checkpoint_bytes(m);
        auto back = model_from_checkpoint_bytes<float>(bytes);
        EXPECT_EQ(checkpoint_bytes(back), bytes) << variant_name(v);
        EXPECT_EQ(back.variant, v);
        EXPECT_EQ(back.config, m.config);
        EXPECT_EQ(back.vocab, m.vocab);
        EXPECT_EQ(back.classes, m.classes);
        const auto ids = random_ids(8, rng);
        if (v == Variant::offline) {
            EXPECT_EQ(offline_forward(back, ids), offline_forward(m, ids));
        } else {
            const auto a = sequence_forward(m, ids), b = sequence_forward(back, ids);
            EXPECT_EQ(a.ib_probs, b.ib_probs);
            EXPECT_EQ(a.intent_dists, b.intent_dists);
        }
    }
}

TEST(Checkpoint, HeaderLayout) {
    auto m = small_model(Variant::multitask);
    const auto bytes = checkpoint_bytes(m);
    EXPECT_EQ(bytes.substr(0, 4), "SINT");
    EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1u);
    EXPECT_EQ(static_cast<unsigned char>(bytes[5]), 0u);
}

TEST(Checkpoint, TruncationReportsOffset) {
    auto m = small_model(Variant::multitask);
    const auto bytes = checkpoint_bytes(m);
    for (std::size_t cut : {std::size_t{2}, std::size_t{9}, bytes.size() / 2, bytes.size() - 1}) {
        try {
            model_from_checkpoint_bytes<float>(bytes.substr(0, cut));
            ADD_FAILURE() << "accepted a checkpoint cut at " << cut;
        } catch (const FormatError& e) {
            EXPECT_LE(e.offset, cut);
        }
    }
}

TEST(Checkpoint, BadMagicAndVersionRejected) {
    auto m = small_model(Variant::multitask);
    auto bytes = checkpoint_bytes(m);
    auto bad = bytes;
    bad[0] = 'X';
    EXPECT_THROW(model_from_checkpoint_bytes<float>(bad), FormatError);
    bad = bytes;
    bad[4] = 2;
    try {
        model_from_checkpoint_bytes<float>(bad);
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_EQ(e.offset, 4u);
    }
}

TEST(Checkpoint, NonFiniteValueRejected) {
    auto m = small_model(Variant::multitask);
    m.multitask().ib_head.bias.value(0, 0) = std::numeric_limits<float>::quiet_NaN();
    EXPECT_THROW(model_from_checkpoint_bytes<float>(checkpoint_bytes(m)), FormatError);
}

TEST(Checkpoint, FileRoundTrip) {
    auto m = small_model(Variant::multitask_lookahead);
    const std::string path = ::testing::TempDir() + "/model.ckpt";
    save_checkpoint(m, path);
    auto back = load_checkpoint(path);
    EXPECT_EQ(checkpoint_bytes(back), checkpoint_bytes(m));
    EXPECT_THROW(load_checkpoint(path + ".missing"), DataError);
}

// --- gradients and training ------------------------------------------------------------

TEST(ModelGradients, EveryVariantMatchesFiniteDifferences) {
    for (Variant v : kAllVariants) {
        const auto r = check_model_gradients(TinyModelSpec{}, v);
        EXPECT_LT(r.max_relative_error, 1e-6) << variant_name(v) << " worst " << r.worst_parameter;
        EXPECT_GT(r.elements_checked, 0u);
    }
}

TEST(ModelGradients, FaultInjectionIsDetected) {
    EXPECT_GT(check_model_gradients(TinyModelSpec{}, Variant::multitask, true).max_relative_error, 1e-2);
}

TEST(ModelGradients, IntentOnlyNeverTouchesTheBoundaryPath) {
    auto m = small_model<double>(Variant::intent_only);
    TinyModelSpec spec;
    spec.vocab = 15;
    spec.num_classes = 4;
    std::mt19937_64 rng(6);
    const auto xs = random_examples(spec, m.config, rng);
    const auto ptrs = pointers(xs);
    const Mat<double> before = m.multitask().ib_head.weight.value;
    Adam<double> opt;
    for (int k = 0; k < 5; ++k) {
        batch_loss(m, std::span<const TrainExample* const>(ptrs), {.train = true, .with_grad = true}, rng);
        for (auto* p : m.multitask().ib_lstm.params())
            EXPECT_TRUE(p->grad.isZero());
        opt.step(m.trainable_params());
    }
    EXPECT_EQ(m.multitask().ib_head.weight.value, before);
    EXPECT_EQ(m.trainable_params().size(), 1 + m.multitask().intent_lstm.params().size() + 2);
}

TEST(Training, FullBatchLossDecreasesWithoutDropout) {
    auto m = small_model<double>(Variant::multitask);
    TinyModelSpec spec;
    spec.vocab = 15;
    spec.num_classes = 4;
    spec.batch = 8;
    std::mt19937_64 rng(7);
    const auto xs = random_examples(spec, m.config, rng);
    const auto ptrs = pointers(xs);
    const std::span<const TrainExample* const> batch(ptrs);
    Adam<double> opt;
    double prev = batch_loss(m, batch, {.train = false, .with_grad = true}, rng);
    opt.step(m.params());
    for (int k = 0; k < 30; ++k) {
        const double l = batch_loss(m, batch, {.train = false, .with_grad = true}, rng);
        EXPECT_LE(l, prev + 1e-12) << "step " << k;
        prev = l;
        opt.step(m.params());
    }
}

TEST(Training, OfflineOverfitsTwentyTurns) {
    // Class c is marked by word 2 + c somewhere in an otherwise random turn.
    auto c = small_config();
    c.embed_dim = 12;
    c.hidden_dim = 16;
    auto m = make_model<float>(c, Variant::offline, tiny_vocabulary(15), tiny_classes(4));
    std::mt19937_64 rng(8);
    std::vector<TrainExample> xs(20);
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const int cls = static_cast<int>(i % 5) - 1; // -1 is O
        auto& ex = xs[i];
        const std::size_t n = 3 + rng() % 5;
        for (std::size_t t = 0; t < n; ++t)
            ex.seq.token_ids.push_back(6 + static_cast<int>(rng() % 9));
        if (cls >= 0)
            ex.seq.token_ids[rng() % n] = 2 + cls;
        ex.seq.ib_tags.assign(n, 0);
        ex.seq.intent_tags.assign(n, kOutside);
        ex.turn_label = cls;
    }
    const auto ptrs = pointers(xs);
    Adam<float> opt(AdamConfig{0.01});
    for (int epoch = 0; epoch < 300; ++epoch) {
        batch_loss(m, std::span<const TrainExample* const>(ptrs), {.train = true, .with_grad = true}, rng);
        opt.step(m.params());
    }
    int correct = 0;
    for (const auto& ex : xs) {
        const auto d = offline_forward(m, ex.seq.token_ids);
        const int want = ex.turn_label == kOutside ? m.outside_index() : ex.turn_label;
        correct += argmax(d) == want;
    }
    EXPECT_EQ(correct, 20);
}

TEST(Training, SameSeedGivesIdenticalCheckpointsAndLogs) {
    auto spec = default_generator_spec();
    spec.num_transcripts = 40;
    spec.seed = 3;
    const auto corpus = generate_corpus(spec);
    const std::vector<Transcript> tr(corpus.begin(), corpus.begin() + 32), va(corpus.begin() + 32, corpus.end());
    auto cfg = small_config();
    cfg.dropout = 0.25;
    cfg.epochs = 2;
    cfg.min_count = 1;
    const auto classes = class_list(spec);
    auto a = train<float>(tr, va, classes, cfg, Variant::multitask);
    auto b = train<float>(tr, va, classes, cfg, Variant::multitask);
    EXPECT_EQ(checkpoint_bytes(a.model), checkpoint_bytes(b.model));
    std::ostringstream la, lb;
    write_train_log(la, a.log);
    write_train_log(lb, b.log);
    EXPECT_EQ(la.str(), lb.str());
    EXPECT_EQ(la.str().substr(0, 24), "epoch,split,metric,value");
    cfg.seed = 18;
    auto c = train<float>(tr, va, classes, cfg, Variant::multitask);
    EXPECT_NE(checkpoint_bytes(c.model), checkpoint_bytes(a.model));
}

TEST(Training, EmptyTrainingSplitRejected) {
    EXPECT_THROW(train<float>({}, {}, tiny_classes(2), small_config(), Variant::multitask), DataError);
}

TEST(BuildExamples, PreIntentTurnsAreNegativesAndFollowUpsAreDropped) {
    auto spec = default_generator_spec();
    spec.num_transcripts = 30;
    spec.seed = 4;
    spec.pre_intent_turn_rate = 1.0;
    const auto corpus = generate_corpus(spec);
    const auto vocab = build_vocabulary(corpus, 1);
    std::mt19937_64 rng(1);
    const auto ex = build_examples(corpus, vocab, small_config(), Variant::multitask, rng);
    std::size_t positives = 0, expected = 0;
    for (const auto& t : corpus)
        for (std::size_t i = 0; i <= t.annotation->turn_index; ++i)
            expected += t.turns[i].speaker == Speaker::customer;
    EXPECT_EQ(ex.size(), expected);
    for (const auto& e : ex)
        positives += e.seq.boundary().has_value();
    EXPECT_EQ(positives, corpus.size());
    EXPECT_GT(ex.size(), corpus.size());
}
