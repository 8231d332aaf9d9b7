#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "sintent/syngen.hpp"

using namespace sintent;

namespace {

GeneratorSpec spec_with(std::size_t n, std::uint64_t seed) {
    auto s = default_generator_spec();
    s.num_transcripts = n;
    s.seed = seed;
    return s;
}

std::string serialize(const std::vector<Transcript>& ts, const ClassList& cl) {
    std::ostringstream o;
    write_transcripts(o, ts, cl);
    return o.str();
}

} // namespace

TEST(GenerateCorpus, EndOfTurnRateWithinTolerance) {
    const auto spec = spec_with(1000, 42);
    ASSERT_DOUBLE_EQ(spec.end_of_turn_boundary_rate, 0.62);
    const auto stats = summarize_corpus(generate_corpus(spec));
    EXPECT_EQ(stats.num_annotated, 1000u);
    EXPECT_NEAR(stats.end_of_turn_fraction, 0.62, 0.04);
}

TEST(GenerateCorpus, ZeroTranscriptsGivesEmptyCorpus) { EXPECT_TRUE(generate_corpus(spec_with(0, 1)).empty()); }

TEST(GenerateCorpus, StructureAndLabelCorrectness) {
    const auto spec = spec_with(600, 7);
    const auto ts = generate_corpus(spec);
    const auto idx = detail::index_lexicons(spec);
    for (const auto& t : ts) {
        ASSERT_TRUE(t.annotation) << t.id;
        const auto& a = *t.annotation;
        EXPECT_EQ(t.turns.front().speaker, Speaker::agent) << t.id;
        ASSERT_LT(a.turn_index, t.turns.size());
        const auto& turn = t.turns[a.turn_index];
        EXPECT_EQ(turn.speaker, Speaker::customer) << t.id;
        ASSERT_LT(a.boundary_token_index, turn.tokens.size());

        // the words ending at the boundary spell one of the class's phrases
        bool found = false;
        for (const auto& p : spec.classes[static_cast<std::size_t>(a.class_id)].phrases) {
            const auto words = split_words(p);
            if (words.size() > a.boundary_token_index + 1)
                continue;
            bool same = true;
            for (std::size_t k = 0; k < words.size(); ++k)
                same &= turn.tokens[a.boundary_token_index + 1 - words.size() + k].text == words[k];
            found |= same;
        }
        EXPECT_TRUE(found) << t.id;
        EXPECT_TRUE(idx.keywords[static_cast<std::size_t>(a.class_id)].count(turn.tokens[a.boundary_token_index].text))
            << t.id;

        // the suffix after the boundary never carries another class's keyword
        for (std::size_t k = a.boundary_token_index + 1; k < turn.tokens.size(); ++k)
            for (const auto& kw : idx.keywords)
                EXPECT_FALSE(kw.count(turn.tokens[k].text)) << t.id << " suffix word " << turn.tokens[k].text;

        // constant word duration, monotone clock
        std::int64_t clock = 0;
        for (const auto& tu : t.turns)
            for (const auto& tok : tu.tokens) {
                EXPECT_EQ(tok.start_ms, clock);
                EXPECT_EQ(tok.end_ms - tok.start_ms, 400);
                clock = tok.end_ms;
            }
    }
}

TEST(GenerateCorpus, SameSeedSameBytes) {
    const auto spec = spec_with(200, 99);
    const auto cl = class_list(spec);
    EXPECT_EQ(serialize(generate_corpus(spec), cl), serialize(generate_corpus(spec), cl));
    EXPECT_NE(serialize(generate_corpus(spec), cl), serialize(generate_corpus(spec_with(200, 100)), cl));
}

TEST(GenerateCorpus, UniformClassesWithinThreeSigma) {
    const auto spec = spec_with(3200, 5);
    const auto stats = summarize_corpus(generate_corpus(spec));
    const double n = 3200.0, p = 1.0 / 16.0;
    const double sigma = std::sqrt(n * p * (1.0 - p));
    ASSERT_EQ(stats.class_counts.size(), 16u);
    for (const auto& [c, k] : stats.class_counts)
        EXPECT_LE(std::abs(static_cast<double>(k) - n * p), 3.0 * sigma) << "class " << c;
}

TEST(GenerateCorpus, IdsAreUnique) {
    const auto ts = generate_corpus(spec_with(300, 3));
    std::set<std::string> ids;
    for (const auto& t : ts)
        ids.insert(t.id);
    EXPECT_EQ(ids.size(), ts.size());
}

TEST(GeneratorSpec, InvalidSpecsRejected) {
    auto s = default_generator_spec();
    s.classes[3].phrases.clear();
    EXPECT_THROW(generate_corpus(s), UsageError);

    s = default_generator_spec();
    s.end_of_turn_boundary_rate = 1.5;
    EXPECT_THROW(generate_corpus(s), UsageError);

    s = default_generator_spec();
    s.class_weights = {1.0, 2.0};
    EXPECT_THROW(generate_corpus(s), UsageError);
}

TEST(GeneratorSpec, SharedBoundaryWordRejectedOnlyWhenDisjointRequested) {
    auto s = default_generator_spec();
    s.num_transcripts = 20;
    s.classes[0].phrases.push_back("upgrade my phone"); // boundary word of device_upgrade
    EXPECT_THROW(generate_corpus(s), UsageError);
    s.disjoint_lexicons = false;
    EXPECT_EQ(generate_corpus(s).size(), 20u);
}

TEST(GeneratorSpec, DefaultLexiconsAreDisjointAtTheBoundary) {
    EXPECT_NO_THROW(validate_generator_spec(default_generator_spec()));
    EXPECT_EQ(default_generator_spec().classes.size(), 16u);
}

TEST(SummarizeCorpus, AllTurnFinalIsPointMassAtZero) {
    auto s = spec_with(300, 8);
    s.end_of_turn_boundary_rate = 1.0;
    const auto stats = summarize_corpus(generate_corpus(s));
    EXPECT_DOUBLE_EQ(stats.end_of_turn_fraction, 1.0);
    ASSERT_EQ(stats.offset_histogram_ms.size(), 1u);
    EXPECT_EQ(stats.offset_histogram_ms.begin()->first, 0);
    EXPECT_EQ(stats.offset_histogram_ms.begin()->second, 300u);
}

TEST(SummarizeCorpus, OffsetsFollowTrailingLengthDistribution) {
    const auto spec = spec_with(1000, 21);
    const auto stats = summarize_corpus(generate_corpus(spec));
    const double n = 1000.0;
    EXPECT_NEAR(static_cast<double>(stats.offset_histogram_ms.at(0)) / n, 0.62, 0.04);

    // Expected share of each non-zero offset: (1 - rate) * weight / total weight,
    // at suffix length * 400 ms.
    double wsum = 0.0;
    for (const auto& [len, w] : spec.trailing_length_distribution)
        wsum += w;
    std::set<std::int64_t> expected_offsets{0};
    for (const auto& [len, w] : spec.trailing_length_distribution) {
        const double p = (1.0 - spec.end_of_turn_boundary_rate) * w / wsum;
        const auto it = stats.offset_histogram_ms.find(400 * len);
        const double got = it == stats.offset_histogram_ms.end() ? 0.0 : static_cast<double>(it->second) / n;
        const double sigma = std::sqrt(p * (1.0 - p) / n);
        EXPECT_NEAR(got, p, 4.0 * sigma + 1e-9) << "suffix length " << len;
        expected_offsets.insert(400 * len);
    }
    for (const auto& [ms, c] : stats.offset_histogram_ms)
        EXPECT_TRUE(expected_offsets.count(ms)) << ms;
}

TEST(SummarizeCorpus, EmptyCorpus) {
    const auto stats = summarize_corpus({});
    EXPECT_EQ(stats.num_transcripts, 0u);
    EXPECT_EQ(stats.end_of_turn_fraction, 0.0);
    EXPECT_TRUE(stats.offset_histogram_ms.empty());
    std::ostringstream o;
    write_offset_histogram_csv(o, stats);
    EXPECT_EQ(o.str(), "bucket,count\n");
}

TEST(SummarizeCorpus, HistogramCsvInSeconds) {
    CorpusStats s;
    s.offset_histogram_ms = {{0, 5}, {400, 2}, {1200, 1}};
    std::ostringstream o;
    write_offset_histogram_csv(o, s);
    EXPECT_EQ(o.str(), "bucket,count\n0.0,5\n0.4,2\n1.2,1\n");
}
