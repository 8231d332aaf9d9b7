#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "sintent/objective.hpp"

using namespace sintent;

namespace {

using U8 = std::vector<std::uint8_t>;

double focal(const std::vector<double>& p, const U8& y, const FocalConfig& cfg, const U8& mask = {}) {
    return focal_loss<double>(p, y, mask, cfg).loss;
}

std::vector<Vec<double>> uniform_dists(std::size_t n, Eigen::Index k) {
    return std::vector<Vec<double>>(n, Vec<double>::Constant(k, 1.0 / static_cast<double>(k)));
}

Vec<double> random_dist(Eigen::Index k, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.01, 1.0);
    Vec<double> v(k);
    for (Eigen::Index i = 0; i < k; ++i)
        v(i) = u(rng);
    return v / v.sum();
}

} // namespace

// --- focal ------------------------------------------------------------------

TEST(FocalLoss, SingleStepHalfProbability) {
    EXPECT_NEAR(focal({0.5}, {1}, {}), std::pow(0.5, 8) * std::log(2.0), 1e-15);
    EXPECT_NEAR(focal({0.5}, {1}, {}), 0.0027076, 1e-7);
}

TEST(FocalLoss, PerfectPredictionIsNearZero) {
    EXPECT_LT(focal({1.0, 0.0}, {1, 0}, {}), 1e-12);
    EXPECT_LT(focal({1.0}, {1}, {1.0, 0.0}), 1e-6); // clamped BCE
}

TEST(FocalLoss, GammaZeroIsBinaryCrossEntropy) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.001, 0.999);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng() % 30;
        std::vector<double> p(n);
        U8 y(n);
        double bce = 0.0;
        for (std::size_t t = 0; t < n; ++t) {
            p[t] = u(rng);
            y[t] = rng() % 2;
            bce -= y[t] ? std::log(p[t]) : std::log(1.0 - p[t]);
        }
        EXPECT_NEAR(focal(p, y, {1.0, 0.0}), bce / static_cast<double>(n), 1e-9);
    }
}

TEST(FocalLoss, NonNegativeAndMonotoneTowardsTheLabel) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.01, 0.99);
    for (int trial = 0; trial < 200; ++trial) {
        const double p = u(rng);
        const std::uint8_t y = rng() % 2;
        const double closer = y ? p + (1.0 - p) * 0.5 : p * 0.5;
        EXPECT_GE(focal({p}, {y}, {}), 0.0);
        EXPECT_LE(focal({closer}, {y}, {}), focal({p}, {y}, {}));
    }
}

TEST(FocalLoss, MaskSelectsTimestepsAndNormalizer) {
    const FocalConfig cfg{};
    EXPECT_DOUBLE_EQ(focal({0.5, 0.9, 0.3}, {1, 0, 0}, cfg, {1, 0, 0}), focal({0.5}, {1}, cfg));
    EXPECT_THROW(focal({0.5}, {1}, cfg, {0}), DataError);
    EXPECT_THROW(focal({}, {}, cfg), DataError);
    EXPECT_THROW(focal({0.5, 0.5}, {1}, cfg), DataError);
}

TEST(FocalLoss, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.05, 0.95);
    for (double gamma : {0.0, 2.0, 8.0}) {
        std::vector<double> p(6);
        U8 y{1, 0, 0, 1, 0, 0};
        for (auto& x : p)
            x = u(rng);
        const FocalConfig cfg{1.0, gamma};
        const auto r = focal_loss<double>(p, y, {}, cfg);
        for (std::size_t t = 0; t < p.size(); ++t) {
            auto pp = p, pm = p;
            pp[t] += 1e-6;
            pm[t] -= 1e-6;
            const double num = (focal(pp, y, cfg) - focal(pm, y, cfg)) / 2e-6;
            EXPECT_NEAR(r.grad[t], num, 1e-6 * std::max(1.0, std::abs(num))) << "gamma " << gamma << " t " << t;
        }
    }
}

// --- intent losses --------------------------------------------------------------

TEST(MaskedIntentLoss, UniformOverSeventeen) {
    const auto d = uniform_dists(3, 17);
    const std::vector<int> tags{kOutside, 4, kOutside};
    const auto r = masked_intent_loss<double>(d, tags, U8{0, 1, 0});
    EXPECT_NEAR(r.loss, std::log(17.0), 1e-12);
    EXPECT_NEAR(r.loss, 2.8332, 1e-4);
    EXPECT_DOUBLE_EQ(r.grad[1](4), -17.0);
    EXPECT_TRUE(r.grad[0].isZero());
    EXPECT_TRUE(r.grad[2].isZero());
}

TEST(MaskedIntentLoss, FullyMaskedIsZero) {
    const auto d = uniform_dists(2, 5);
    const std::vector<int> tags{kOutside, kOutside};
    EXPECT_EQ(masked_intent_loss<double>(d, tags, U8{0, 0}).loss, 0.0);
}

TEST(MaskedIntentLoss, InvariantToNonBoundaryTimesteps) {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + rng() % 10, b = rng() % n;
        std::vector<Vec<double>> d;
        for (std::size_t t = 0; t < n; ++t)
            d.push_back(random_dist(9, rng));
        std::vector<int> tags(n, kOutside);
        tags[b] = static_cast<int>(rng() % 8);
        U8 mask(n, 0);
        mask[b] = 1;
        const double base = masked_intent_loss<double>(d, tags, mask).loss;
        for (std::size_t t = 0; t < n; ++t)
            if (t != b)
                d[t] = random_dist(9, rng);
        EXPECT_EQ(masked_intent_loss<double>(d, tags, mask).loss, base);
    }
}

TEST(MaskedIntentLoss, BoundaryTaggedOutsideIsAnError) {
    const auto d = uniform_dists(2, 5);
    const std::vector<int> tags{kOutside, kOutside};
    EXPECT_THROW(masked_intent_loss<double>(d, tags, U8{0, 1}), DataError);
    EXPECT_THROW(masked_intent_loss<double>(d, tags, U8{0}), DataError);
}

TEST(UnmaskedIntentLoss, UniformOverSeventeenAveraged) {
    const auto d = uniform_dists(2, 17);
    const std::vector<int> tags{kOutside, 3};
    const auto r = unmasked_intent_loss<double>(d, tags);
    EXPECT_NEAR(r.loss, std::log(17.0), 1e-12);
    EXPECT_DOUBLE_EQ(r.grad[0](16), -17.0 / 2.0); // O is the last output
}

TEST(UnmaskedIntentLoss, OneHotCorrectIsZero) {
    std::vector<Vec<double>> d(2, Vec<double>::Zero(4));
    d[0](3) = 1.0;
    d[1](1) = 1.0;
    const std::vector<int> tags{kOutside, 1};
    EXPECT_EQ(unmasked_intent_loss<double>(d, tags).loss, 0.0);
}

TEST(UnmaskedIntentLoss, MatchesMaskedLossWithAllOnesMaskAndMeanNormalization) {
    std::mt19937_64 rng(7);
    std::vector<Vec<double>> d;
    std::vector<int> tags;
    for (int t = 0; t < 6; ++t) {
        d.push_back(random_dist(5, rng));
        tags.push_back(static_cast<int>(rng() % 4));
    }
    const double masked = masked_intent_loss<double>(d, tags, U8(6, 1)).loss;
    EXPECT_NEAR(unmasked_intent_loss<double>(d, tags).loss, masked / 6.0, 1e-12);
}

TEST(CombinedLoss, WeightsByBeta) {
    EXPECT_DOUBLE_EQ(combined_loss(0.4, 0.6, {0.5}), 0.5);
    EXPECT_EQ(combined_loss(0.4, 0.6, {1.0}), 0.4);
    EXPECT_EQ(combined_loss(0.4, 0.6, {0.0}), 0.6);
    EXPECT_THROW(combined_loss(std::nan(""), 0.6, {0.5}), NumericError);
}

TEST(CombinedLoss, LinearInEachArgument) {
    const MultiTaskWeights w{0.3};
    EXPECT_NEAR(combined_loss(2.0, 1.0, w) - combined_loss(1.0, 1.0, w), 0.3, 1e-15);
    EXPECT_NEAR(combined_loss(1.0, 2.0, w) - combined_loss(1.0, 1.0, w), 0.7, 1e-15);
}

// --- Adam ---------------------------------------------------------------------

TEST(Adam, FirstStepMovesByLearningRate) {
    Parameter<double> p("theta", 1, 1);
    p.value(0, 0) = 1.0;
    p.grad(0, 0) = 1.0;
    Adam<double> opt;
    opt.step({&p});
    EXPECT_NEAR(p.value(0, 0), 1.0 - 0.001 / (1.0 + 1e-8), 1e-15);
    EXPECT_EQ(p.grad(0, 0), 0.0);
    EXPECT_EQ(opt.step_count(), 1);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
    Parameter<double> p("theta", 2, 2);
    p.value << 1, 2, 3, 4;
    const Mat<double> before = p.value;
    Adam<double> opt;
    opt.step({&p});
    EXPECT_EQ(p.value, before);
}

TEST(Adam, ThreeStepsMatchScalarReference) {
    const double lr = 0.001, b1 = 0.9, b2 = 0.999, eps = 1e-8, g = 0.37;
    double theta = -0.25, m = 0.0, v = 0.0;
    for (int t = 1; t <= 3; ++t) {
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
        theta -= lr * mh / (std::sqrt(vh) + eps);
    }
    Parameter<double> p("theta", 1, 1);
    p.value(0, 0) = -0.25;
    Adam<double> opt;
    for (int t = 0; t < 3; ++t) {
        p.grad(0, 0) = g;
        opt.step({&p});
    }
    EXPECT_NEAR(p.value(0, 0), theta, 1e-12);
}

TEST(Adam, StepDecreasesConvexQuadratic) {
    Parameter<double> p("x", 3, 1);
    p.value << 1.0, -2.0, 0.5;
    const Vec<double> a = (Vec<double>(3) << 1.0, 4.0, 0.25).finished();
    auto f = [&] { return 0.5 * (a.array() * p.value.col(0).array().square()).sum(); };
    Adam<double> opt(AdamConfig{0.01});
    for (int k = 0; k < 20; ++k) {
        const double before = f();
        p.grad = a.cwiseProduct(p.value.col(0));
        opt.step({&p});
        EXPECT_LT(f(), before);
    }
}

TEST(Adam, NonFiniteGradientNamesTheParameter) {
    Parameter<float> p("ib_head.weight", 1, 2);
    p.grad(0, 1) = std::numeric_limits<float>::infinity();
    Adam<float> opt;
    try {
        opt.step({&p});
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("ib_head.weight"), std::string::npos);
    }
}

TEST(Adam, ChangingParameterListRejected) {
    Parameter<double> a("a", 1, 1), b("b", 1, 1);
    Adam<double> opt;
    opt.step({&a});
    EXPECT_THROW(opt.step({&a, &b}), UsageError);
}
