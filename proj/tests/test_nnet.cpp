#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "gradcheck.hpp"
#include "mmprl/nnet.hpp"
#include "oracles.hpp"

using namespace mmprl;

TEST(ParamNet, ParameterCountMatchesLayerSum) {
    ParamNet net({6, 8, 8, 3});
    EXPECT_EQ(net.params().size(), (6u + 1) * 8 + (8u + 1) * 8 + (8u + 1) * 3);
}

TEST(ParamNet, ZeroParametersGiveZeroOutput) {
    ParamNet net({4, 5, 2});
    const std::vector<double> x{0.3, -2.0, 7.0, 1.0};
    for (double y : net.forward(x)) EXPECT_EQ(y, 0.0);
}

TEST(ParamNet, IdentityLayerPassesInputThrough) {
    ParamNet net({3, 3}, Activation::relu, Activation::identity);
    std::vector<double> p(12, 0.0);
    for (int i = 0; i < 3; ++i) p[i * 3 + i] = 1.0;
    net.set_params(p);
    const std::vector<double> x{0.5, -1.5, 2.25};
    EXPECT_EQ(net.forward(x), x);
}

TEST(ParamNet, ForwardMatchesStraightLineEvaluation) {
    std::mt19937_64 rng(11);
    ParamNet net({4, 8, 2});
    net.init_uniform(rng);
    std::normal_distribution<double> n;
    std::vector<double> x(4);
    for (auto& v : x) v = n(rng);
    const std::vector<double> p(net.params().begin(), net.params().end());
    const auto want = oracle::mlp({4, 8, 2}, p, x, oracle::Act::relu, oracle::Act::tanh);
    const auto got = net.forward(x);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-14);
}

TEST(ParamNet, TanhOutputStaysInUnitInterval) {
    std::mt19937_64 rng(5);
    ParamNet net({3, 16, 4});
    net.init_uniform(rng);
    for (double& p : net.params()) p *= 50.0;
    const std::vector<double> x{10.0, -20.0, 30.0};
    for (double y : net.forward(x)) {
        EXPECT_LE(y, 1.0);
        EXPECT_GE(y, -1.0);
    }
}

TEST(ParamNet, ForwardIsBitwiseRepeatable) {
    std::mt19937_64 rng(3);
    ParamNet net({5, 7, 7, 2});
    net.init_uniform(rng);
    const std::vector<double> x{0.1, 0.2, -0.3, 0.4, 0.5};
    EXPECT_EQ(net.forward(x), net.forward(x));
}

TEST(ParamNet, InitIsBoundedByFanIn) {
    std::mt19937_64 rng(9);
    ParamNet net({16, 4});
    net.init_uniform(rng);
    for (double p : net.params()) EXPECT_LE(std::abs(p), 0.25);
}

TEST(ParamNet, ShapeErrors) {
    ParamNet net({3, 2});
    EXPECT_THROW(net.forward(std::vector<double>{1.0, 2.0}), ShapeError);
    EXPECT_THROW(net.set_params(std::vector<double>(3)), ShapeError);
    EXPECT_THROW(net.backward(std::vector<double>{1, 2, 3}, std::vector<double>{1}), ShapeError);
}

TEST(ParamNetBackward, ZeroCotangentGivesZeroGradients) {
    std::mt19937_64 rng(1);
    ParamNet net({3, 5, 2});
    net.init_uniform(rng);
    const auto g = net.backward(std::vector<double>{0.2, -0.7, 1.1}, std::vector<double>{0.0, 0.0});
    for (double v : g.params) EXPECT_EQ(v, 0.0);
    for (double v : g.input) EXPECT_EQ(v, 0.0);
}

TEST(ParamNetBackward, ScalarLinearChainRule) {
    ParamNet net({1, 1}, Activation::relu, Activation::identity);
    net.set_params(std::vector<double>{2.5, -0.75}); // w, b
    const auto g = net.backward(std::vector<double>{1.5}, std::vector<double>{1.0});
    EXPECT_EQ(g.params, (std::vector<double>{1.5, 1.0}));
    EXPECT_EQ(g.input, (std::vector<double>{2.5}));
}

TEST(ParamNetBackward, MatchesFiniteDifferencesOn6883) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        std::mt19937_64 rng(seed);
        const auto rep = gradcheck::actor({6, 8, 8, 3}, rng);
        EXPECT_GT(rep.checked, 0u);
        EXPECT_LE(rep.worst, 1e-4) << "seed " << seed;
    }
}

TEST(CriticNet, LayerSizesRoundTrip) {
    CriticNet c(20, 12, 48, 16, {64, 32});
    const auto sizes = c.layer_sizes();
    EXPECT_EQ(sizes, (std::vector<std::size_t>{20, 12, 48, 16, 64, 32, 1}));
    EXPECT_EQ(CriticNet::from_layer_sizes(sizes).param_count(), c.param_count());
}

TEST(CriticNet, ValueMatchesOracle) {
    std::mt19937_64 rng(4);
    CriticNet c(5, 3, 6, 4, {7});
    c.init_uniform(rng);
    const std::vector<double> s{0.1, -0.4, 0.9, 1.2, -1.0}, a{0.3, -0.3, 0.8};
    const std::vector<double> p(c.params().begin(), c.params().end());
    EXPECT_NEAR(c.value(s, a), oracle::critic(5, 3, 6, 4, {7}, p, s, a), 1e-14);
}

TEST(CriticNet, GradientsMatchFiniteDifferences) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        std::mt19937_64 rng(seed);
        const auto rep = gradcheck::critic({5, 3, 6, 4, {7, 5}}, rng);
        EXPECT_LE(rep.worst, 1e-4) << "seed " << seed;
    }
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
    std::vector<double> p{1.0, -2.0, 3.0};
    const auto before = p;
    AdamState st(3);
    adam_step(p, std::vector<double>(3, 0.0), st);
    EXPECT_EQ(p, before);
    EXPECT_EQ(st.t, 1u);
}

TEST(Adam, FirstStepMovesBySignTimesRate) {
    for (double g : {3.0, -0.02, 1e3}) {
        std::vector<double> p{0.5};
        AdamState st(1);
        adam_step(p, std::vector<double>{g}, st);
        EXPECT_NEAR(p[0], 0.5 - 1e-4 * (g > 0 ? 1.0 : -1.0), 1e-10) << g;
    }
}

TEST(Adam, ZeroRateIsIdentity) {
    std::vector<double> p{0.25, 4.0};
    AdamConfig cfg;
    cfg.learning_rate = 0.0;
    AdamState st(2, cfg);
    for (int i = 0; i < 5; ++i) adam_step(p, std::vector<double>{1.0, -3.0}, st);
    EXPECT_EQ(p, (std::vector<double>{0.25, 4.0}));
}

TEST(Adam, MatchesTextbookLoopOnQuadratic) {
    // f(x) = sum c_i (x_i - t_i)^2, three steps at a visible step size.
    const std::vector<double> c{1.0, 4.0, 0.5}, t{2.0, -1.0, 0.3};
    AdamConfig cfg;
    cfg.learning_rate = 0.1;
    std::vector<double> x{0.0, 0.0, 0.0}, y = x;
    AdamState st(3, cfg);
    oracle::Adam ref;
    ref.lr = 0.1;
    for (int k = 0; k < 3; ++k) {
        std::vector<double> gx(3), gy(3);
        for (int i = 0; i < 3; ++i) {
            gx[i] = 2 * c[i] * (x[i] - t[i]);
            gy[i] = 2 * c[i] * (y[i] - t[i]);
        }
        adam_step(x, gx, st);
        ref.step(y, gy);
    }
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(x[i], y[i], 1e-12);
}

TEST(Adam, RejectsNonFiniteGradient) {
    std::vector<double> p{1.0};
    AdamState st(1);
    EXPECT_THROW(adam_step(p, std::vector<double>{std::nan("")}, st), NumericError);
}

TEST(Payload, RoundTripsBitwise) {
    std::mt19937_64 rng(2);
    ParamNet net({3, 4, 2});
    net.init_uniform(rng);
    std::stringstream ss;
    write_payload(ss, net.layer_sizes(), net.params());
    Payload back;
    ASSERT_TRUE(read_payload(ss, net.params().size(), back));
    EXPECT_EQ(back.sizes, net.layer_sizes());
    EXPECT_TRUE(std::equal(back.params.begin(), back.params.end(), net.params().begin(), net.params().end()));
}
