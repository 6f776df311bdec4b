#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "nbwatch/neuralnet.hpp"

using namespace nbwatch;
using namespace nbwatch::nn;

namespace {

FeatureMap random_map(std::size_t len, std::size_t ch, Rng& rng) {
    FeatureMap m(len, ch);
    for (auto& v : m.data) v = rng.normal();
    return m;
}

std::vector<double> random_vec(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    return v;
}

std::vector<IqWindow> random_windows(std::size_t n, std::size_t I, std::size_t M, Rng& rng) {
    std::vector<IqWindow> out(n);
    for (auto& w : out) {
        w.iq.resize(I * 2);
        for (auto& v : w.iq) v = static_cast<float>(rng.normal());
        w.label = static_cast<std::uint16_t>(rng.below(M));
    }
    return out;
}

std::vector<const IqWindow*> ptrs(const std::vector<IqWindow>& ws) {
    std::vector<const IqWindow*> p;
    for (const auto& w : ws) p.push_back(&w);
    return p;
}

} // namespace

TEST(Conv1d, IdentityKernelReproducesChannelZero) {
    FeatureMap in(6, 2);
    const double ch0[] = {1.0, -2.0, 3.0, 0.5, -0.1, 4.0};
    for (std::size_t t = 0; t < 6; ++t) {
        in.at(t, 0) = ch0[t];
        in.at(t, 1) = 100.0;
    }
    // [filter][kernel][channel]; only tap 0 on channel 0 is set.
    std::vector<double> w(3 * 2, 0.0);
    w[0] = 1.0;
    const std::vector<double> b{0.0};
    const auto out = conv1d_forward(in, w, b, 1, 3);
    ASSERT_EQ(out.length, 4u);
    ASSERT_EQ(out.channels, 1u);
    for (std::size_t t = 0; t < 4; ++t) EXPECT_EQ(out.at(t, 0), std::max(ch0[t], 0.0));
}

TEST(Conv1d, ZeroInputZeroBias) {
    Rng rng(1);
    const FeatureMap in(16, 2);
    const auto w = random_vec(4 * 3 * 2, rng);
    const std::vector<double> b(4, 0.0);
    const auto out = conv1d_forward(in, w, b, 4, 3);
    EXPECT_EQ(out.length, 14u);
    for (double v : out.data) EXPECT_EQ(v, 0.0);
}

TEST(Conv1d, MatchesNestedLoopOracle) {
    Rng rng(2);
    const std::size_t I = 8, K = 3, F = 2;
    const auto in = random_map(I, 2, rng);
    const auto w = random_vec(F * K * 2, rng);
    const auto b = random_vec(F, rng);
    const auto out = conv1d_forward(in, w, b, F, K);
    for (std::size_t t = 0; t + K <= I; ++t)
        for (std::size_t f = 0; f < F; ++f) {
            double acc = b[f];
            for (std::size_t k = 0; k < K; ++k)
                for (std::size_t c = 0; c < 2; ++c) acc += w[(f * K + k) * 2 + c] * in.at(t + k, c);
            EXPECT_NEAR(out.at(t, f), acc > 0 ? acc : 0.0, 1e-12);
        }
}

TEST(Conv1d, ShapeMismatchThrows) {
    const FeatureMap in(8, 2);
    EXPECT_THROW(conv1d_forward(in, std::vector<double>(5), std::vector<double>(1), 1, 3), ShapeError);
    EXPECT_THROW(conv1d_forward(in, std::vector<double>(6), std::vector<double>(2), 1, 3), ShapeError);
    EXPECT_THROW(conv1d_forward(in, std::vector<double>(18), std::vector<double>(1), 1, 9), ShapeError);
}

TEST(MaxPool, PairsAndTies) {
    FeatureMap in(4, 1);
    in.data = {1, 3, 2, 5};
    const auto r = maxpool1d(in);
    EXPECT_EQ(r.out.data, (std::vector<double>{3, 5}));

    FeatureMap c(7, 1, 2.5);
    const auto rc = maxpool1d(c);
    EXPECT_EQ(rc.out.length, 3u);
    for (double v : rc.out.data) EXPECT_EQ(v, 2.5);
    for (auto a : rc.argmax) EXPECT_EQ(a, 0);

    FeatureMap g(3, 1, 1.0);
    const auto back = maxpool1d_backward(rc, g, 7);
    EXPECT_EQ(back.data, (std::vector<double>{1, 0, 1, 0, 1, 0, 0}));
}

TEST(MaxPool, BackwardRoutesToArgmax) {
    FeatureMap in(4, 2);
    in.data = {1, 9, 3, 2, 7, 4, 5, 8};
    const auto r = maxpool1d(in);
    FeatureMap g(2, 2);
    g.data = {10, 20, 30, 40};
    const auto back = maxpool1d_backward(r, g, 4);
    EXPECT_EQ(back.data, (std::vector<double>{0, 20, 10, 0, 30, 0, 0, 40}));
}

TEST(Softmax, EqualLogitsAreUniform) {
    const std::vector<double> z(6, 3.7);
    for (double p : softmax(z)) EXPECT_NEAR(p, 1.0 / 6.0, 1e-15);
}

TEST(Softmax, ExtremeLogitsDoNotOverflow) {
    std::vector<double> z(6, 0.0);
    z[0] = 1000.0;
    const auto p = softmax(z);
    EXPECT_NEAR(p[0], 1.0, 1e-12);
    for (double v : p) EXPECT_TRUE(std::isfinite(v));
}

TEST(Softmax, NonFiniteThrows) {
    std::vector<double> z{0.0, std::nan("")};
    EXPECT_THROW(softmax(z), std::domain_error);
    z[1] = INFINITY;
    EXPECT_THROW(softmax(z), std::domain_error);
}

TEST(Softmax, SumsToOneProperty) {
    Rng rng(3);
    for (int i = 0; i < 2000; ++i) {
        std::vector<double> z(2 + rng.below(17));
        const double scale = std::pow(10.0, rng.uniform(-3.0, 3.0));
        for (auto& v : z) v = rng.normal() * scale;
        const auto p = softmax(z);
        const double s = std::accumulate(p.begin(), p.end(), 0.0);
        ASSERT_NEAR(s, 1.0, 1e-6);
        for (double v : p) ASSERT_GE(v, 0.0);
    }
}

TEST(Cce, ClosedForms) {
    const std::vector<double> one{0.0, 1.0, 0.0};
    EXPECT_EQ(cce_loss(one, 1), 0.0);
    const std::vector<double> uniform(6, 1.0 / 6.0);
    EXPECT_NEAR(cce_loss(uniform, 4), -std::log(1.0 / 6.0), 1e-12);
    EXPECT_NEAR(cce_loss(uniform, 4), 1.79176, 1e-5);
    EXPECT_EQ(cce_loss(one, 0), -std::log(1e-12));
}

TEST(Dropout, InvertedScalingAndRate) {
    Rng rng(4);
    std::vector<double> x(100000, 1.0);
    const auto mask = dropout_apply(x, 0.5, rng);
    std::size_t zeroed = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] == 0.0) ++zeroed;
        else EXPECT_EQ(x[i], 2.0);
        EXPECT_EQ(x[i], mask[i]);
    }
    EXPECT_NEAR(static_cast<double>(zeroed) / 1e5, 0.5, 0.03);
}

TEST(Dense, MatchesOracle) {
    Rng rng(5);
    const auto x = random_vec(7, rng);
    const auto w = random_vec(7 * 3, rng);
    const auto b = random_vec(3, rng);
    const auto y = dense_forward(x, w, b, false);
    for (std::size_t j = 0; j < 3; ++j) {
        double acc = b[j];
        for (std::size_t d = 0; d < 7; ++d) acc += x[d] * w[d * 3 + j];
        EXPECT_NEAR(y[j], acc, 1e-12);
    }
}

TEST(Engine, MatchesSingleSampleLayers) {
    Rng rng(6);
    ModelConfig c;
    c.input_size = 16;
    c.num_classes = 5;
    c.conv_filters = 3;
    c.dense_units = 12;
    const auto model = Model::init(c, 11);
    const auto ws = random_windows(3, 16, 5, rng);
    Engine eng(c, 4);
    const auto p = ptrs(ws);
    eng.load(p);
    eng.forward(model.params, 3, nullptr);
    for (std::size_t b = 0; b < 3; ++b) {
        FeatureMap in(16, 2);
        for (std::size_t i = 0; i < 32; ++i) in.data[i] = ws[b].iq[i];
        const auto conv = conv1d_forward(in, model.params.conv_w, model.params.conv_b, 3, 3);
        const auto pooled = maxpool1d(conv);
        const auto h = dense_forward(pooled.out.data, model.params.dense1_w, model.params.dense1_b, true);
        const auto z = dense_forward(h, model.params.dense2_w, model.params.dense2_b, false);
        const auto pr = softmax(z);
        for (std::size_t m = 0; m < 5; ++m) EXPECT_EQ(eng.probs(b)[m], pr[m]);
    }
}

TEST(Engine, SoftmaxCceGradientIsProbsMinusOneHot) {
    Rng rng(7);
    ModelConfig c;
    c.input_size = 8;
    c.num_classes = 4;
    c.conv_filters = 2;
    c.dense_units = 5;
    const auto model = Model::init(c, 3);
    const auto ws = random_windows(1, 8, 4, rng);
    Engine eng(c, 1);
    const auto p = ptrs(ws);
    eng.load(p);
    eng.forward(model.params, 1, nullptr);
    ParamSet g = ParamSet::zeros(c);
    const std::vector<std::uint16_t> labels{ws[0].label};
    eng.backward(model.params, labels, g);
    // dense2_b gradient is dL/dlogits directly.
    for (std::size_t m = 0; m < 4; ++m)
        EXPECT_NEAR(g.dense2_b[m], eng.probs(0)[m] - (m == ws[0].label ? 1.0 : 0.0), 1e-15);
}

TEST(Engine, ZeroInputZeroWeightsGiveZeroConvGrad) {
    ModelConfig c;
    c.input_size = 16;
    c.num_classes = 6;
    c.conv_filters = 2;
    c.dense_units = 8;
    Model m;
    m.config = c;
    m.params = ParamSet::zeros(c);
    std::vector<IqWindow> ws(4);
    for (auto& w : ws) w.iq.assign(32, 0.0f);
    Engine eng(c, 4);
    const auto p = ptrs(ws);
    eng.load(p);
    eng.forward(m.params, 4, nullptr);
    ParamSet g = ParamSet::zeros(c);
    const std::vector<std::uint16_t> labels{0, 1, 2, 3};
    eng.backward(m.params, labels, g);
    for (double v : g.conv_w) EXPECT_EQ(v, 0.0);
    EXPECT_TRUE(g.all_finite());
}

TEST(GradCheck, RandomTinyModels) {
    Rng rng(8);
    for (int trial = 0; trial < 6; ++trial) {
        ModelConfig c;
        c.input_size = rng.coin() ? 8 : 16;
        c.conv_filters = std::size_t{1} << rng.below(3);
        c.dense_units = 8;
        c.num_classes = 6;
        const auto model = Model::init(c, 100 + trial);
        const auto ws = random_windows(4, c.input_size, c.num_classes, rng);
        const auto p = ptrs(ws);
        GradCheckOptions opt;
        if (trial % 2) opt.dropout_seed = 77 + trial;
        const auto r = gradient_check(model, p, opt);
        EXPECT_EQ(r.checked, model.params.parameter_count());
        EXPECT_EQ(r.unresolved, 0u);
        for (std::size_t k = 0; k < kTensorCount; ++k)
            EXPECT_LT(r.max_rel_error[k], 1e-4) << kTensorNames[k] << " trial " << trial;
    }
}

TEST(GradCheck, DetectsABrokenGradient) {
    // Sanity for the checker itself: a deliberately wrong analytic value must be caught.
    EXPECT_GT(relative_error(1.0, 1.01, 1e-6), 1e-4);
    EXPECT_LT(relative_error(1.0, 1.0 + 1e-7, 1e-6), 1e-4);
    EXPECT_LT(relative_error(0.0, 1e-12, 1e-6), 1e-4);
}

TEST(Adam, ZeroGradientLeavesParams) {
    ModelConfig c;
    c.input_size = 8;
    c.num_classes = 2;
    c.conv_filters = 1;
    c.dense_units = 2;
    auto m = Model::init(c, 1);
    const auto before = m.params;
    auto st = AdamState::for_model(c);
    adam_step(m.params, ParamSet::zeros(c), st, 1, {});
    EXPECT_EQ(m.params, before);
    EXPECT_EQ(st.m, ParamSet::zeros(c));
    EXPECT_EQ(st.v, ParamSet::zeros(c));
}

TEST(Adam, FirstStepClosedForm) {
    ModelConfig c;
    c.input_size = 8;
    c.num_classes = 2;
    c.conv_filters = 1;
    c.dense_units = 2;
    auto params = ParamSet::zeros(c);
    auto grads = ParamSet::zeros(c);
    grads.conv_b[0] = 1.0;
    auto st = AdamState::for_model(c);
    adam_step(params, grads, st, 1, {});
    // m_hat = v_hat = 1, so the step is -lr * 1 / (1 + eps).
    EXPECT_NEAR(params.conv_b[0], -0.01 / (1.0 + 1e-8), 1e-15);
    EXPECT_NEAR(st.m.conv_b[0], 0.1, 1e-15);
    EXPECT_NEAR(st.v.conv_b[0], 0.001, 1e-15);
    EXPECT_THROW(adam_step(params, grads, st, 0, {}), ConfigError);
}
