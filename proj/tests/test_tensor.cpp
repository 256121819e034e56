#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "samam/adam.hpp"
#include "samam/ops.hpp"

using namespace samam;
using samam::testing::check_gradient;
using samam::testing::random_like;

namespace {

Tensor rand_tensor(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0, bool rg = true) {
    std::mt19937_64 rng(seed);
    return Tensor::uniform(std::move(s), lo, hi, rng, rg);
}

// Projects any output onto a fixed random direction so every entry matters.
Tensor project(const Tensor& y, std::uint64_t seed = 99) { return sum(y * random_like(y.shape(), seed)); }

}  // namespace

TEST(Elementwise, ClosedForms) {
    EXPECT_NEAR(softplus(Tensor::scalar(0.0)).item(), std::log(2.0), 1e-15);
    EXPECT_DOUBLE_EQ(sigmoid(Tensor::scalar(0.0)).item(), 0.5);
    EXPECT_DOUBLE_EQ(softplus(Tensor::scalar(50.0)).item(), 50.0);
    EXPECT_DOUBLE_EQ(softplus(Tensor::scalar(1000.0)).item(), 1000.0);
    EXPECT_NEAR(silu(Tensor::scalar(1.0)).item(), 1.0 / (1.0 + std::exp(-1.0)), 1e-15);
}

TEST(Elementwise, SiluGradientAtOneMatchesCentralDifference) {
    Tensor x = Tensor::scalar(1.0, true);
    silu(x).backward();
    const double h = 1e-5;
    auto f = [](double v) { return v / (1.0 + std::exp(-v)); };
    EXPECT_NEAR(x.grad()[0], (f(1.0 + h) - f(1.0 - h)) / (2 * h), 1e-6);
}

TEST(Elementwise, BroadcastShapes) {
    const Tensor a = rand_tensor({2, 3, 4}, 1, -1, 1, false);
    const Tensor b = rand_tensor({3, 1}, 2, -1, 1, false);
    const Tensor c = rand_tensor({4}, 3, -1, 1, false);
    EXPECT_EQ((a + b).shape(), (Shape{2, 3, 4}));
    EXPECT_EQ((b + a).shape(), (Shape{2, 3, 4}));
    EXPECT_EQ((b * c).shape(), (Shape{3, 4}));
    EXPECT_EQ(((a + b) + c).shape(), (a + (b + c)).shape());
    const Tensor ab = a * b, ba = b * a;
    EXPECT_EQ(ab.values(), ba.values());
    // explicit value check of one broadcast entry
    EXPECT_DOUBLE_EQ((a + b).values()[1 * 12 + 2 * 4 + 3], a.values()[1 * 12 + 2 * 4 + 3] + b.values()[2]);
}

TEST(Elementwise, ShapeMismatchNamesBothShapes) {
    const Tensor a({2, 3}), b({4});
    try {
        (void)(a + b);
        FAIL() << "expected error";
    } catch (const Error& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2,3]"), std::string::npos);
        EXPECT_NE(msg.find("[4]"), std::string::npos);
    }
}

TEST(Elementwise, DivisionByExactZeroThrows) {
    EXPECT_THROW(div(Tensor::scalar(1.0), Tensor::scalar(0.0)), Error);
    EXPECT_NO_THROW(div(Tensor::scalar(1.0), Tensor::scalar(1e-300)));
}

TEST(Elementwise, DomainErrors) {
    EXPECT_THROW(samam::log(Tensor::scalar(0.0)), Error);
    EXPECT_THROW(samam::sqrt(Tensor::scalar(-1.0)), Error);
}

TEST(Elementwise, OutputsFiniteForFiniteInputs) {
    const Tensor x = rand_tensor({64}, 4, -800, 800, false);
    for (const Tensor& y : {samam::exp(x * 0.5) * 0.0 + sigmoid(x), softplus(x), silu(x), samam::tanh(x), relu(x)})
        for (double v : y.values()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Elementwise, GradientsMatchFiniteDifferences) {
    const Tensor a = rand_tensor({3, 4}, 5);
    const Tensor b = rand_tensor({4}, 6);
    const Tensor pos = rand_tensor({3, 4}, 7, 0.5, 2.0);
    const std::vector<std::pair<const char*, std::function<Tensor()>>> cases = {
        {"add", [&] { return project(a + b); }},
        {"sub", [&] { return project(a - b); }},
        {"mul", [&] { return project(a * b); }},
        {"div", [&] { return project(a / (pos + 0.0)); }},
        {"exp", [&] { return project(samam::exp(a)); }},
        {"log", [&] { return project(samam::log(pos)); }},
        {"sigmoid", [&] { return project(sigmoid(a * 3.0)); }},
        {"softplus", [&] { return project(softplus(a * 3.0)); }},
        {"silu", [&] { return project(silu(a * 3.0)); }},
        {"tanh", [&] { return project(samam::tanh(a)); }},
        {"square", [&] { return project(square(a)); }},
        {"sqrt", [&] { return project(samam::sqrt(pos)); }},
        {"scalar ops", [&] { return project(-(a * 2.5) + 1.0 - 0.25); }},
        {"l2_norm", [&] { return l2_norm(a); }},
        {"mean", [&] { return mean(a * a); }},
        {"transpose", [&] { return project(transpose(a)); }},
        {"slice", [&] { return project(slice(a, 1, 3)); }},
        {"reshape", [&] { return project(reshape(a, {2, 6})); }},
    };
    for (const auto& [name, f] : cases) {
        for (const Tensor* p : {&a, &b, &pos}) {
            const auto r = check_gradient(f, *p);
            EXPECT_LE(r.rel_error, 1e-4) << name;
        }
    }
}

TEST(Elementwise, ReluGradientAwayFromKink) {
    const Tensor x({4}, {-1.0, -0.3, 0.4, 2.0}, true);
    sum(relu(x) * Tensor({4}, {1.0, 2.0, 3.0, 4.0})).backward();
    EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{0, 0, 3, 4}));
}

TEST(Matmul, IdentityAndHandExample) {
    const Tensor eye({2, 2}, {1, 0, 0, 1});
    const Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
    EXPECT_EQ(matmul(eye, x).values(), x.values());
    const Tensor a({2, 2}, {1, 2, 3, 4}), b({2, 1}, {5, 6});
    EXPECT_EQ(matmul(a, b).values(), (std::vector<double>{17, 39}));
    EXPECT_EQ(matmul(a, b).shape(), (Shape{2, 1}));
}

TEST(Matmul, InnerMismatchThrows) { EXPECT_THROW(matmul(Tensor({2, 3}), Tensor({2, 3})), Error); }

TEST(Matmul, GradientMatchesFiniteDifferences) {
    const Tensor a = rand_tensor({3, 4}, 11), b = rand_tensor({4, 2}, 12);
    auto f = [&] { return project(matmul(a, b)); };
    EXPECT_LE(check_gradient(f, a).rel_error, 1e-6);
    EXPECT_LE(check_gradient(f, b).rel_error, 1e-6);
}

TEST(Conv2d, OneByOneIdentity) {
    const Tensor x = rand_tensor({1, 4, 5}, 13, -1, 1, false);
    EXPECT_EQ(conv2d(x, Tensor::full({1, 1, 1, 1}, 1.0)).values(), x.values());
}

TEST(Conv2d, AllOnesKernelSumsWindow) {
    const Tensor x = Tensor::full({1, 5, 5}, 1.0);
    const Tensor y = conv2d(x, Tensor::full({1, 1, 3, 3}, 1.0));
    EXPECT_DOUBLE_EQ(y.values()[2 * 5 + 2], 9.0);
    EXPECT_DOUBLE_EQ(y.values()[0], 4.0);  // zero padding at the corner
    EXPECT_DOUBLE_EQ(y.values()[2], 6.0);
}

TEST(Conv2d, StrideShapes) {
    const Tensor x({2, 7, 9});
    EXPECT_EQ(conv2d(x, Tensor({3, 2, 3, 3}), {}, {.stride = 2}).shape(), (Shape{3, 4, 5}));
    EXPECT_EQ(conv2d(Tensor({3, 8, 12}), Tensor({5, 3, 4, 4}), {}, {.stride = 4, .padding = 0}).shape(),
              (Shape{5, 2, 3}));
}

TEST(Conv2d, DepthwiseActsPerChannel) {
    Tensor x = rand_tensor({3, 4, 4}, 14, -1, 1, false);
    Tensor k({3, 1, 1, 1}, {2.0, -1.0, 0.5});
    const Tensor y = conv2d(x, k, {}, {.groups = 3});
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < 16; ++i) EXPECT_DOUBLE_EQ(y.values()[c * 16 + i], k.values()[c] * x.values()[c * 16 + i]);
}

TEST(Conv2d, ChannelGroupArithmeticErrors) {
    EXPECT_THROW(conv2d(Tensor({3, 4, 4}), Tensor({2, 1, 3, 3}), {}, {.groups = 2}), Error);
    EXPECT_THROW(conv2d(Tensor({4, 4, 4}), Tensor({4, 3, 3, 3}), {}, {.groups = 2}), Error);
    EXPECT_THROW(conv2d(Tensor({1, 4, 4}), Tensor({1, 1, 2, 2})), Error);  // even kernel with same padding
}

TEST(Conv2d, GradientMatchesFiniteDifferences) {
    const Tensor x = rand_tensor({2, 5, 5}, 15);
    const Tensor w = rand_tensor({3, 2, 3, 3}, 16);
    const Tensor b = rand_tensor({3}, 17);
    auto f = [&] { return project(conv2d(x, w, b)); };
    for (const Tensor* p : {&x, &w, &b}) EXPECT_LE(check_gradient(f, *p).rel_error, 1e-5);

    const Tensor wd = rand_tensor({4, 1, 3, 3}, 18);
    const Tensor xd = rand_tensor({4, 6, 5}, 19);
    auto g = [&] { return project(conv2d(xd, wd, {}, {.stride = 2, .groups = 4})); };
    EXPECT_LE(check_gradient(g, xd).rel_error, 1e-5);
    EXPECT_LE(check_gradient(g, wd).rel_error, 1e-5);
}

TEST(InstanceNorm, Examples) {
    const Tensor c = Tensor::full({1, 2, 2}, 3.0);
    const Tensor zc = instance_norm(c);
    for (double v : zc.values()) EXPECT_EQ(v, 0.0);
    const Tensor pm({1, 1, 2}, {-1.0, 1.0});
    const std::vector<double> y = instance_norm(pm).values();
    EXPECT_NEAR(y[0], -1.0, 1e-5);
    EXPECT_NEAR(y[1], 1.0, 1e-5);
    EXPECT_THROW(instance_norm(Tensor({2, 1, 1})), Error);
}

TEST(InstanceNorm, ZeroMeanUnitVariance) {
    const Tensor x = rand_tensor({3, 6, 7}, 20, -4, 9, false);
    const auto y = instance_norm(x).values();
    for (std::size_t c = 0; c < 3; ++c) {
        double m = 0, v = 0;
        for (std::size_t i = 0; i < 42; ++i) m += y[c * 42 + i];
        m /= 42;
        for (std::size_t i = 0; i < 42; ++i) v += (y[c * 42 + i] - m) * (y[c * 42 + i] - m);
        v /= 42;
        EXPECT_LT(std::abs(m), 1e-6);
        EXPECT_NEAR(v, 1.0, 1e-4);
    }
}

TEST(InstanceNorm, GradientMatchesFiniteDifferences) {
    const Tensor x = rand_tensor({2, 3, 4}, 21);
    EXPECT_LE(check_gradient([&] { return project(instance_norm(x)); }, x).rel_error, 1e-4);
}

TEST(ChannelLayerNorm, MatchesPerPositionStandardization) {
    const Tensor x = rand_tensor({5, 3, 4}, 24, -3, 7, false);
    const auto y = channel_layer_norm(x).values();
    for (std::size_t i = 0; i < 12; ++i) {
        double m = 0, v = 0;
        for (std::size_t k = 0; k < 5; ++k) m += x.values()[k * 12 + i];
        m /= 5;
        for (std::size_t k = 0; k < 5; ++k) v += (x.values()[k * 12 + i] - m) * (x.values()[k * 12 + i] - m);
        v /= 5;
        for (std::size_t k = 0; k < 5; ++k)
            EXPECT_NEAR(y[k * 12 + i], (x.values()[k * 12 + i] - m) / std::sqrt(v + 1e-5), 1e-12);
    }
    const Tensor z = channel_layer_norm(Tensor::zeros({4, 2, 2}));
    for (double v : z.values()) EXPECT_EQ(v, 0.0);
    EXPECT_THROW(channel_layer_norm(Tensor({4})), Error);
}

TEST(ChannelLayerNorm, GradientMatchesFiniteDifferences) {
    const Tensor x = rand_tensor({4, 3, 2}, 25);
    EXPECT_LE(check_gradient([&] { return project(channel_layer_norm(x)); }, x).rel_error, 1e-4);
}

TEST(Reductions, ChannelMeanAndUpsample) {
    const Tensor x = rand_tensor({2, 3, 2}, 22);
    EXPECT_LE(check_gradient([&] { return project(channel_mean(x)); }, x).rel_error, 1e-6);
    EXPECT_LE(check_gradient([&] { return project(upsample_nearest2x(x)); }, x).rel_error, 1e-6);
    const Tensor u = upsample_nearest2x(Tensor({1, 1, 2}, {1.0, 2.0}));
    EXPECT_EQ(u.values(), (std::vector<double>{1, 1, 2, 2, 1, 1, 2, 2}));
}

TEST(Reductions, L2NormGradientAtOriginIsZero) {
    Tensor x = Tensor::zeros({3}, true);
    l2_norm(x).backward();
    for (double g : x.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, SumAndQuadratic) {
    Tensor x = rand_tensor({5}, 23);
    sum(x).backward();
    for (double g : x.grad()) EXPECT_EQ(g, 1.0);
    x.zero_grad();
    sum(x * x).backward();
    for (std::size_t i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2.0 * x.values()[i]);
}

TEST(Backward, NonScalarLossThrows) { EXPECT_THROW(rand_tensor({2}, 24).backward(), Error); }

TEST(Backward, RepeatedCallsAccumulateIntoLeaves) {
    Tensor x = rand_tensor({3}, 25);
    const Tensor loss = sum(x * x);
    loss.backward();
    loss.backward();
    for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 4.0 * x.values()[i]);
}

TEST(Backward, SharedSubexpressionMatchesUnrolledCopy) {
    // s = tanh(x*w) feeds four uses. The oracle gives each use its own copy
    // of x; the shared-graph gradient must equal the sum of the copies' grads.
    Tensor x = rand_tensor({4}, 26);
    const Tensor w = rand_tensor({4}, 27, -1, 1, false);
    {
        const Tensor s = samam::tanh(x * w);
        sum(s * s + samam::exp(s) * s).backward();
    }
    std::vector<Tensor> copies;
    std::vector<Tensor> uses;
    for (int i = 0; i < 4; ++i) {
        copies.push_back(x.detach().set_requires_grad(true));
        uses.push_back(samam::tanh(copies.back() * w));
    }
    sum(uses[0] * uses[1] + samam::exp(uses[2]) * uses[3]).backward();
    for (std::size_t i = 0; i < 4; ++i) {
        double unrolled = 0.0;
        for (const auto& c : copies) unrolled += c.grad()[i];
        EXPECT_NEAR(x.grad()[i], unrolled, 1e-12);
    }
}

TEST(Backward, NoGradGuardRecordsNothing) {
    Tensor x = rand_tensor({3}, 28);
    Tensor y;
    {
        NoGradGuard g;
        y = x * 2.0;
    }
    EXPECT_FALSE(y.requires_grad());
    EXPECT_TRUE(y.is_leaf());
    EXPECT_TRUE(grad_mode_enabled());
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
    Tensor p = rand_tensor({4}, 29);
    const auto before = p.values();
    p.mutable_grad();
    std::vector<Tensor> ps{p};
    AdamState st;
    adam_step(ps, st);
    EXPECT_EQ(p.values(), before);
    EXPECT_EQ(st.step, 1u);
}

TEST(Adam, UnitGradientOneStep) {
    Tensor p = Tensor::full({1}, 3.0, true);
    p.mutable_grad()[0] = 1.0;
    std::vector<Tensor> ps{p};
    AdamState st(0.1);
    adam_step(ps, st);
    // mhat = 1, vhat = 1  ->  step = lr / (1 + eps)
    EXPECT_NEAR(p.values()[0], 3.0 - 0.1 / (1.0 + 1e-8), 1e-15);
}

TEST(Adam, MinimizesQuadratic) {
    Tensor p = Tensor::full({1}, 1.0, true);
    std::vector<Tensor> ps{p};
    AdamState st(0.1);
    for (int i = 0; i < 200; ++i) {
        zero_grads(ps);
        sum(p * p).backward();
        adam_step(ps, st);
    }
    EXPECT_LT(std::abs(p.values()[0]), 0.1);
    EXPECT_EQ(st.step, 200u);
}

TEST(Adam, MismatchedStateThrows) {
    std::vector<Tensor> ps{Tensor::zeros({2}, true)};
    AdamState st;
    st.m = {std::vector<double>(3)};
    st.v = {std::vector<double>(3)};
    EXPECT_THROW(adam_step(ps, st), Error);
}
