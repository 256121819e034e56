#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "gradcheck.hpp"
#include "samam/network.hpp"

using namespace samam;
using samam::testing::check_gradient;
using samam::testing::random_like;

namespace {

Tensor rand_image(std::size_t h, std::size_t w, std::uint64_t seed, bool rg = false) {
    std::mt19937_64 rng(seed);
    return Tensor::uniform({3, h, w}, 0.0, 1.0, rng, rg);
}

double l2_diff(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += (a.values()[i] - b.values()[i]) * (a.values()[i] - b.values()[i]);
    return std::sqrt(s);
}

// Wakes every zero-initialised embedder so style actually reaches the output.
void perturb(const SaMamModel& m, double scale, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-scale, scale);
    for (auto t : m.parameters())
        for (auto& v : t.data()) v += u(rng);
}

// Mid-range timescales: at the initial small deltas the decay gradients sit
// near the finite-difference noise floor.
void widen_timescales(const SaMamModel& m) {
    for (auto [name, t] : m.named_parameters())
        if (name.ends_with("delta_bias"))
            for (auto& v : t.data()) v *= 0.05;
}

}  // namespace

TEST(PatchEmbed, StrideArithmetic) {
    std::mt19937_64 rng(1);
    const Tensor w = Tensor::uniform({5, 3, 4, 4}, -1, 1, rng);
    EXPECT_EQ(patch_embed(rand_image(8, 8, 2), w, Tensor::zeros({5})).shape(), (Shape{5, 2, 2}));
    EXPECT_EQ(patch_embed(rand_image(12, 20, 3), w, Tensor::zeros({5})).shape(), (Shape{5, 3, 5}));
}

TEST(PatchEmbed, ConstantImageConstantKernel) {
    const Tensor y = patch_embed(Tensor::full({3, 8, 12}, 0.25), Tensor::full({2, 3, 4, 4}, 0.5), Tensor::full({2}, 1.0));
    for (double v : y.values()) EXPECT_DOUBLE_EQ(v, 0.25 * 0.5 * 48 + 1.0);
}

TEST(PatchEmbed, NonDivisibleAsksForPadding) {
    try {
        patch_embed(Tensor({3, 6, 8}), Tensor({2, 3, 4, 4}), Tensor({2}));
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("pad"), std::string::npos);
    }
    EXPECT_THROW(patch_embed(Tensor({1, 8, 8}), Tensor({2, 3, 4, 4}), Tensor({2})), Error);
}

TEST(PatchEmbed, GradientCheck) {
    std::mt19937_64 rng(4);
    const Tensor img = rand_image(8, 8, 5, true);
    Tensor w = Tensor::uniform({3, 3, 4, 4}, -1, 1, rng, true);
    Tensor b = Tensor::uniform({3}, -1, 1, rng, true);
    const Tensor r = random_like({3, 2, 2}, 6);
    auto f = [&] { return sum(patch_embed(img, w, b) * r); };
    EXPECT_LE(check_gradient(f, img).rel_error, 1e-4);
    EXPECT_LE(check_gradient(f, w).rel_error, 1e-4);
    EXPECT_LE(check_gradient(f, b).rel_error, 1e-4);
}

TEST(Model, NamesUniqueAndStable) {
    const SaMamModel a, b;
    std::set<std::string> names;
    for (const auto& [n, _] : a.named_parameters()) EXPECT_TRUE(names.insert(n).second) << n;
    ASSERT_EQ(a.named_parameters().size(), b.named_parameters().size());
    for (std::size_t i = 0; i < a.named_parameters().size(); ++i) {
        EXPECT_EQ(a.named_parameters()[i].first, b.named_parameters()[i].first);
        EXPECT_EQ(a.named_parameters()[i].second.values(), b.named_parameters()[i].second.values());
    }
    EXPECT_THROW(a.parameter("no.such.weight"), Error);
    EXPECT_NO_THROW(a.parameter("decoder.head.out.bias"));
}

TEST(Model, SeedChangesWeights) {
    ModelConfig cfg;
    cfg.seed = 9;
    const SaMamModel a, b(cfg);
    EXPECT_NE(a.parameter("content_encoder.patch_embed.weight").values(),
              b.parameter("content_encoder.patch_embed.weight").values());
}

TEST(Encode, ShapeDeterminismAndSeparateEncoders) {
    const SaMamModel m;
    const Tensor img = rand_image(16, 24, 7);
    const Tensor fc = m.encode(img, Encoder::content);
    EXPECT_EQ(fc.shape(), (Shape{16, 4, 6}));
    EXPECT_EQ(fc.values(), SaMamModel().encode(img, Encoder::content).values());
    EXPECT_GT(l2_diff(fc, m.encode(rand_image(16, 24, 8), Encoder::content)), 0.0);
    EXPECT_GT(l2_diff(fc, m.encode(img, Encoder::style)), 0.0);
}

TEST(Decode, ShapeAndErrors) {
    const SaMamModel m;
    const auto style = m.style_embedding(rand_image(8, 8, 9));
    std::mt19937_64 rng(10);
    const Tensor feats = Tensor::uniform({16, 3, 5}, -1, 1, rng);
    EXPECT_EQ(m.decode(feats, style).shape(), (Shape{3, 12, 20}));
    EXPECT_THROW(m.decode(Tensor({8, 3, 5}), style), Error);
    EXPECT_THROW(m.decode(feats, StyleEmbedding::from_features(Tensor({4, 2, 2}))), Error);
}

TEST(Decode, StyleInvariantAtZeroInit) {
    for (bool zero_pre : {false, true}) {
        ModelConfig cfg;
        cfg.zero_init_pre_sain = zero_pre;
        const SaMamModel m(cfg);
        const Tensor fc = m.encode(rand_image(16, 16, 11), Encoder::content);
        const Tensor a = m.decode(fc, m.style_embedding(rand_image(16, 16, 12)));
        const Tensor b = m.decode(fc, m.style_embedding(rand_image(32, 24, 13)));
        EXPECT_EQ(a.values(), b.values());
    }
}

TEST(Stylize, ShapeContractAcrossSizes) {
    const SaMamModel m;
    for (auto [ch, cw, sh, sw] : {std::array<std::size_t, 4>{64, 64, 32, 32}, {32, 48, 128, 36}, {128, 32, 40, 96},
                                  {44, 100, 32, 32}}) {
        const Tensor out = m.stylize(rand_image(ch, cw, ch + cw), rand_image(sh, sw, sh * sw));
        EXPECT_EQ(out.shape(), (Shape{3, ch, cw}));
        for (double v : out.values()) ASSERT_TRUE(std::isfinite(v));
    }
}

TEST(Stylize, StylePluggableWithTrainedLikeWeights) {
    const SaMamModel m;
    perturb(m, 0.05, 14);
    const Tensor c = rand_image(16, 16, 15);
    const auto before = m.parameters()[0].values();
    const Tensor a = m.stylize(c, rand_image(16, 16, 16));
    const Tensor b = m.stylize(c, rand_image(16, 16, 17));
    EXPECT_GT(l2_diff(a, b), 0.0);
    EXPECT_EQ(m.parameters()[0].values(), before);
}

TEST(ParameterCount, AnalyticMatchesInstance) {
    std::vector<ModelConfig> cfgs{ModelConfig::desk(), ModelConfig::tiny()};
    ModelConfig v = ModelConfig::desk();
    v.conv_only = true;
    cfgs.push_back(v);
    v = ModelConfig::desk();
    v.local_enhance = false;
    cfgs.push_back(v);
    v = ModelConfig::desk();
    v.channels = 12;
    v.expanded = 20;
    v.state_dim = 3;
    v.sconv_kernel = 5;
    v.se_reduction = 8;
    v.groups = 3;
    v.blocks_per_group = 1;
    v.encoder_depth = 1;
    cfgs.push_back(v);
    for (const auto& cfg : cfgs) EXPECT_EQ(SaMamModel(cfg).parameter_total(), parameter_count(cfg)) << cfg.serialize();
}

TEST(ParameterCount, DeskUnderOneMillionFullScaleReported) {
    EXPECT_LT(parameter_count(ModelConfig::desk()), 1'000'000u);
    const std::size_t full = parameter_count(ModelConfig::full_scale());
    EXPECT_GT(full, parameter_count(ModelConfig::desk()));
    EXPECT_GT(full, 1'000'000u);
}

TEST(Erf, NormalisedAndCornersReachedByFullModel) {
    const SaMamModel m;
    const auto map = erf_map(m, 32);
    EXPECT_EQ(map.height, 32u);
    double total = 0.0, peak = 0.0;
    for (double v : map.values) {
        total += v;
        peak = std::max(peak, v);
        EXPECT_GE(v, 0.0);
    }
    EXPECT_GT(total, 0.0);
    EXPECT_DOUBLE_EQ(peak, 1.0);
    for (auto [r, c] : {std::pair{0, 0}, {0, 31}, {31, 0}, {31, 31}}) EXPECT_GT(map.at(r, c), 0.0);
    for (const auto& [n, t] : m.named_parameters()) EXPECT_FALSE(t.has_grad() && t.grad()[0] != 0.0) << n;
    EXPECT_THROW(erf_map(m, 30), Error);
}

TEST(Erf, ConvOnlyIsLocal) {
    ModelConfig cfg;
    cfg.conv_only = true;
    const SaMamModel m(cfg);
    const auto map = erf_map(m, 64);
    // Stacked kernels reach at most 5 feature cells (20 px) plus the head's 3 px.
    for (std::size_t r = 0; r < 64; ++r)
        for (std::size_t c = 0; c < 64; ++c) {
            const auto dr = r > 32 ? r - 32 : 32 - r, dc = c > 32 ? c - 32 : 32 - c;
            if (std::max(dr, dc) > 24) {
                ASSERT_EQ(map.at(r, c), 0.0) << r << "," << c;
            }
        }
    EXPECT_GT(map.at(32, 32), 0.0);
}

TEST(Decode, GradientCheckAtDeskConfig) {
    const SaMamModel m;
    perturb(m, 0.05, 18);
    widen_timescales(m);
    std::mt19937_64 rng(19);
    const Tensor feats = Tensor::uniform({16, 2, 2}, -1, 1, rng, true);
    const Tensor sf = Tensor::uniform({16, 2, 3}, 0.5, 1.5, rng, true);
    const Tensor r = random_like({3, 8, 8}, 20);
    auto f = [&] { return sum(m.decode(feats, StyleEmbedding::from_features(sf)) * r); };
    EXPECT_LE(check_gradient(f, feats).rel_error, 1e-4);
    EXPECT_LE(check_gradient(f, sf).rel_error, 1e-4);
    std::size_t i = 0;
    for (const auto& [name, t] : m.named_parameters()) {
        if (name.rfind("decoder", 0) != 0) continue;
        const auto rep = check_gradient(f, t, 1e-5, 3, 21 + i++);
        EXPECT_LE(rep.rel_error, 1e-4) << name << " an=" << rep.analytic_norm << " nn=" << rep.numeric_norm;
    }
}

TEST(Stylize, GradientCheckThroughEncodersAtTinyConfig) {
    const SaMamModel m(ModelConfig::tiny());
    perturb(m, 0.1, 22);
    widen_timescales(m);
    const Tensor c = rand_image(8, 8, 23, true);
    const Tensor s = rand_image(8, 4, 24, true);
    const Tensor r = random_like({3, 8, 8}, 25);
    auto f = [&] { return sum(m.stylize(c, s) * r); };
    EXPECT_LE(check_gradient(f, c).rel_error, 1e-4);
    EXPECT_LE(check_gradient(f, s).rel_error, 1e-4);
    std::size_t i = 0;
    for (const auto& [name, t] : m.named_parameters())
    {
        const auto rep = check_gradient(f, t, 1e-5, 6, 26 + i++);
        EXPECT_LE(rep.rel_error, 1e-4) << name << " an=" << rep.analytic_norm << " nn=" << rep.numeric_norm;
    }
}
