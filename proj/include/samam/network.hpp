#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "samam/config.hpp"
#include "samam/savssm.hpp"

namespace samam {

enum class Encoder { content, style };

/// 4x4 stride-4 patch embedding: img [3,4H,4W] -> [C,H,W].
inline Tensor patch_embed(const Tensor& img, const Tensor& weight, const Tensor& bias) {
    if (img.rank() != 3 || img.dim(0) != 3)
        fail("patch_embed: expected an RGB image [3,H,W], got ", shape_str(img.shape()));
    if (img.dim(1) % 4 != 0 || img.dim(2) % 4 != 0)
        fail("patch_embed: image ", img.dim(1), "x", img.dim(2),
             " is not divisible by 4; pad it to a multiple of 4 first");
    return conv2d(img, weight, bias, {.stride = 4, .padding = 0, .groups = 1});
}

struct EncoderWeights {
    Tensor patch_weight;  // [C, 3, 4, 4]
    Tensor patch_bias;    // [C]
    std::vector<VSSMWeights> blocks;
    std::vector<LoEWeights> loe;  // empty when local enhancement is disabled

    void visit(const std::string& p, const ParamVisitor& f) {
        f(p + ".patch_embed.weight", patch_weight);
        f(p + ".patch_embed.bias", patch_bias);
        for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit(p + ".vssm" + std::to_string(i), f);
        for (auto& l : loe) l.visit(p + ".loe", f);
    }
};

struct DecoderGroup {
    std::vector<SAVSSMWeights> blocks;
    std::vector<LoEWeights> loe;

    void visit(const std::string& p, const ParamVisitor& f) {
        for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit(p + ".savssm" + std::to_string(i), f);
        for (auto& l : loe) l.visit(p + ".loe", f);
    }
};

/// Two [conv3x3 + SiLU, nearest x2] stages, then conv3x3 to RGB.
struct SynthesisHead {
    Tensor conv1_weight, conv1_bias;
    Tensor conv2_weight, conv2_bias;
    Tensor out_weight, out_bias;

    void visit(const std::string& p, const ParamVisitor& f) {
        f(p + ".conv1.weight", conv1_weight);
        f(p + ".conv1.bias", conv1_bias);
        f(p + ".conv2.weight", conv2_weight);
        f(p + ".conv2.bias", conv2_bias);
        f(p + ".out.weight", out_weight);
        f(p + ".out.bias", out_bias);
    }
};

/// Analytic parameter count of a configuration, independent of any instance.
inline std::size_t parameter_count(const ModelConfig& cfg) {
    const std::size_t C = cfg.channels, E = cfg.expanded, N = cfg.state_dim, k2 = cfg.sconv_kernel * cfg.sconv_kernel;
    const std::size_t hidden = std::max<std::size_t>(1, C / cfg.se_reduction);
    const std::size_t projections = 2 * N * E + E * E + E;
    const std::size_t vssm = E * C + E * 9 + 4 * (projections + N * E + E) + C * E;
    const std::size_t savssm = (2 * C * C + 2 * C) + E * C + (E * k2 * C + E * k2) +
                               4 * (projections + (N * E * C + N * E) + (E * C + E)) + (2 * E * C + 2 * E) + C * E +
                               (C * C + C);
    const std::size_t loe = cfg.local_enhance ? C * C * 9 + (hidden * C + hidden) + (C * hidden + C) : 0;
    const std::size_t encoder = (C * 3 * 16 + C) + (cfg.conv_only ? 0 : cfg.encoder_depth * vssm) + loe;
    const std::size_t decoder = cfg.groups * ((cfg.conv_only ? 0 : cfg.blocks_per_group * savssm) + loe);
    const std::size_t head = 2 * (C * C * 9 + C) + (3 * C * 9 + 3);
    return 2 * encoder + decoder + head;
}

/// Content encoder, style encoder and style-aware decoder. Every weight is
/// registered under a stable dotted name for checkpointing.
class SaMamModel {
public:
    explicit SaMamModel(ModelConfig cfg = ModelConfig::desk()) : cfg_(std::move(cfg)) {
        cfg_.validate();
        std::mt19937_64 rng(cfg_.seed);
        content_ = make_encoder(rng);
        style_ = make_encoder(rng);
        const std::size_t C = cfg_.channels;
        for (std::size_t g = 0; g < cfg_.groups; ++g) {
            DecoderGroup group;
            if (!cfg_.conv_only)
                for (std::size_t b = 0; b < cfg_.blocks_per_group; ++b)
                    group.blocks.push_back(make_savssm(C, cfg_.expanded, cfg_.state_dim, cfg_.sconv_kernel, rng,
                                                       cfg_.zero_init_pre_sain));
            if (cfg_.local_enhance) group.loe.push_back(make_loe(C, cfg_.se_reduction, rng));
            groups_.push_back(std::move(group));
        }
        head_.conv1_weight = kaiming_uniform({C, C, 3, 3}, C * 9, rng);
        head_.conv1_bias = Tensor::zeros({C}, true);
        head_.conv2_weight = kaiming_uniform({C, C, 3, 3}, C * 9, rng);
        head_.conv2_bias = Tensor::zeros({C}, true);
        head_.out_weight = kaiming_uniform({3, C, 3, 3}, C * 9, rng, 1.0);
        head_.out_bias = Tensor::full({3}, 0.5, true);

        auto collect = [this](const std::string& name, Tensor& t) {
            for (const auto& [n, _] : named_)
                if (n == name) fail("duplicate parameter name ", name);
            named_.emplace_back(name, t);
        };
        content_.visit("content_encoder", collect);
        style_.visit("style_encoder", collect);
        for (std::size_t g = 0; g < groups_.size(); ++g) groups_[g].visit("decoder.group" + std::to_string(g), collect);
        head_.visit("decoder.head", collect);
    }

    const ModelConfig& config() const { return cfg_; }

    /// patch embed -> encoder_depth x VSSM -> LoE.
    Tensor encode(const Tensor& img, Encoder which) const {
        const EncoderWeights& w = which == Encoder::content ? content_ : style_;
        Tensor x = patch_embed(img, w.patch_weight, w.patch_bias);
        for (const auto& block : w.blocks) x = vssm_forward(x, block, cfg_.scan_mode, cfg_.discretization);
        for (const auto& l : w.loe) x = local_enhance(x, l, !cfg_.conv_only);
        return x;
    }

    /// SAVSSG stack (each followed by LoE) and the synthesis head. The raw,
    /// unclamped image is returned.
    Tensor decode(const Tensor& content_features, const StyleEmbedding& style) const {
        if (content_features.rank() != 3 || content_features.dim(0) != cfg_.channels)
            fail("decode: expected [", cfg_.channels, ",H,W] features, got ", shape_str(content_features.shape()));
        if (style.pooled.shape() != Shape{cfg_.channels})
            fail("decode: style embedding has ", style.pooled.numel(), " channels, model expects ", cfg_.channels);
        Tensor x = content_features;
        for (const auto& group : groups_) {
            for (const auto& block : group.blocks)
                x = savssm_forward(x, style, block, cfg_.scan_mode, cfg_.discretization);
            for (const auto& l : group.loe) x = local_enhance(x, l, !cfg_.conv_only);
        }
        x = upsample_nearest2x(silu(conv2d(x, head_.conv1_weight, head_.conv1_bias)));
        x = upsample_nearest2x(silu(conv2d(x, head_.conv2_weight, head_.conv2_bias)));
        return conv2d(x, head_.out_weight, head_.out_bias);
    }

    StyleEmbedding style_embedding(const Tensor& style_img) const {
        return StyleEmbedding::from_features(encode(style_img, Encoder::style));
    }

    Tensor stylize(const Tensor& content_img, const Tensor& style_img) const {
        return decode(encode(content_img, Encoder::content), style_embedding(style_img));
    }

    const std::vector<std::pair<std::string, Tensor>>& named_parameters() const { return named_; }

    std::vector<Tensor> parameters() const {
        std::vector<Tensor> out;
        out.reserve(named_.size());
        for (const auto& [_, t] : named_) out.push_back(t);
        return out;
    }

    std::size_t parameter_total() const {
        std::size_t n = 0;
        for (const auto& [_, t] : named_) n += t.numel();
        return n;
    }

    void zero_grad() const {
        for (auto t : parameters()) t.zero_grad();
    }

    /// Looks up a parameter by name; throws if absent.
    Tensor parameter(const std::string& name) const {
        for (const auto& [n, t] : named_)
            if (n == name) return t;
        fail("no parameter named ", name);
    }

private:
    template <class Rng>
    EncoderWeights make_encoder(Rng& rng) {
        const std::size_t C = cfg_.channels;
        EncoderWeights w;
        w.patch_weight = kaiming_uniform({C, 3, 4, 4}, 48, rng);
        w.patch_bias = Tensor::zeros({C}, true);
        if (!cfg_.conv_only)
            for (std::size_t i = 0; i < cfg_.encoder_depth; ++i)
                w.blocks.push_back(make_vssm(C, cfg_.expanded, cfg_.state_dim, rng));
        if (cfg_.local_enhance) w.loe.push_back(make_loe(C, cfg_.se_reduction, rng));
        return w;
    }

    ModelConfig cfg_;
    EncoderWeights content_;
    EncoderWeights style_;
    std::vector<DecoderGroup> groups_;
    SynthesisHead head_;
    std::vector<std::pair<std::string, Tensor>> named_;
};

/// Gradient-magnitude receptive field of one output pixel.
struct Heatmap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> values;  // row-major, normalized so the maximum is 1

    double at(std::size_t r, std::size_t c) const { return values[r * width + c]; }
};

/// Effective receptive field of the centre output pixel: |d out(centre) /
/// d content(r, c)| summed over channels, normalized to [0, 1]. The content
/// and style images are seeded uniform noise. Model parameter gradients are
/// cleared afterwards.
inline Heatmap erf_map(const SaMamModel& model, std::size_t size, std::uint64_t seed = 0) {
    if (size == 0 || size % 4 != 0) fail("erf_map: size must be a positive multiple of 4, got ", size);
    std::mt19937_64 rng(seed);
    Tensor content = Tensor::uniform({3, size, size}, 0.0, 1.0, rng, true);
    const Tensor style = Tensor::uniform({3, size, size}, 0.0, 1.0, rng);
    const Tensor out = model.stylize(content, style);
    const std::size_t centre = (size / 2) * size + size / 2;
    auto index = std::make_shared<std::vector<std::size_t>>();
    for (std::size_t c = 0; c < 3; ++c) index->push_back(c * size * size + centre);
    sum(take(out, index, {3})).backward();
    model.zero_grad();

    Heatmap map{size, size, std::vector<double>(size * size, 0.0)};
    const auto g = content.grad();
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < size * size; ++i) map.values[i] += std::abs(g[c * size * size + i]);
    const double peak = *std::max_element(map.values.begin(), map.values.end());
    if (peak > 0.0)
        for (auto& v : map.values) v /= peak;
    return map;
}

}  // namespace samam
