#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "samam/network.hpp"

namespace samam {

/// Frozen multi-stage convolutional feature network standing in for a
/// pretrained perceptual network. Feature index 0 is the input image itself;
/// index k >= 1 is the output of stage k (conv3x3 + ReLU, stride 2 after the
/// first stage).
class FeatureExtractor {
public:
    struct Stage {
        Tensor weight;  // [Cout, Cin, 3, 3]
        Tensor bias;    // [Cout]
        std::size_t stride = 1;
    };

    std::vector<std::size_t> content_layers{3};
    std::vector<std::size_t> style_layers{1, 2, 3, 4};
    std::vector<std::size_t> identity_layers{1, 2, 3, 4};

    FeatureExtractor() = default;

    /// Random fixed weights, He-uniform, deterministic in `seed`.
    static FeatureExtractor random(std::uint64_t seed, std::vector<std::size_t> widths = {8, 16, 32, 64}) {
        FeatureExtractor fx;
        std::mt19937_64 rng(seed);
        std::size_t in = 3;
        for (std::size_t i = 0; i < widths.size(); ++i) {
            Tensor w = kaiming_uniform({widths[i], in, 3, 3}, in * 9, rng);
            w.set_requires_grad(false);
            fx.stages_.push_back({w, Tensor::zeros({widths[i]}), i == 0 ? 1u : 2u});
            in = widths[i];
        }
        return fx;
    }

    /// No stages: the only feature is the image. All layer sets point at it.
    static FeatureExtractor identity() {
        FeatureExtractor fx;
        fx.content_layers = fx.style_layers = fx.identity_layers = {0};
        return fx;
    }

    /// Replaces the stage weights, e.g. with externally trained ones.
    void load_stages(std::vector<Stage> stages) {
        std::size_t in = 3;
        for (auto& s : stages) {
            if (s.weight.rank() != 4 || s.weight.dim(1) != in || s.bias.shape() != Shape{s.weight.dim(0)})
                fail("feature extractor stage has weight ", shape_str(s.weight.shape()), " for ", in,
                     " input channels");
            s.weight = s.weight.detach();
            s.bias = s.bias.detach();
            in = s.weight.dim(0);
        }
        stages_ = std::move(stages);
    }

    std::size_t depth() const { return stages_.size(); }
    const std::vector<Stage>& stages() const { return stages_; }

    /// Features 0..depth(); stops early once `last` has been produced.
    std::vector<Tensor> extract(const Tensor& img, std::size_t last) const {
        if (last > depth()) fail("feature extractor has ", depth(), " stages, layer ", last, " requested");
        std::vector<Tensor> feats{img};
        for (std::size_t i = 0; i < last; ++i) {
            const auto& s = stages_[i];
            feats.push_back(relu(conv2d(feats.back(), s.weight, s.bias, {.stride = s.stride})));
        }
        return feats;
    }

    std::size_t deepest_layer() const {
        std::size_t m = 0;
        for (const auto* set : {&content_layers, &style_layers, &identity_layers})
            for (auto l : *set) m = std::max(m, l);
        return m;
    }

private:
    std::vector<Stage> stages_;
};

struct LossWeights {
    double style = 10.0;
    double identity_pixel = 1.0;
    double identity_feature = 50.0;
};

/// Spread statistic used by the style term.
enum class SpreadStat { std_dev, variance };

struct LossParts {
    Tensor content;
    Tensor style;
    Tensor identity_pixel;
    Tensor identity_feature;
    Tensor total;
};

namespace detail {

inline std::pair<Tensor, Tensor> channel_stats(const Tensor& f, SpreadStat spread, double eps = 1e-5) {
    const std::size_t c = f.dim(0);
    const Tensor mu = channel_mean(f);
    const Tensor var = channel_mean(square(f - reshape(mu, {c, 1, 1})));
    return {mu, spread == SpreadStat::std_dev ? samam::sqrt(var + eps) : var};
}

inline Tensor feature_distance(const std::vector<Tensor>& a, const std::vector<Tensor>& b,
                               const std::vector<std::size_t>& layers) {
    Tensor acc = Tensor::scalar(0.0);
    for (auto l : layers) {
        if (a[l].shape() != b[l].shape())
            fail("feature layer ", l, " shapes differ: ", shape_str(a[l].shape()), " vs ", shape_str(b[l].shape()));
        acc = acc + l2_norm(a[l] - b[l]);
    }
    return acc;
}

inline Tensor style_distance(const std::vector<Tensor>& a, const std::vector<Tensor>& b,
                             const std::vector<std::size_t>& layers, SpreadStat spread) {
    Tensor acc = Tensor::scalar(0.0);
    for (auto l : layers) {
        const auto [mu_a, sd_a] = channel_stats(a[l], spread);
        const auto [mu_b, sd_b] = channel_stats(b[l], spread);
        acc = acc + l2_norm(mu_a - mu_b) + l2_norm(sd_a - sd_b);
    }
    return acc;
}

}  // namespace detail

/// Sum over content layers of ||phi(generated) - phi(content)||_2.
inline Tensor content_loss(const Tensor& generated, const Tensor& content, const FeatureExtractor& fx) {
    if (generated.shape() != content.shape())
        fail("content_loss: image shapes differ, ", shape_str(generated.shape()), " vs ", shape_str(content.shape()));
    const std::size_t last = fx.deepest_layer();
    return detail::feature_distance(fx.extract(generated, last), fx.extract(content, last), fx.content_layers);
}

/// Sum over style layers of the distances between per-channel means and
/// spreads. The two images may differ in size.
inline Tensor style_loss(const Tensor& generated, const Tensor& style, const FeatureExtractor& fx,
                         SpreadStat spread = SpreadStat::std_dev) {
    const std::size_t last = fx.deepest_layer();
    return detail::style_distance(fx.extract(generated, last), fx.extract(style, last), fx.style_layers, spread);
}

/// (pixel identity, feature identity) for stylize(I_c, I_c) and stylize(I_s, I_s).
inline std::pair<Tensor, Tensor> identity_losses(const SaMamModel& model, const Tensor& content, const Tensor& style,
                                                 const FeatureExtractor& fx) {
    const Tensor cc = model.stylize(content, content);
    const Tensor ss = model.stylize(style, style);
    const Tensor pixel = l2_norm(cc - content) + l2_norm(ss - style);
    const std::size_t last = fx.deepest_layer();
    const Tensor feature = detail::feature_distance(fx.extract(cc, last), fx.extract(content, last), fx.identity_layers) +
                           detail::feature_distance(fx.extract(ss, last), fx.extract(style, last), fx.identity_layers);
    return {pixel, feature};
}

/// L = L_c + w_s L_s + w_id1 L_id1 + w_id2 L_id2.
inline Tensor total_loss(const Tensor& content, const Tensor& style, const Tensor& identity_pixel,
                         const Tensor& identity_feature, const LossWeights& w = {}) {
    return content + style * w.style + identity_pixel * w.identity_pixel + identity_feature * w.identity_feature;
}

/// All four terms for one (content, style) pair, sharing encoder passes:
/// two content encodes, two style encodes and three decodes.
inline LossParts compute_losses(const SaMamModel& model, const FeatureExtractor& fx, const Tensor& content,
                                const Tensor& style, const LossWeights& w = {},
                                SpreadStat spread = SpreadStat::std_dev) {
    const Tensor fc = model.encode(content, Encoder::content);
    const Tensor fs = model.encode(style, Encoder::content);
    const StyleEmbedding sc = model.style_embedding(content);
    const StyleEmbedding ss = model.style_embedding(style);

    const Tensor cs = model.decode(fc, ss);
    const Tensor cc = model.decode(fc, sc);
    const Tensor s2 = model.decode(fs, ss);

    const std::size_t last = fx.deepest_layer();
    std::vector<Tensor> f_content, f_style;
    {
        NoGradGuard ng;
        f_content = fx.extract(content.detach(), last);
        f_style = fx.extract(style.detach(), last);
    }
    const auto f_cs = fx.extract(cs, last);
    const auto f_cc = fx.extract(cc, last);
    const auto f_ss = fx.extract(s2, last);

    LossParts parts;
    parts.content = detail::feature_distance(f_cs, f_content, fx.content_layers);
    parts.style = detail::style_distance(f_cs, f_style, fx.style_layers, spread);
    parts.identity_pixel = l2_norm(cc - content.detach()) + l2_norm(s2 - style.detach());
    parts.identity_feature = detail::feature_distance(f_cc, f_content, fx.identity_layers) +
                             detail::feature_distance(f_ss, f_style, fx.identity_layers);
    parts.total = total_loss(parts.content, parts.style, parts.identity_pixel, parts.identity_feature, w);
    return parts;
}

}  // namespace samam
