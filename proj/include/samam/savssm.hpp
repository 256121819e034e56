#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <string>

#include "samam/ops.hpp"
#include "samam/scan_order.hpp"
#include "samam/ssm.hpp"

namespace samam {

using ParamVisitor = std::function<void(const std::string& name, Tensor& param)>;

/// Uniform(-b, b) with b = gain * sqrt(3 / fan_in); gain sqrt(2) is the
/// Kaiming rule for rectifier-like activations.
template <class Rng>
Tensor kaiming_uniform(Shape shape, std::size_t fan_in, Rng& rng, double gain = std::sqrt(2.0)) {
    const double bound = gain * std::sqrt(3.0 / static_cast<double>(fan_in));
    return Tensor::uniform(std::move(shape), -bound, bound, rng, true);
}

/// Style feature map E_s [C,Hs,Ws] and its spatial mean, which is the only
/// view of the style that the embedders consume.
struct StyleEmbedding {
    Tensor features;
    Tensor pooled;

    static StyleEmbedding from_features(const Tensor& features) {
        if (features.rank() != 3) fail("style embedding must be [C,Hs,Ws], got ", shape_str(features.shape()));
        return {features, channel_mean(features)};
    }
};

/// Single affine map from the pooled style vector to module parameters.
struct Embedder {
    Tensor weight;  // [out, C]
    Tensor bias;    // [out]
    bool zero_init = false;

    static Embedder zeros(std::size_t out, std::size_t in) {
        return {Tensor::zeros({out, in}, true), Tensor::zeros({out}, true), true};
    }

    template <class Rng>
    static Embedder random(std::size_t out, std::size_t in, Rng& rng, double gain = 1.0) {
        return {kaiming_uniform({out, in}, in, rng, gain), Tensor::zeros({out}, true), false};
    }

    std::size_t out_dim() const { return weight.dim(0); }

    Tensor operator()(const Tensor& pooled) const {
        if (pooled.shape() != Shape{weight.dim(1)})
            fail("embedder expects a [", weight.dim(1), "] style vector, got ", shape_str(pooled.shape()));
        return reshape(matmul(weight, reshape(pooled, {weight.dim(1), 1})), {weight.dim(0)}) + bias;
    }

    void visit(const std::string& prefix, const ParamVisitor& f) {
        f(prefix + ".weight", weight);
        f(prefix + ".bias", bias);
    }
};

/// Dense layer with weight [out, in] and optional bias [out].
struct Linear {
    Tensor weight;
    Tensor bias;

    template <class Rng>
    static Linear random(std::size_t out, std::size_t in, Rng& rng, bool with_bias, double gain = 1.0) {
        Linear l{kaiming_uniform({out, in}, in, rng, gain), {}};
        if (with_bias) l.bias = Tensor::zeros({out}, true);
        return l;
    }

    /// x [in, H, W] -> [out, H, W]
    Tensor on_channels(const Tensor& x) const {
        if (x.rank() != 3 || x.dim(0) != weight.dim(1))
            fail("linear expects [", weight.dim(1), ",H,W], got ", shape_str(x.shape()));
        const std::size_t h = x.dim(1), w = x.dim(2);
        Tensor y = matmul(weight, reshape(x, {x.dim(0), h * w}));
        if (bias.defined()) y = y + reshape(bias, {weight.dim(0), 1});
        return reshape(y, {weight.dim(0), h, w});
    }

    /// v [in] -> [out]
    Tensor on_vector(const Tensor& v) const {
        Tensor y = reshape(matmul(weight, reshape(v, {v.numel(), 1})), {weight.dim(0)});
        return bias.defined() ? y + bias : y;
    }

    void visit(const std::string& prefix, const ParamVisitor& f) {
        f(prefix + ".weight", weight);
        if (bias.defined()) f(prefix + ".bias", bias);
    }
};

// --------------------------------------------------------- style-aware units

/// Style-aware instance norm: (gamma, beta) = split(emb(pooled)) and
/// out = gamma * IN(x) + beta per channel.
inline Tensor sain(const Tensor& x, const StyleEmbedding& style, const Embedder& emb, double eps = 1e-5) {
    const std::size_t d = x.dim(0);
    if (emb.out_dim() != 2 * d)
        fail("sain: embedder produces ", emb.out_dim(), " values, need ", 2 * d, " for ", d, " channels");
    const Tensor params = emb(style.pooled);
    const Tensor gamma = reshape(slice(params, 0, d), {d, 1, 1});
    const Tensor beta = reshape(slice(params, d, 2 * d), {d, 1, 1});
    return gamma * instance_norm(x, eps) + beta;
}

/// Style-predicted depthwise convolution with k x k kernels.
inline Tensor sconv(const Tensor& x, const StyleEmbedding& style, const Embedder& emb, std::size_t kernel = 3) {
    const std::size_t e = x.dim(0);
    if (emb.out_dim() != e * kernel * kernel)
        fail("sconv: embedder produces ", emb.out_dim(), " values, need ", e * kernel * kernel);
    const Tensor k = reshape(emb(style.pooled), {e, 1, kernel, kernel});
    return conv2d(x, k, {}, {.stride = 1, .padding = -1, .groups = e});
}

/// Style-aware channel modulation: x scaled per channel by sigmoid(emb(pooled)).
inline Tensor scm(const Tensor& x, const StyleEmbedding& style, const Embedder& emb) {
    const std::size_t c = x.dim(0);
    if (emb.out_dim() != c) fail("scm: embedder produces ", emb.out_dim(), " values for ", c, " channels");
    return x * reshape(sigmoid(emb(style.pooled)), {c, 1, 1});
}

// ------------------------------------------------------------- scan blocks

/// Plain selective-scan path with learned constant A = -exp(a_log) and D.
struct S6Weights {
    ssm::SelectiveProjections proj;
    Tensor a_log;  // [N, E]
    Tensor d;      // [E]

    void visit(const std::string& p, const ParamVisitor& f) {
        f(p + ".proj_B", proj.proj_b);
        f(p + ".proj_C", proj.proj_c);
        f(p + ".proj_delta", proj.proj_delta);
        f(p + ".delta_bias", proj.delta_bias);
        f(p + ".A_log", a_log);
        f(p + ".D", d);
    }
};

/// Style-aware path: A and D are predicted from the style.
struct S7Weights {
    ssm::SelectiveProjections proj;
    Embedder emb_a;  // C -> N*E
    Embedder emb_d;  // C -> E

    void visit(const std::string& p, const ParamVisitor& f) {
        f(p + ".proj_B", proj.proj_b);
        f(p + ".proj_C", proj.proj_c);
        f(p + ".proj_delta", proj.proj_delta);
        f(p + ".delta_bias", proj.delta_bias);
        emb_a.visit(p + ".embed_A", f);
        emb_d.visit(p + ".embed_D", f);
    }
};

namespace detail {

template <class Rng>
ssm::SelectiveProjections make_projections(std::size_t n, std::size_t e, Rng& rng) {
    return {kaiming_uniform({n, e}, e, rng, 1.0), kaiming_uniform({n, e}, e, rng, 1.0),
            kaiming_uniform({e, e}, e, rng, 1.0), ssm::init_delta_bias(e, rng)};
}

inline double inverse_softplus(double y) { return y + std::log(-std::expm1(-y)); }

}  // namespace detail

/// S7: selective scan whose A = -softplus(Embedder_A(style)) and D = Embedder_D(style).
inline Tensor s7_block(const Tensor& x_seq, const StyleEmbedding& style, const S7Weights& w,
                       ssm::Discretization mode = ssm::Discretization::simplified) {
    const std::size_t e = x_seq.dim(1);
    const std::size_t n = w.proj.proj_b.dim(0);
    if (w.emb_a.out_dim() != n * e || w.emb_d.out_dim() != e)
        fail("s7_block: embedders produce ", w.emb_a.out_dim(), " / ", w.emb_d.out_dim(), " values, need ", n * e,
             " / ", e);
    const Tensor a = -softplus(reshape(w.emb_a(style.pooled), {n, e}));
    const Tensor d = w.emb_d(style.pooled);
    return ssm::selective_scan(x_seq, w.proj, a, d, mode);
}

struct SAVSSMWeights {
    Embedder sain_pre;   // C -> 2C
    Linear in;           // C -> E, bias-free
    Embedder sconv;      // C -> E*k*k
    std::array<S7Weights, 4> paths;
    Embedder sain_post;  // C -> 2E
    Linear out;          // E -> C, bias-free
    Embedder scm;        // C -> C
    std::size_t kernel = 3;

    std::size_t channels() const { return in.weight.dim(1); }
    std::size_t expanded() const { return in.weight.dim(0); }

    void visit(const std::string& p, const ParamVisitor& f) {
        sain_pre.visit(p + ".sain_pre", f);
        in.visit(p + ".in_proj", f);
        sconv.visit(p + ".sconv", f);
        for (std::size_t i = 0; i < 4; ++i) paths[i].visit(p + ".path" + std::to_string(i), f);
        sain_post.visit(p + ".sain_post", f);
        out.visit(p + ".out_proj", f);
        scm.visit(p + ".scm", f);
    }
};

/// Fresh SAVSSM weights. The output-side SAIN and the SCM embedders start at
/// exactly zero; the input-side SAIN starts at (gamma, beta) = (1, 0) unless
/// `zero_pre_sain` is set, in which case it is zeroed as well.
template <class Rng>
SAVSSMWeights make_savssm(std::size_t c, std::size_t e, std::size_t n, std::size_t kernel, Rng& rng,
                          bool zero_pre_sain = false) {
    SAVSSMWeights w;
    w.kernel = kernel;
    w.sain_pre = Embedder::zeros(2 * c, c);
    if (!zero_pre_sain) {
        auto b = w.sain_pre.bias.data();
        for (std::size_t i = 0; i < c; ++i) b[i] = 1.0;
        w.sain_pre.zero_init = false;
    }
    w.in = Linear::random(e, c, rng, false);
    w.sconv = Embedder::random(e * kernel * kernel, c, rng, 1.0 / static_cast<double>(kernel));
    {
        auto b = w.sconv.bias.data();
        const std::size_t centre = (kernel / 2) * kernel + kernel / 2;
        for (std::size_t ch = 0; ch < e; ++ch) b[ch * kernel * kernel + centre] = 1.0;
    }
    for (auto& p : w.paths) {
        p.proj = detail::make_projections(n, e, rng);
        p.emb_a = Embedder::random(n * e, c, rng, 0.5);
        auto ab = p.emb_a.bias.data();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < e; ++j) ab[i * e + j] = detail::inverse_softplus(static_cast<double>(i + 1));
        p.emb_d = Embedder::random(e, c, rng, 0.5);
        for (auto& v : p.emb_d.bias.data()) v = 1.0;
    }
    w.sain_post = Embedder::zeros(2 * e, c);
    w.out = Linear::random(c, e, rng, false);
    w.scm = Embedder::zeros(c, c);
    return w;
}

/// Style-aware vision state-space module:
///   SAIN -> Linear(C->E) -> SiLU(SConv) -> four {gather, S7, merge} paths
///   -> sum -> SAIN -> Linear(E->C), plus SCM applied to the block input.
inline Tensor savssm_forward(const Tensor& content, const StyleEmbedding& style, const SAVSSMWeights& w,
                             ScanMode mode = ScanMode::zigzag,
                             ssm::Discretization disc = ssm::Discretization::simplified) {
    if (content.rank() != 3 || content.dim(0) != w.channels())
        fail("savssm: expected [", w.channels(), ",H,W] content, got ", shape_str(content.shape()));
    const std::size_t h = content.dim(1), wd = content.dim(2);
    Tensor x = sain(content, style, w.sain_pre);
    x = w.in.on_channels(x);
    x = silu(sconv(x, style, w.sconv, w.kernel));

    const auto paths = cached_scan_paths(mode, h, wd);
    Tensor acc;
    for (std::size_t p = 0; p < 4; ++p) {
        const ScanPath& path = (*paths)[p];
        Tensor y = merge(s7_block(gather(x, path), style, w.paths[p], disc), path);
        acc = acc.defined() ? acc + y : y;
    }
    const Tensor mixed = sain(acc, style, w.sain_post);
    return w.out.on_channels(mixed) + scm(content, style, w.scm);
}

struct VSSMWeights {
    Linear in;         // C -> E, bias-free
    Tensor dw_kernel;  // [E, 1, 3, 3]
    std::array<S6Weights, 4> paths;
    Linear out;        // E -> C, bias-free

    void visit(const std::string& p, const ParamVisitor& f) {
        in.visit(p + ".in_proj", f);
        f(p + ".dwconv", dw_kernel);
        for (std::size_t i = 0; i < 4; ++i) paths[i].visit(p + ".path" + std::to_string(i), f);
        out.visit(p + ".out_proj", f);
    }
};

template <class Rng>
VSSMWeights make_vssm(std::size_t c, std::size_t e, std::size_t n, Rng& rng) {
    VSSMWeights w;
    w.in = Linear::random(e, c, rng, false);
    w.dw_kernel = kaiming_uniform({e, 1, 3, 3}, 9, rng);
    for (auto& p : w.paths) {
        p.proj = detail::make_projections(n, e, rng);
        std::vector<double> a_log(n * e);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < e; ++j) a_log[i * e + j] = std::log(static_cast<double>(i + 1));
        p.a_log = Tensor({n, e}, std::move(a_log), true);
        p.d = Tensor::full({e}, 1.0, true);
    }
    w.out = Linear::random(c, e, rng, false);
    return w;
}

/// Style-free encoder block: Linear -> DWConv + SiLU -> four S6 paths -> sum
/// -> per-token channel layer norm -> Linear, with an identity residual.
inline Tensor vssm_forward(const Tensor& x, const VSSMWeights& w, ScanMode mode = ScanMode::zigzag,
                           ssm::Discretization disc = ssm::Discretization::simplified) {
    if (x.rank() != 3 || x.dim(0) != w.in.weight.dim(1))
        fail("vssm: expected [", w.in.weight.dim(1), ",H,W] input, got ", shape_str(x.shape()));
    const std::size_t e = w.in.weight.dim(0);
    Tensor z = w.in.on_channels(x);
    z = silu(conv2d(z, w.dw_kernel, {}, {.stride = 1, .padding = -1, .groups = e}));
    const auto paths = cached_scan_paths(mode, x.dim(1), x.dim(2));
    Tensor acc;
    for (std::size_t p = 0; p < 4; ++p) {
        const ScanPath& path = (*paths)[p];
        const Tensor a = -samam::exp(w.paths[p].a_log);
        Tensor y = merge(ssm::selective_scan(gather(z, path), w.paths[p].proj, a, w.paths[p].d, disc), path);
        acc = acc.defined() ? acc + y : y;
    }
    return w.out.on_channels(channel_layer_norm(acc)) + x;
}

struct LoEWeights {
    Tensor conv;       // [C, C, 3, 3], bias-free
    Linear se_reduce;  // C -> C/r
    Linear se_expand;  // C/r -> C

    void visit(const std::string& p, const ParamVisitor& f) {
        f(p + ".conv", conv);
        se_reduce.visit(p + ".se_reduce", f);
        se_expand.visit(p + ".se_expand", f);
    }
};

template <class Rng>
LoEWeights make_loe(std::size_t c, std::size_t reduction, Rng& rng) {
    const std::size_t hidden = std::max<std::size_t>(1, c / reduction);
    return {kaiming_uniform({c, c, 3, 3}, c * 9, rng), Linear::random(hidden, c, rng, true),
            Linear::random(c, hidden, rng, true)};
}

/// Local enhancement: y = x + SE(conv3x3(x)), where SE rescales channels by
/// sigmoid(W2 relu(W1 avgpool + b1) + b2). Without attention: y = x + conv3x3(x).
inline Tensor local_enhance(const Tensor& x, const LoEWeights& w, bool attention = true) {
    if (x.rank() != 3 || x.dim(0) != w.conv.dim(0))
        fail("local_enhance: expected [", w.conv.dim(0), ",H,W] input, got ", shape_str(x.shape()));
    Tensor c = conv2d(x, w.conv);
    if (attention) {
        const Tensor s = sigmoid(w.se_expand.on_vector(relu(w.se_reduce.on_vector(channel_mean(c)))));
        c = c * reshape(s, {x.dim(0), 1, 1});
    }
    return x + c;
}

}  // namespace samam
