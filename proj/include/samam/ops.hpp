#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <numeric>
#include <utility>
#include <vector>

#include "samam/tensor.hpp"

namespace samam {

namespace detail {

inline Shape broadcast_shapes(const Shape& a, const Shape& b) {
    const std::size_t r = std::max(a.size(), b.size());
    Shape out(r);
    for (std::size_t i = 0; i < r; ++i) {
        const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da == db || db == 1) {
            out[i] = da;
        } else if (da == 1) {
            out[i] = db;
        } else {
            fail("shape mismatch: cannot broadcast ", shape_str(a), " with ", shape_str(b));
        }
    }
    return out;
}

// Flat offset into `src` for every element of `out` (src broadcast to out).
inline std::vector<std::size_t> broadcast_offsets(const Shape& src, const Shape& out) {
    const std::size_t r = out.size();
    const std::size_t lead = r - src.size();
    std::vector<std::size_t> stride(r, 0);
    std::size_t s = 1;
    for (std::size_t i = src.size(); i-- > 0;) {
        stride[lead + i] = src[i] == 1 ? 0 : s;
        s *= src[i];
    }
    const std::size_t n = numel_of(out);
    std::vector<std::size_t> offsets(n);
    std::vector<std::size_t> idx(r, 0);
    std::size_t off = 0;
    for (std::size_t k = 0; k < n; ++k) {
        offsets[k] = off;
        for (std::size_t d = r; d-- > 0;) {
            if (++idx[d] < out[d]) {
                off += stride[d];
                break;
            }
            off -= stride[d] * (out[d] - 1);
            idx[d] = 0;
        }
    }
    return offsets;
}

// `partials(x, y, out)` returns {d out/d x, d out/d y}.
template <class Fwd, class Partials>
Tensor binary_op(const Tensor& a, const Tensor& b, Fwd f, Partials partials) {
    const auto& av = a.values();
    const auto& bv = b.values();
    if (a.shape() == b.shape()) {
        std::vector<double> out(av.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i], bv[i]);
        return Tensor::from_op(a.shape(), std::move(out), {a, b}, [a, b, partials](Node& self) {
            auto* ga = grad_sink(self, 0);
            auto* gb = grad_sink(self, 1);
            const auto& x = a.values();
            const auto& y = b.values();
            for (std::size_t i = 0; i < self.data.size(); ++i) {
                const auto [pa, pb] = partials(x[i], y[i], self.data[i]);
                if (ga) (*ga)[i] += self.grad[i] * pa;
                if (gb) (*gb)[i] += self.grad[i] * pb;
            }
        });
    }
    Shape shape = broadcast_shapes(a.shape(), b.shape());
    auto ia = std::make_shared<std::vector<std::size_t>>(broadcast_offsets(a.shape(), shape));
    auto ib = std::make_shared<std::vector<std::size_t>>(broadcast_offsets(b.shape(), shape));
    std::vector<double> out(ia->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[(*ia)[i]], bv[(*ib)[i]]);
    return Tensor::from_op(std::move(shape), std::move(out), {a, b}, [a, b, ia, ib, partials](Node& self) {
        auto* ga = grad_sink(self, 0);
        auto* gb = grad_sink(self, 1);
        const auto& x = a.values();
        const auto& y = b.values();
        for (std::size_t i = 0; i < self.data.size(); ++i) {
            const std::size_t oa = (*ia)[i], ob = (*ib)[i];
            const auto [pa, pb] = partials(x[oa], y[ob], self.data[i]);
            if (ga) (*ga)[oa] += self.grad[i] * pa;
            if (gb) (*gb)[ob] += self.grad[i] * pb;
        }
    });
}

// `deriv(x, y)` returns d y / d x.
template <class Fwd, class Deriv>
Tensor unary_op(const Tensor& a, Fwd f, Deriv deriv) {
    const auto& av = a.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i]);
    return Tensor::from_op(a.shape(), std::move(out), {a}, [a, deriv](Node& self) {
        auto* ga = grad_sink(self, 0);
        if (!ga) return;
        const auto& x = a.values();
        for (std::size_t i = 0; i < self.data.size(); ++i) (*ga)[i] += self.grad[i] * deriv(x[i], self.data[i]);
    });
}

inline double sigmoid_scalar(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double softplus_scalar(double x) { return x > 20.0 ? x : std::log1p(std::exp(x)); }

}  // namespace detail

// ---------------------------------------------------------------- elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        a, b, [](double x, double y) { return x + y; },
        [](double, double, double) { return std::pair{1.0, 1.0}; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        a, b, [](double x, double y) { return x - y; },
        [](double, double, double) { return std::pair{1.0, -1.0}; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        a, b, [](double x, double y) { return x * y; },
        [](double x, double y, double) { return std::pair{y, x}; });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    for (double v : b.values())
        if (v == 0.0) fail("division by exact zero (divisor shape ", shape_str(b.shape()), ")");
    return detail::binary_op(
        a, b, [](double x, double y) { return x / y; },
        [](double, double y, double out) { return std::pair{1.0 / y, -out / y}; });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }

inline Tensor scale(const Tensor& a, double s) {
    return detail::unary_op(
        a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

inline Tensor add_scalar(const Tensor& a, double s) {
    return detail::unary_op(
        a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }
inline Tensor operator-(const Tensor& a, double s) { return add_scalar(a, -s); }
inline Tensor operator-(const Tensor& a) { return scale(a, -1.0); }

inline Tensor exp(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& a) {
    for (double v : a.values())
        if (!(v > 0.0)) fail("log of non-positive value ", v);
    return detail::unary_op(
        a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Tensor sigmoid(const Tensor& a) {
    return detail::unary_op(a, detail::sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}

/// log(1 + e^x); returns x itself above 20 where exp would lose the 1.
inline Tensor softplus(const Tensor& a) {
    return detail::unary_op(a, detail::softplus_scalar, [](double x, double) { return detail::sigmoid_scalar(x); });
}

inline Tensor silu(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return x * detail::sigmoid_scalar(x); },
        [](double x, double) {
            const double s = detail::sigmoid_scalar(x);
            return s + x * s * (1.0 - s);
        });
}

inline Tensor tanh(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Tensor relu(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Tensor square(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Tensor sqrt(const Tensor& a) {
    for (double v : a.values())
        if (v < 0.0) fail("sqrt of negative value ", v);
    return detail::unary_op(
        a, [](double x) { return std::sqrt(x); }, [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

// ------------------------------------------------------------------ structural

inline Tensor reshape(const Tensor& a, Shape shape) {
    if (numel_of(shape) != a.numel())
        fail("reshape: cannot view ", shape_str(a.shape()), " as ", shape_str(shape));
    return Tensor::from_op(std::move(shape), a.values(), {a}, [](detail::Node& self) {
        if (auto* ga = detail::grad_sink(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i];
    });
}

inline Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) fail("transpose expects a matrix, got ", shape_str(a.shape()));
    const std::size_t m = a.dim(0), n = a.dim(1);
    const auto& av = a.values();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
    return Tensor::from_op({n, m}, std::move(out), {a}, [m, n](detail::Node& self) {
        if (auto* ga = detail::grad_sink(self, 0))
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) (*ga)[i * n + j] += self.grad[j * m + i];
    });
}

/// Rows [begin, end) along the leading axis.
inline Tensor slice(const Tensor& a, std::size_t begin, std::size_t end) {
    if (begin >= end || end > a.dim(0))
        fail("slice [", begin, ",", end, ") out of range for shape ", shape_str(a.shape()));
    const std::size_t inner = a.numel() / a.dim(0);
    Shape shape = a.shape();
    shape[0] = end - begin;
    std::vector<double> out(a.values().begin() + static_cast<std::ptrdiff_t>(begin * inner),
                            a.values().begin() + static_cast<std::ptrdiff_t>(end * inner));
    return Tensor::from_op(std::move(shape), std::move(out), {a}, [begin, inner](detail::Node& self) {
        if (auto* ga = detail::grad_sink(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[begin * inner + i] += self.grad[i];
    });
}

/// out.flat[i] = a.flat[index[i]]; the adjoint scatters back.
inline Tensor take(const Tensor& a, std::shared_ptr<const std::vector<std::size_t>> index, Shape shape) {
    if (numel_of(shape) != index->size())
        fail("take: index length ", index->size(), " does not match shape ", shape_str(shape));
    const auto& av = a.values();
    std::vector<double> out(index->size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const std::size_t k = (*index)[i];
        if (k >= av.size()) fail("take: index ", k, " out of range for shape ", shape_str(a.shape()));
        out[i] = av[k];
    }
    return Tensor::from_op(std::move(shape), std::move(out), {a}, [index](detail::Node& self) {
        if (auto* ga = detail::grad_sink(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[(*index)[i]] += self.grad[i];
    });
}

// ----------------------------------------------------------------- reductions

inline Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    return Tensor::from_op({1}, {s}, {a}, [](detail::Node& self) {
        if (auto* ga = detail::grad_sink(self, 0))
            for (auto& g : *ga) g += self.grad[0];
    });
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

/// Mean over every axis but the first: [C, ...] -> [C].
inline Tensor channel_mean(const Tensor& a) {
    if (a.rank() < 2) fail("channel_mean expects rank >= 2, got ", shape_str(a.shape()));
    const std::size_t c = a.dim(0), n = a.numel() / c;
    const auto& av = a.values();
    std::vector<double> out(c, 0.0);
    for (std::size_t k = 0; k < c; ++k) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += av[k * n + i];
        out[k] = s / static_cast<double>(n);
    }
    return Tensor::from_op({c}, std::move(out), {a}, [c, n](detail::Node& self) {
        if (auto* ga = detail::grad_sink(self, 0))
            for (std::size_t k = 0; k < c; ++k) {
                const double g = self.grad[k] / static_cast<double>(n);
                for (std::size_t i = 0; i < n; ++i) (*ga)[k * n + i] += g;
            }
    });
}

/// Euclidean norm of all entries. The adjoint at the origin is taken as zero.
inline Tensor l2_norm(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v * v;
    const double norm = std::sqrt(s);
    return Tensor::from_op({1}, {norm}, {a}, [a](detail::Node& self) {
        auto* ga = detail::grad_sink(self, 0);
        const double n = self.data[0];
        if (!ga || n == 0.0) return;
        const double g = self.grad[0] / n;
        const auto& x = a.values();
        for (std::size_t i = 0; i < x.size(); ++i) (*ga)[i] += g * x[i];
    });
}

// ---------------------------------------------------------------- linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        fail("matmul: inner dimensions differ, ", shape_str(a.shape()), " x ", shape_str(b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), p = b.dim(1);
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<double> out(m * p, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        double* row = out.data() + i * p;
        for (std::size_t t = 0; t < k; ++t) {
            const double s = av[i * k + t];
            if (s == 0.0) continue;
            const double* brow = bv.data() + t * p;
            for (std::size_t j = 0; j < p; ++j) row[j] += s * brow[j];
        }
    }
    return Tensor::from_op({m, p}, std::move(out), {a, b}, [a, b, m, k, p](detail::Node& self) {
        const auto& g = self.grad;
        if (auto* ga = detail::grad_sink(self, 0)) {
            const auto& bv = b.values();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t t = 0; t < k; ++t) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < p; ++j) s += g[i * p + j] * bv[t * p + j];
                    (*ga)[i * k + t] += s;
                }
        }
        if (auto* gb = detail::grad_sink(self, 1)) {
            const auto& av = a.values();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t t = 0; t < k; ++t) {
                    const double s = av[i * k + t];
                    if (s == 0.0) continue;
                    for (std::size_t j = 0; j < p; ++j) (*gb)[t * p + j] += s * g[i * p + j];
                }
        }
    });
}

// ------------------------------------------------------------------- imaging

struct Conv2dOptions {
    std::size_t stride = 1;
    int padding = -1;  // -1 selects "same" padding (odd kernels only)
    std::size_t groups = 1;
};

namespace detail {

// Output columns [lo, hi) whose input column ox*stride + k - pad lies in [0, size).
inline std::pair<std::size_t, std::size_t> valid_range(std::size_t out, std::size_t size, std::size_t k,
                                                       std::size_t pad, std::size_t stride) {
    const long long off = static_cast<long long>(k) - static_cast<long long>(pad);
    const long long s = static_cast<long long>(stride);
    long long lo = off >= 0 ? 0 : (-off + s - 1) / s;
    long long hi = (static_cast<long long>(size) - 1 - off);
    hi = hi < 0 ? 0 : hi / s + 1;
    hi = std::min<long long>(hi, static_cast<long long>(out));
    if (lo > hi) lo = hi;
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

}  // namespace detail

/// Grouped 2D cross-correlation with zero padding.
/// x: [Cin, H, W], w: [Cout, Cin/groups, kh, kw], bias: [Cout] or undefined.
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias = {}, Conv2dOptions opt = {}) {
    if (x.rank() != 3 || w.rank() != 4)
        fail("conv2d expects x [C,H,W] and w [Co,Ci/g,kh,kw], got ", shape_str(x.shape()), " and ",
             shape_str(w.shape()));
    const std::size_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const std::size_t cout = w.dim(0), cig = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    const std::size_t groups = opt.groups;
    if (groups == 0 || cin % groups != 0 || cout % groups != 0 || cig != cin / groups)
        fail("conv2d: channel/group mismatch, input ", shape_str(x.shape()), ", kernel ", shape_str(w.shape()),
             ", groups ", groups);
    if (opt.stride == 0) fail("conv2d: stride must be >= 1");
    if (bias.defined() && bias.shape() != Shape{cout})
        fail("conv2d: bias shape ", shape_str(bias.shape()), " does not match ", cout, " output channels");
    std::size_t ph = 0, pw = 0;
    if (opt.padding < 0) {
        if (kh % 2 == 0 || kw % 2 == 0) fail("conv2d: same padding needs odd kernel, got ", kh, "x", kw);
        ph = (kh - 1) / 2;
        pw = (kw - 1) / 2;
    } else {
        ph = pw = static_cast<std::size_t>(opt.padding);
    }
    if (h + 2 * ph < kh || wd + 2 * pw < kw)
        fail("conv2d: kernel ", kh, "x", kw, " larger than padded input ", shape_str(x.shape()));
    const std::size_t s = opt.stride;
    const std::size_t ho = (h + 2 * ph - kh) / s + 1, wo = (wd + 2 * pw - kw) / s + 1;
    const std::size_t cog = cout / groups;

    const auto& xv = x.values();
    const auto& wv = w.values();
    std::vector<double> out(cout * ho * wo, 0.0);
    for (std::size_t co = 0; co < cout; ++co) {
        double* op = out.data() + co * ho * wo;
        if (bias.defined()) std::fill(op, op + ho * wo, bias.values()[co]);
        const std::size_t g = co / cog;
        for (std::size_t cl = 0; cl < cig; ++cl) {
            const double* ip = xv.data() + (g * cig + cl) * h * wd;
            for (std::size_t ky = 0; ky < kh; ++ky) {
                const auto [ylo, yhi] = detail::valid_range(ho, h, ky, ph, s);
                for (std::size_t kx = 0; kx < kw; ++kx) {
                    const double wt = wv[((co * cig + cl) * kh + ky) * kw + kx];
                    const auto [xlo, xhi] = detail::valid_range(wo, wd, kx, pw, s);
                    for (std::size_t oy = ylo; oy < yhi; ++oy) {
                        const double* irow = ip + static_cast<std::ptrdiff_t>((oy * s + ky - ph) * wd + kx) -
                                             static_cast<std::ptrdiff_t>(pw);
                        double* orow = op + oy * wo;
                        for (std::size_t ox = xlo; ox < xhi; ++ox) orow[ox] += wt * irow[ox * s];
                    }
                }
            }
        }
    }

    return Tensor::from_op(
        {cout, ho, wo}, std::move(out), {x, w, bias},
        [x, w, cin, h, wd, cout, cig, kh, kw, ph, pw, s, ho, wo, cog](detail::Node& self) {
            auto* gx = detail::grad_sink(self, 0);
            auto* gw = detail::grad_sink(self, 1);
            auto* gb = detail::grad_sink(self, 2);
            const auto& xv = x.values();
            const auto& wv = w.values();
            for (std::size_t co = 0; co < cout; ++co) {
                const double* gp = self.grad.data() + co * ho * wo;
                if (gb) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < ho * wo; ++i) acc += gp[i];
                    (*gb)[co] += acc;
                }
                const std::size_t g = co / cog;
                for (std::size_t cl = 0; cl < cig; ++cl) {
                    const std::size_t ci = g * cig + cl;
                    const double* ip = xv.data() + ci * h * wd;
                    for (std::size_t ky = 0; ky < kh; ++ky) {
                        const auto [ylo, yhi] = detail::valid_range(ho, h, ky, ph, s);
                        for (std::size_t kx = 0; kx < kw; ++kx) {
                            const std::size_t widx = ((co * cig + cl) * kh + ky) * kw + kx;
                            const double wt = wv[widx];
                            const auto [xlo, xhi] = detail::valid_range(wo, wd, kx, pw, s);
                            double acc = 0.0;
                            for (std::size_t oy = ylo; oy < yhi; ++oy) {
                                const std::ptrdiff_t ibase = static_cast<std::ptrdiff_t>((oy * s + ky - ph) * wd + kx) -
                                                             static_cast<std::ptrdiff_t>(pw);
                                const double* grow = gp + oy * wo;
                                if (gw)
                                    for (std::size_t ox = xlo; ox < xhi; ++ox)
                                        acc += grow[ox] * ip[ibase + static_cast<std::ptrdiff_t>(ox * s)];
                                if (gx) {
                                    double* gxrow = gx->data() + static_cast<std::ptrdiff_t>(ci * h * wd) + ibase;
                                    for (std::size_t ox = xlo; ox < xhi; ++ox)
                                        gxrow[static_cast<std::ptrdiff_t>(ox * s)] += wt * grow[ox];
                                }
                            }
                            if (gw) (*gw)[widx] += acc;
                        }
                    }
                }
            }
            (void)cin;
        });
}

/// Per-channel spatial standardization with biased variance.
inline Tensor instance_norm(const Tensor& x, double eps = 1e-5) {
    if (x.rank() < 2) fail("instance_norm expects [C, ...], got ", shape_str(x.shape()));
    const std::size_t c = x.dim(0), n = x.numel() / c;
    if (n < 2) fail("instance_norm needs at least 2 spatial positions, got shape ", shape_str(x.shape()));
    const auto& xv = x.values();
    std::vector<double> out(xv.size());
    auto inv_std = std::make_shared<std::vector<double>>(c);
    for (std::size_t k = 0; k < c; ++k) {
        const double* p = xv.data() + k * n;
        double mu = 0.0;
        for (std::size_t i = 0; i < n; ++i) mu += p[i];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) var += (p[i] - mu) * (p[i] - mu);
        var /= static_cast<double>(n);
        const double inv = 1.0 / std::sqrt(var + eps);
        (*inv_std)[k] = inv;
        for (std::size_t i = 0; i < n; ++i) out[k * n + i] = (p[i] - mu) * inv;
    }
    return Tensor::from_op(x.shape(), std::move(out), {x}, [c, n, inv_std](detail::Node& self) {
        auto* gx = detail::grad_sink(self, 0);
        if (!gx) return;
        const double nn = static_cast<double>(n);
        for (std::size_t k = 0; k < c; ++k) {
            const double* g = self.grad.data() + k * n;
            const double* y = self.data.data() + k * n;
            double sg = 0.0, sgy = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                sg += g[i];
                sgy += g[i] * y[i];
            }
            const double inv = (*inv_std)[k];
            for (std::size_t i = 0; i < n; ++i) (*gx)[k * n + i] += inv * (g[i] - sg / nn - y[i] * sgy / nn);
        }
    });
}

/// Per-position standardization across channels of [C, ...] with biased
/// variance; no affine parameters.
inline Tensor channel_layer_norm(const Tensor& x, double eps = 1e-5) {
    if (x.rank() < 2) fail("channel_layer_norm expects [C, ...], got ", shape_str(x.shape()));
    const std::size_t c = x.dim(0), n = x.numel() / c;
    const auto& xv = x.values();
    std::vector<double> out(xv.size());
    auto inv_std = std::make_shared<std::vector<double>>(n);
    for (std::size_t i = 0; i < n; ++i) {
        double mu = 0.0;
        for (std::size_t k = 0; k < c; ++k) mu += xv[k * n + i];
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t k = 0; k < c; ++k) var += (xv[k * n + i] - mu) * (xv[k * n + i] - mu);
        var /= static_cast<double>(c);
        const double inv = 1.0 / std::sqrt(var + eps);
        (*inv_std)[i] = inv;
        for (std::size_t k = 0; k < c; ++k) out[k * n + i] = (xv[k * n + i] - mu) * inv;
    }
    return Tensor::from_op(x.shape(), std::move(out), {x}, [c, n, inv_std](detail::Node& self) {
        auto* gx = detail::grad_sink(self, 0);
        if (!gx) return;
        const double cc = static_cast<double>(c);
        for (std::size_t i = 0; i < n; ++i) {
            double sg = 0.0, sgy = 0.0;
            for (std::size_t k = 0; k < c; ++k) {
                sg += self.grad[k * n + i];
                sgy += self.grad[k * n + i] * self.data[k * n + i];
            }
            const double inv = (*inv_std)[i];
            for (std::size_t k = 0; k < c; ++k)
                (*gx)[k * n + i] += inv * (self.grad[k * n + i] - sg / cc - self.data[k * n + i] * sgy / cc);
        }
    });
}

/// Nearest-neighbour 2x upsampling of [C, H, W].
inline Tensor upsample_nearest2x(const Tensor& x) {
    if (x.rank() != 3) fail("upsample expects [C,H,W], got ", shape_str(x.shape()));
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const auto& xv = x.values();
    std::vector<double> out(c * 4 * h * w);
    for (std::size_t k = 0; k < c; ++k)
        for (std::size_t y = 0; y < 2 * h; ++y)
            for (std::size_t z = 0; z < 2 * w; ++z)
                out[(k * 2 * h + y) * 2 * w + z] = xv[(k * h + y / 2) * w + z / 2];
    return Tensor::from_op({c, 2 * h, 2 * w}, std::move(out), {x}, [c, h, w](detail::Node& self) {
        if (auto* gx = detail::grad_sink(self, 0))
            for (std::size_t k = 0; k < c; ++k)
                for (std::size_t y = 0; y < 2 * h; ++y)
                    for (std::size_t z = 0; z < 2 * w; ++z)
                        (*gx)[(k * h + y / 2) * w + z / 2] += self.grad[(k * 2 * h + y) * 2 * w + z];
    });
}

}  // namespace samam
