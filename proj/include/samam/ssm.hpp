#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <random>
#include <span>
#include <thread>
#include <vector>

#include "samam/ops.hpp"

namespace samam::ssm {

/// How the continuous (A, B) pair becomes per-token (Abar, Bbar).
/// `simplified` keeps Abar = exp(delta*A) but uses Bbar = delta*B;
/// `zoh` uses the exact zero-order-hold input matrix.
enum class Discretization { simplified, zoh };

struct Discretized {
    std::vector<double> a_bar;
    std::vector<double> b_bar;
};

namespace detail {

// expm1(d*a)/a and its partials, with the a -> 0 limit handled by series.
struct ZohTerm {
    double value, d_delta, d_a;
};

inline ZohTerm zoh_term(double delta, double a) {
    const double z = delta * a;
    if (a == 0.0) return {delta, 1.0, 0.5 * delta * delta};
    if (std::abs(z) < 1e-4) {
        const double d2 = delta * delta;
        return {delta + 0.5 * a * d2 + a * a * d2 * delta / 6.0, std::exp(z),
                0.5 * d2 + a * d2 * delta / 3.0 + a * a * d2 * d2 / 8.0};
    }
    const double e = std::exp(z);
    const double em1 = std::expm1(z);
    return {em1 / a, e, (z * e - em1) / (a * a)};
}

}  // namespace detail

/// Exact zero-order hold for a diagonal A: Abar = exp(delta*A) and
/// Bbar = (delta*A)^-1 (exp(delta*A) - 1) delta*B, element-wise. A zero
/// entry takes the analytic limit Bbar = delta*B.
inline Discretized discretize_zoh(std::span<const double> a, std::span<const double> b, double delta) {
    if (!(delta > 0.0)) fail("discretize_zoh: delta must be positive, got ", delta);
    if (a.size() != b.size()) fail("discretize_zoh: A has ", a.size(), " entries but B has ", b.size());
    Discretized out{std::vector<double>(a.size()), std::vector<double>(a.size())};
    for (std::size_t n = 0; n < a.size(); ++n) {
        out.a_bar[n] = std::exp(delta * a[n]);
        out.b_bar[n] = detail::zoh_term(delta, a[n]).value * b[n];
    }
    return out;
}

/// Per-token discretization used by the selective scan:
/// Abar[t,n,e] = exp(delta[t,e] * A[n,e]), Bbar[t,n,e] = delta[t,e] * B[t,n].
inline Discretized discretize_simplified(std::span<const double> a, std::span<const double> b,
                                         std::span<const double> delta, std::size_t length, std::size_t state_dim,
                                         std::size_t channels) {
    if (a.size() != state_dim * channels || b.size() != length * state_dim || delta.size() != length * channels)
        fail("discretize_simplified: expected A [", state_dim, ",", channels, "], B [", length, ",", state_dim,
             "], delta [", length, ",", channels, "]; got sizes ", a.size(), ", ", b.size(), ", ", delta.size());
    const std::size_t L = length, N = state_dim, E = channels;
    Discretized out{std::vector<double>(L * N * E), std::vector<double>(L * N * E)};
    for (std::size_t t = 0; t < L; ++t)
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t e = 0; e < E; ++e) {
                const double dt = delta[t * E + e];
                out.a_bar[(t * N + n) * E + e] = std::exp(dt * a[n * E + e]);
                out.b_bar[(t * N + n) * E + e] = dt * b[t * N + n];
            }
    return out;
}

/// Discrete SSM over a length-L sequence of E channels with state size N.
/// Layouts: a_bar, b_bar [L,N,E]; c [L,N]; d [E].
struct DiscreteSSM {
    std::size_t length = 0;
    std::size_t state_dim = 0;
    std::size_t channels = 0;
    std::vector<double> a_bar;
    std::vector<double> b_bar;
    std::vector<double> c;
    std::vector<double> d;

    void validate() const {
        const std::size_t lne = length * state_dim * channels;
        if (length == 0 || state_dim == 0 || channels == 0)
            fail("DiscreteSSM: dimensions must be positive (L=", length, ", N=", state_dim, ", E=", channels, ")");
        if (a_bar.size() != lne || b_bar.size() != lne || c.size() != length * state_dim || d.size() != channels)
            fail("DiscreteSSM: inconsistent buffer sizes for L=", length, ", N=", state_dim, ", E=", channels);
    }

    /// True when every token carries the same Abar, Bbar and C.
    bool time_invariant() const {
        const std::size_t ne = state_dim * channels;
        for (std::size_t t = 1; t < length; ++t) {
            for (std::size_t k = 0; k < ne; ++k)
                if (a_bar[t * ne + k] != a_bar[k] || b_bar[t * ne + k] != b_bar[k]) return false;
            for (std::size_t n = 0; n < state_dim; ++n)
                if (c[t * state_dim + n] != c[n]) return false;
        }
        return true;
    }
};

/// Continuous diagonal SSM: A [N,E] (one diagonal per channel), shared B, C
/// of length N, and skip weights D [E].
struct ContinuousSSM {
    std::size_t state_dim = 0;
    std::size_t channels = 0;
    std::vector<double> a;
    std::vector<double> b;
    std::vector<double> c;
    std::vector<double> d;

    bool stable() const {
        for (double v : a)
            if (!(v < 0.0)) return false;
        return true;
    }

    /// Time-invariant discretization with one timescale per channel,
    /// replicated across `length` tokens.
    DiscreteSSM discretize(std::span<const double> delta, std::size_t length, Discretization mode) const {
        const std::size_t N = state_dim, E = channels;
        if (a.size() != N * E || b.size() != N || c.size() != N || d.size() != E || delta.size() != E)
            fail("ContinuousSSM: inconsistent sizes for N=", N, ", E=", E);
        DiscreteSSM out{length, N, E, std::vector<double>(length * N * E), std::vector<double>(length * N * E),
                        std::vector<double>(length * N), d};
        std::vector<double> col(N);
        for (std::size_t e = 0; e < E; ++e) {
            for (std::size_t n = 0; n < N; ++n) col[n] = a[n * E + e];
            Discretized z = discretize_zoh(col, b, delta[e]);
            for (std::size_t n = 0; n < N; ++n) {
                const double bb = mode == Discretization::zoh ? z.b_bar[n] : delta[e] * b[n];
                for (std::size_t t = 0; t < length; ++t) {
                    out.a_bar[(t * N + n) * E + e] = z.a_bar[n];
                    out.b_bar[(t * N + n) * E + e] = bb;
                }
            }
        }
        for (std::size_t t = 0; t < length; ++t)
            for (std::size_t n = 0; n < N; ++n) out.c[t * N + n] = c[n];
        return out;
    }
};

namespace detail {

// h[t] = Abar[t] h[t-1] + Bbar[t] x[t];  y[t] = C[t] h[t] + D x[t].
// Writes every state into `states` ([L,N,E]) when non-null.
inline void scan_kernel(std::size_t L, std::size_t N, std::size_t E, const double* a_bar, const double* b_bar,
                        const double* c, const double* d, const double* x, double* y, double* states) {
    std::vector<double> h(N * E, 0.0);
    for (std::size_t t = 0; t < L; ++t) {
        const double* xt = x + t * E;
        double* yt = y + t * E;
        for (std::size_t e = 0; e < E; ++e) yt[e] = d[e] * xt[e];
        for (std::size_t n = 0; n < N; ++n) {
            const double* at = a_bar + (t * N + n) * E;
            const double* bt = b_bar + (t * N + n) * E;
            double* hn = h.data() + n * E;
            const double cn = c[t * N + n];
            for (std::size_t e = 0; e < E; ++e) {
                hn[e] = at[e] * hn[e] + bt[e] * xt[e];
                yt[e] += cn * hn[e];
            }
        }
        if (states) std::copy(h.begin(), h.end(), states + t * N * E);
    }
}

}  // namespace detail

/// Sequential evaluation of the recurrence. O(L*N*E) time.
inline std::vector<double> recurrent_scan(const DiscreteSSM& m, std::span<const double> x,
                                          std::vector<double>* states = nullptr) {
    m.validate();
    if (x.size() != m.length * m.channels)
        fail("recurrent_scan: input has ", x.size(), " values, expected [", m.length, ",", m.channels, "]");
    std::vector<double> y(m.length * m.channels);
    if (states) states->assign(m.length * m.state_dim * m.channels, 0.0);
    detail::scan_kernel(m.length, m.state_dim, m.channels, m.a_bar.data(), m.b_bar.data(), m.c.data(), m.d.data(),
                        x.data(), y.data(), states ? states->data() : nullptr);
    return y;
}

/// Global-convolution evaluation y = K * x + D x with the causal kernel
/// K[k] = sum_n C[n] Abar[n]^k Bbar[n]. Only valid for time-invariant
/// parameters; selective (per-token) parameters are rejected.
inline std::vector<double> conv_form(const DiscreteSSM& m, std::span<const double> x) {
    m.validate();
    if (x.size() != m.length * m.channels)
        fail("conv_form: input has ", x.size(), " values, expected [", m.length, ",", m.channels, "]");
    if (!m.time_invariant())
        fail("conv_form: parameters vary across tokens; the convolution form only holds for time-invariant SSMs");
    const std::size_t L = m.length, N = m.state_dim, E = m.channels;
    std::vector<double> kernel(L * E, 0.0);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t e = 0; e < E; ++e) {
            const double a = m.a_bar[n * E + e];
            double p = m.c[n] * m.b_bar[n * E + e];
            for (std::size_t k = 0; k < L; ++k) {
                kernel[k * E + e] += p;
                p *= a;
            }
        }
    std::vector<double> y(L * E, 0.0);
    for (std::size_t t = 0; t < L; ++t)
        for (std::size_t e = 0; e < E; ++e) {
            double acc = m.d[e] * x[t * E + e];
            for (std::size_t k = 0; k <= t; ++k) acc += kernel[k * E + e] * x[(t - k) * E + e];
            y[t * E + e] = acc;
        }
    return y;
}

/// Chunked two-pass evaluation of the same recurrence through its
/// associative form (a2, b2) o (a1, b1) = (a2 a1, a2 b1 + b2). Chunks are
/// scanned independently (optionally on worker threads), then the carried
/// state is propagated across chunk boundaries in order.
inline std::vector<double> associative_scan(const DiscreteSSM& m, std::span<const double> x, std::size_t chunks = 4,
                                            bool threaded = false) {
    m.validate();
    if (x.size() != m.length * m.channels)
        fail("associative_scan: input has ", x.size(), " values, expected [", m.length, ",", m.channels, "]");
    const std::size_t L = m.length, N = m.state_dim, E = m.channels, NE = N * E;
    chunks = std::max<std::size_t>(1, std::min(chunks, L));
    const std::size_t span = (L + chunks - 1) / chunks;

    std::vector<double> local(L * NE);  // state of each chunk started from zero
    std::vector<double> decay(L * NE);  // running product of Abar within the chunk
    auto run_chunk = [&](std::size_t k) {
        const std::size_t t0 = k * span, t1 = std::min(L, t0 + span);
        for (std::size_t t = t0; t < t1; ++t)
            for (std::size_t i = 0; i < NE; ++i) {
                const std::size_t e = i % E;
                const double a = m.a_bar[t * NE + i];
                const double bx = m.b_bar[t * NE + i] * x[t * E + e];
                if (t == t0) {
                    local[t * NE + i] = bx;
                    decay[t * NE + i] = a;
                } else {
                    local[t * NE + i] = a * local[(t - 1) * NE + i] + bx;
                    decay[t * NE + i] = a * decay[(t - 1) * NE + i];
                }
            }
    };
    const std::size_t used = (L + span - 1) / span;
    if (threaded) {
        std::vector<std::jthread> workers;
        for (std::size_t k = 0; k < used; ++k) workers.emplace_back(run_chunk, k);
    } else {
        for (std::size_t k = 0; k < used; ++k) run_chunk(k);
    }

    std::vector<double> carry(NE, 0.0), y(L * E, 0.0);
    for (std::size_t k = 0; k < used; ++k) {
        const std::size_t t0 = k * span, t1 = std::min(L, t0 + span);
        for (std::size_t t = t0; t < t1; ++t) {
            for (std::size_t e = 0; e < E; ++e) y[t * E + e] = m.d[e] * x[t * E + e];
            for (std::size_t i = 0; i < NE; ++i) {
                const double h = local[t * NE + i] + decay[t * NE + i] * carry[i];
                y[t * E + i % E] += m.c[t * N + i / E] * h;
                if (t + 1 == t1) local[t * NE + i] = h;
            }
        }
        std::copy(local.begin() + static_cast<std::ptrdiff_t>((t1 - 1) * NE),
                  local.begin() + static_cast<std::ptrdiff_t>(t1 * NE), carry.begin());
    }
    return y;
}

// ------------------------------------------------------------ differentiable

/// Differentiable recurrent scan. a_bar, b_bar [L,N,E]; c [L,N]; d [E];
/// x [L,E] -> y [L,E]. All hidden states are retained for the adjoint,
/// which runs the recurrence in reverse.
inline Tensor scan(const Tensor& a_bar, const Tensor& b_bar, const Tensor& c, const Tensor& d, const Tensor& x) {
    if (x.rank() != 2 || a_bar.rank() != 3 || c.rank() != 2 || d.rank() != 1)
        fail("scan: expected a_bar [L,N,E], b_bar [L,N,E], c [L,N], d [E], x [L,E]; got ", shape_str(a_bar.shape()),
             ", ", shape_str(b_bar.shape()), ", ", shape_str(c.shape()), ", ", shape_str(d.shape()), ", ",
             shape_str(x.shape()));
    const std::size_t L = x.dim(0), E = x.dim(1), N = a_bar.dim(1);
    if (a_bar.shape() != Shape{L, N, E} || b_bar.shape() != Shape{L, N, E} || c.shape() != Shape{L, N} ||
        d.shape() != Shape{E})
        fail("scan: shape mismatch; a_bar ", shape_str(a_bar.shape()), ", b_bar ", shape_str(b_bar.shape()), ", c ",
             shape_str(c.shape()), ", d ", shape_str(d.shape()), ", x ", shape_str(x.shape()));

    auto states = std::make_shared<std::vector<double>>(L * N * E);
    std::vector<double> y(L * E);
    detail::scan_kernel(L, N, E, a_bar.values().data(), b_bar.values().data(), c.values().data(),
                        d.values().data(), x.values().data(), y.data(), states->data());

    return Tensor::from_op({L, E}, std::move(y), {a_bar, b_bar, c, d, x},
                           [a_bar, b_bar, c, d, x, states, L, N, E](samam::detail::Node& self) {
                               auto* ga = samam::detail::grad_sink(self, 0);
                               auto* gb = samam::detail::grad_sink(self, 1);
                               auto* gc = samam::detail::grad_sink(self, 2);
                               auto* gd = samam::detail::grad_sink(self, 3);
                               auto* gx = samam::detail::grad_sink(self, 4);
                               const auto& av = a_bar.values();
                               const auto& bv = b_bar.values();
                               const auto& cv = c.values();
                               const auto& dv = d.values();
                               const auto& xv = x.values();
                               const auto& hs = *states;
                               const auto& gy = self.grad;
                               std::vector<double> gh(N * E, 0.0);  // adjoint of h[t] carried from t+1
                               for (std::size_t t = L; t-- > 0;) {
                                   const double* gyt = gy.data() + t * E;
                                   const double* xt = xv.data() + t * E;
                                   for (std::size_t e = 0; e < E; ++e) {
                                       if (gd) (*gd)[e] += gyt[e] * xt[e];
                                       if (gx) (*gx)[t * E + e] += gyt[e] * dv[e];
                                   }
                                   for (std::size_t n = 0; n < N; ++n) {
                                       const std::size_t base = (t * N + n) * E;
                                       const double cn = cv[t * N + n];
                                       double* ghn = gh.data() + n * E;
                                       double gcn = 0.0;
                                       for (std::size_t e = 0; e < E; ++e) {
                                           const double h = hs[base + e];
                                           gcn += gyt[e] * h;
                                           const double g = ghn[e] + gyt[e] * cn;
                                           const double hprev = t > 0 ? hs[base - N * E + e] : 0.0;
                                           if (ga) (*ga)[base + e] += g * hprev;
                                           if (gb) (*gb)[base + e] += g * xt[e];
                                           if (gx) (*gx)[t * E + e] += g * bv[base + e];
                                           ghn[e] = g * av[base + e];
                                       }
                                       if (gc) (*gc)[t * N + n] += gcn;
                                   }
                               }
                           });
}

/// Abar [L,N,E] = exp(delta [L,E] (x) A [N,E]).
inline Tensor discretize_a(const Tensor& delta, const Tensor& a) {
    if (delta.rank() != 2 || a.rank() != 2 || delta.dim(1) != a.dim(1))
        fail("discretize_a: delta ", shape_str(delta.shape()), " and A ", shape_str(a.shape()),
             " must be [L,E] and [N,E]");
    const std::size_t L = delta.dim(0), E = delta.dim(1), N = a.dim(0);
    return samam::exp(reshape(delta, {L, 1, E}) * reshape(a, {1, N, E}));
}

/// Exact zero-order-hold input matrix as a fused op:
/// Bbar[t,n,e] = B[t,n] * expm1(delta[t,e] A[n,e]) / A[n,e].
inline Tensor zoh_input(const Tensor& delta, const Tensor& a, const Tensor& b) {
    const std::size_t L = delta.dim(0), E = delta.dim(1), N = a.dim(0);
    if (a.shape() != Shape{N, E} || b.shape() != Shape{L, N})
        fail("zoh_input: delta ", shape_str(delta.shape()), ", A ", shape_str(a.shape()), ", B ", shape_str(b.shape()),
             " inconsistent");
    const auto& dv = delta.values();
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<double> out(L * N * E);
    for (std::size_t t = 0; t < L; ++t)
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t e = 0; e < E; ++e)
                out[(t * N + n) * E + e] = bv[t * N + n] * detail::zoh_term(dv[t * E + e], av[n * E + e]).value;
    return Tensor::from_op({L, N, E}, std::move(out), {delta, a, b}, [delta, a, b, L, N, E](samam::detail::Node& self) {
        auto* gdelta = samam::detail::grad_sink(self, 0);
        auto* ga = samam::detail::grad_sink(self, 1);
        auto* gb = samam::detail::grad_sink(self, 2);
        const auto& dv = delta.values();
        const auto& av = a.values();
        const auto& bv = b.values();
        for (std::size_t t = 0; t < L; ++t)
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t e = 0; e < E; ++e) {
                    const double g = self.grad[(t * N + n) * E + e];
                    const auto z = detail::zoh_term(dv[t * E + e], av[n * E + e]);
                    const double bb = bv[t * N + n];
                    if (gdelta) (*gdelta)[t * E + e] += g * bb * z.d_delta;
                    if (ga) (*ga)[n * E + e] += g * bb * z.d_a;
                    if (gb) (*gb)[t * N + n] += g * z.value;
                }
    });
}

/// Bbar [L,N,E] from delta [L,E], B [L,N] (and A [N,E] for the exact rule).
inline Tensor discretize_b(const Tensor& delta, const Tensor& b, const Tensor& a, Discretization mode) {
    if (mode == Discretization::zoh) return zoh_input(delta, a, b);
    if (delta.rank() != 2 || b.rank() != 2 || delta.dim(0) != b.dim(0))
        fail("discretize_b: delta ", shape_str(delta.shape()), " and B ", shape_str(b.shape()),
             " must be [L,E] and [L,N]");
    const std::size_t L = delta.dim(0), E = delta.dim(1), N = b.dim(1);
    return reshape(delta, {L, 1, E}) * reshape(b, {L, N, 1});
}

/// Input-dependent projections of one selective scan.
struct SelectiveProjections {
    Tensor proj_b;      // [N, E]
    Tensor proj_c;      // [N, E]
    Tensor proj_delta;  // [E, E]
    Tensor delta_bias;  // [E]
};

/// Timescale bias such that softplus(bias) ~ U[0.001, 0.1] per channel.
template <class Rng>
Tensor init_delta_bias(std::size_t channels, Rng& rng) {
    std::uniform_real_distribution<double> dist(0.001, 0.1);
    std::vector<double> v(channels);
    for (auto& b : v) {
        const double dt = dist(rng);
        b = dt + std::log(-std::expm1(-dt));  // inverse softplus
    }
    return Tensor({channels}, std::move(v), true);
}

/// Selective scan: B, C and delta are projected from the input sequence,
/// delta = softplus(x W_delta^T + bias), then the sequence is discretized
/// per token and scanned. x [L,E], A [N,E], D [E] -> y [L,E].
inline Tensor selective_scan(const Tensor& x, const SelectiveProjections& p, const Tensor& a, const Tensor& d,
                             Discretization mode = Discretization::simplified) {
    if (x.rank() != 2) fail("selective_scan: x must be [L,E], got ", shape_str(x.shape()));
    const std::size_t E = x.dim(1);
    if (a.rank() != 2 || a.dim(1) != E || d.shape() != Shape{E} || p.proj_b.shape() != a.shape() ||
        p.proj_c.shape() != a.shape() || p.proj_delta.shape() != Shape{E, E} || p.delta_bias.shape() != Shape{E})
        fail("selective_scan: parameter shapes inconsistent with x ", shape_str(x.shape()), " (A ",
             shape_str(a.shape()), ", D ", shape_str(d.shape()), ")");
    const Tensor b = matmul(x, transpose(p.proj_b));
    const Tensor c = matmul(x, transpose(p.proj_c));
    const Tensor delta = softplus(matmul(x, transpose(p.proj_delta)) + p.delta_bias);
    return scan(discretize_a(delta, a), discretize_b(delta, b, a, mode), c, d, x);
}

}  // namespace samam::ssm
