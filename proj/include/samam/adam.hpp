#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "samam/tensor.hpp"

namespace samam {

struct AdamState {
    std::size_t step = 0;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;

    AdamState() = default;
    explicit AdamState(double learning_rate) : lr(learning_rate) {}
};

/// One bias-corrected Adam update of every parameter from its accumulated
/// gradient. Parameters that never received a gradient buffer are left
/// untouched, moments included. Moments are allocated on the first step.
inline void adam_step(std::vector<Tensor>& params, AdamState& state) {
    if (!(state.lr > 0.0) || !(state.beta1 > 0.0 && state.beta1 < 1.0) || !(state.beta2 > 0.0 && state.beta2 < 1.0) ||
        !(state.eps > 0.0))
        fail("adam: invalid hyperparameters");
    if (state.m.empty() && state.step == 0) {
        for (const auto& p : params) {
            state.m.emplace_back(p.numel(), 0.0);
            state.v.emplace_back(p.numel(), 0.0);
        }
    }
    if (state.m.size() != params.size() || state.v.size() != params.size())
        fail("adam: state holds ", state.m.size(), " moment buffers for ", params.size(), " parameters");
    for (std::size_t i = 0; i < params.size(); ++i)
        if (state.m[i].size() != params[i].numel() || state.v[i].size() != params[i].numel())
            fail("adam: moment buffer ", i, " has ", state.m[i].size(), " entries, parameter has shape ",
                 shape_str(params[i].shape()));

    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        if (!p.has_grad()) continue;
        auto data = p.data();
        auto g = p.grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t k = 0; k < data.size(); ++k) {
            m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
            v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
            const double mhat = m[k] / c1;
            const double vhat = v[k] / c2;
            data[k] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

inline void zero_grads(std::vector<Tensor>& params) {
    for (auto& p : params) p.zero_grad();
}

}  // namespace samam
