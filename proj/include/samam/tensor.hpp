#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <unordered_set>
#include <utility>
#include <vector>

#include "samam/error.hpp"

namespace samam {

namespace detail {

struct Node;
using BackwardFn = std::function<void(Node& self)>;

// One vertex of the reverse-mode tape. Activations are retained for the
// lifetime of the graph; `grad` stays empty until a backward pass touches it.
struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;  // positional; optional inputs leave a null slot
    BackwardFn backward;

    bool is_leaf() const { return parents.empty(); }

    std::vector<double>& ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), 0.0);
        return grad;
    }
};

inline thread_local bool grad_enabled = true;

}  // namespace detail

/// Disables tape recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_enabled) { detail::grad_enabled = false; }
    ~NoGradGuard() { detail::grad_enabled = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

inline bool grad_mode_enabled() { return detail::grad_enabled; }

/// Dense row-major array of doubles with optional gradient tracking.
///
/// A Tensor is a handle: copies share the same storage and tape node, so
/// optimizers can update parameters in place through any copy.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, bool requires_grad = false)
        : node_(std::make_shared<detail::Node>()) {
        check_shape(shape);
        node_->data.assign(numel_of(shape), 0.0);
        node_->shape = std::move(shape);
        node_->requires_grad = requires_grad;
    }

    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
        : node_(std::make_shared<detail::Node>()) {
        check_shape(shape);
        if (numel_of(shape) != data.size())
            fail("tensor data length ", data.size(), " does not match shape ", shape_str(shape));
        node_->shape = std::move(shape);
        node_->data = std::move(data);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) { return Tensor(std::move(shape), requires_grad); }

    static Tensor full(Shape shape, double value, bool requires_grad = false) {
        Tensor t(std::move(shape), requires_grad);
        std::fill(t.node_->data.begin(), t.node_->data.end(), value);
        return t;
    }

    static Tensor scalar(double value, bool requires_grad = false) { return full({1}, value, requires_grad); }

    template <class Rng>
    static Tensor uniform(Shape shape, double lo, double hi, Rng& rng, bool requires_grad = false) {
        Tensor t(std::move(shape), requires_grad);
        std::uniform_real_distribution<double> dist(lo, hi);
        for (auto& v : t.node_->data) v = dist(rng);
        return t;
    }

    /// Builds the output of a differentiable op. The backward closure is only
    /// recorded when grad mode is on and some input requires a gradient.
    static Tensor from_op(Shape shape, std::vector<double> data, std::initializer_list<Tensor> inputs,
                          detail::BackwardFn backward) {
        Tensor out(std::move(shape), std::move(data));
        if (!detail::grad_enabled) return out;
        bool any = false;
        for (const auto& in : inputs) any = any || (in.defined() && in.requires_grad());
        if (!any) return out;
        out.node_->requires_grad = true;
        for (const auto& in : inputs) out.node_->parents.push_back(in.node_);
        out.node_->backward = std::move(backward);
        return out;
    }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t numel() const { return node_->data.size(); }

    std::span<double> data() { return node_->data; }
    std::span<const double> data() const { return node_->data; }
    const std::vector<double>& values() const { return node_->data; }

    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const double> grad() const { return node_->grad; }
    std::span<double> mutable_grad() { return node_->ensure_grad(); }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool on) {
        if (!is_leaf()) fail("requires_grad can only be toggled on leaf tensors");
        node_->requires_grad = on;
        return *this;
    }
    bool is_leaf() const { return node_->is_leaf(); }

    double item() const {
        if (numel() != 1) fail("item() on tensor of shape ", shape_str(shape()));
        return node_->data[0];
    }
    double operator[](std::size_t i) const { return node_->data[i]; }

    void zero_grad() { node_->grad.clear(); }

    /// Same values, no history.
    Tensor detach() const { return Tensor(shape(), node_->data); }

    /// Deep copy of values that keeps the requires_grad flag (as a new leaf).
    Tensor clone() const { return Tensor(shape(), node_->data, requires_grad()); }

    /// Reverse-mode sweep from a scalar. Leaf gradients accumulate across
    /// calls; intermediate gradients are reset at the start of each call.
    void backward() const {
        if (numel() != 1) fail("backward() requires a scalar loss, got shape ", shape_str(shape()));
        if (!requires_grad()) return;

        std::vector<detail::Node*> order;
        std::unordered_set<detail::Node*> seen;
        std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
        seen.insert(node_.get());
        while (!stack.empty()) {
            auto& [n, next] = stack.back();
            if (next < n->parents.size()) {
                detail::Node* p = n->parents[next++].get();
                if (p && p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }

        for (auto* n : order)
            if (!n->is_leaf()) n->grad.assign(n->data.size(), 0.0);
        node_->ensure_grad()[0] += 1.0;

        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            detail::Node* n = *it;
            if (!n->is_leaf() && n->backward) n->backward(*n);
        }
    }

    detail::Node* node() const { return node_.get(); }
    bool same_storage(const Tensor& other) const { return node_ == other.node_; }

private:
    static void check_shape(const Shape& s) {
        for (auto d : s)
            if (d == 0) fail("tensor dimensions must be positive, got ", shape_str(s));
    }

    std::shared_ptr<detail::Node> node_;
};

namespace detail {

// Accumulate `g` into a parent's gradient if it participates in the sweep.
inline std::vector<double>* grad_sink(Node& self, std::size_t parent_index) {
    Node* p = self.parents[parent_index].get();
    if (!p || !p->requires_grad) return nullptr;
    return &p->ensure_grad();
}

}  // namespace detail

}  // namespace samam
