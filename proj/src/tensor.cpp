// Copyright (c) 2026, The mole-advice Authors
// SPDX-License-Identifier: Apache-2.0

#include "mole/tensor.hpp"

#include <algorithm>
#include <functional>
#include <random>
#include <sstream>
#include <unordered_set>

#include "mole/errors.hpp"

namespace mole {

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {
thread_local bool g_no_grad = false;
}

NoGradGuard::NoGradGuard() : previous_(g_no_grad) { g_no_grad = true; }
NoGradGuard::~NoGradGuard() { g_no_grad = previous_; }
bool NoGradGuard::active() { return g_no_grad; }

std::vector<double>& ensure_grad(TensorImpl& t) {
    if (!t.grad) t.grad.emplace(t.data.size(), 0.0);
    return *t.grad;
}

Tensor::Tensor() : impl_(std::make_shared<TensorImpl>()) {}

Tensor::Tensor(Shape shape, double fill) : impl_(std::make_shared<TensorImpl>()) {
    for (auto d : shape) {
        if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
    }
    impl_->data.assign(numel(shape), fill);
    impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
    for (auto d : shape) {
        if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
    }
    if (numel(shape) != data.size()) {
        throw ShapeError("shape " + shape_str(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double v, bool requires_grad) { return Tensor({}, {v}, requires_grad); }

Tensor Tensor::from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty() || rows.front().empty()) throw ShapeError("from_rows: empty matrix");
    const std::size_t cols = rows.front().size();
    std::vector<double> flat;
    flat.reserve(rows.size() * cols);
    for (const auto& r : rows) {
        if (r.size() != cols) throw ShapeError("from_rows: ragged rows");
        flat.insert(flat.end(), r.begin(), r.end());
    }
    return Tensor({rows.size(), cols}, std::move(flat));
}

Tensor Tensor::randn(Shape shape, double stddev, std::uint64_t seed) {
    Tensor t(std::move(shape));
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : t.data()) v = dist(rng);
    return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= impl_->shape.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(impl_->shape));
    }
    return impl_->shape[axis];
}

double Tensor::item() const {
    if (impl_->data.size() != 1) throw ShapeError("item() on non-scalar " + shape_str(impl_->shape));
    return impl_->data[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
    if (rank() != 2) throw ShapeError("at(row, col) needs a matrix, got " + shape_str(shape()));
    return impl_->data.at(row * impl_->shape[1] + col);
}

Tensor& Tensor::set_requires_grad(bool on) {
    impl_->requires_grad = on;
    return *this;
}

std::span<const double> Tensor::grad() const {
    if (!impl_->grad) return {};
    return *impl_->grad;
}

std::span<double> Tensor::mutable_grad() { return ensure_grad(*impl_); }

void Tensor::zero_grad() {
    if (impl_->grad) std::fill(impl_->grad->begin(), impl_->grad->end(), 0.0);
}

Tensor Tensor::clone() const {
    return Tensor(impl_->shape, impl_->data, impl_->requires_grad);
}

Tensor Tensor::detach() const { return Tensor(impl_->shape, impl_->data, false); }

ComputeGraph ComputeGraph::trace(const Tensor& root) {
    ComputeGraph g;
    std::unordered_set<const Node*> seen;
    // Iterative post-order DFS; graphs for long sequences are deep.
    struct Frame {
        std::shared_ptr<Node> node;
        std::size_t next_input;
    };
    std::vector<Frame> stack;
    if (root.grad_fn()) {
        stack.push_back({root.grad_fn(), 0});
        seen.insert(root.grad_fn().get());
    }
    while (!stack.empty()) {
        auto& top = stack.back();
        if (top.next_input < top.node->inputs.size()) {
            const auto& in = top.node->inputs[top.next_input++];
            if (in->grad_fn && seen.insert(in->grad_fn.get()).second) {
                stack.push_back({in->grad_fn, 0});
            }
            continue;
        }
        g.nodes_.push_back(top.node);
        stack.pop_back();
    }
    return g;
}

void Tensor::backward() const {
    if (impl_->data.size() != 1) {
        throw ContractError("backward() requires a scalar loss, got shape " + shape_str(impl_->shape));
    }
    if (!impl_->requires_grad) return;
    auto graph = ComputeGraph::trace(*this);
    auto& seed = ensure_grad(*impl_);
    seed[0] += 1.0;
    const auto& nodes = graph.nodes();
    for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
        auto out = (*it)->output.lock();
        if (!out || !out->grad) continue;
        (*it)->backward(*out->grad);
    }
}

}  // namespace mole
