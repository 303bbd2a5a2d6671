// Copyright (c) 2026, The mole-advice Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major fp64 tensors with a dynamically recorded compute graph for
// reverse-mode differentiation.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mole {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node;

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::optional<std::vector<double>> grad;
    bool requires_grad = false;
    std::shared_ptr<Node> grad_fn;
};

/// Shared handle to a tensor. Copies alias the same storage; use clone() for a
/// deep copy.
class Tensor {
public:
    Tensor();
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

    static Tensor scalar(double v, bool requires_grad = false);
    static Tensor from_rows(const std::vector<std::vector<double>>& rows);
    static Tensor randn(Shape shape, double stddev, std::uint64_t seed);

    const Shape& shape() const { return impl_->shape; }
    std::size_t dim(std::size_t axis) const;
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t size() const { return impl_->data.size(); }

    std::span<double> data() { return impl_->data; }
    std::span<const double> data() const { return impl_->data; }
    double item() const;
    double at(std::size_t row, std::size_t col) const;

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool on);

    bool has_grad() const { return impl_->grad.has_value(); }
    /// Gradient view; empty span when no gradient has been accumulated.
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();

    bool is_leaf() const { return impl_->grad_fn == nullptr; }
    const std::shared_ptr<Node>& grad_fn() const { return impl_->grad_fn; }

    /// Deep copy of data only; the copy is a fresh leaf.
    Tensor clone() const;
    /// Same data buffer contents, no graph history.
    Tensor detach() const;

    /// Reverse-mode sweep from a scalar. Gradients accumulate additively.
    void backward() const;

    const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

private:
    std::shared_ptr<TensorImpl> impl_;
};

/// One recorded primitive application. The backward closure receives the
/// output gradient and accumulates into the inputs that require it.
struct Node {
    std::string_view op;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::weak_ptr<TensorImpl> output;
    std::function<void(std::span<const double> grad_out)> backward;
};

/// Topologically ordered view of the nodes reachable from a root tensor.
class ComputeGraph {
public:
    static ComputeGraph trace(const Tensor& root);

    /// Inputs of every node precede it.
    const std::vector<std::shared_ptr<Node>>& nodes() const { return nodes_; }

private:
    std::vector<std::shared_ptr<Node>> nodes_;
};

/// While alive on a thread, ops on that thread record no graph nodes.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

    static bool active();

private:
    bool previous_;
};

/// Allocates (zeroed) gradient storage if absent and returns it.
std::vector<double>& ensure_grad(TensorImpl& t);

}  // namespace mole
