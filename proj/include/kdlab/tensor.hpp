// Copyright (c) 2026 The kdlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense float64 tensors with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle onto a shared graph node. Operations record
// their inputs and a backward closure when any input requires a gradient
// (and gradient recording is enabled for the current thread). backward()
// walks the reachable graph in reverse topological order exactly once per
// node. Leaf gradients accumulate across backward() calls until zero_grad().

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace kdlab {

using Shape = std::vector<std::size_t>;

class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct Node;
}

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const Shape& shape() const;
    std::size_t dim(std::size_t axis) const;
    std::size_t rank() const { return shape().size(); }
    std::size_t size() const;

    std::span<const double> values() const;
    std::span<double> mutable_values();
    // Empty span when no gradient buffer is attached.
    std::span<const double> grad() const;
    std::span<double> mutable_grad();

    double item() const;
    double at(std::size_t flat_index) const { return values()[flat_index]; }

    bool requires_grad() const;
    void set_requires_grad(bool flag);
    void zero_grad();
    std::uint64_t node_id() const;

    // Same values, fresh leaf node with no history.
    Tensor detach() const;
    // Deep copy of values into a new leaf (keeps requires_grad).
    Tensor clone() const;

    void backward() const;

    detail::Node* node() const noexcept { return node_.get(); }

private:
    friend struct TensorAccess;
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::Node> node_;
};

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled() noexcept;

// ---- operations -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
// Batched over the leading axis: [G,m,k] x [G,k,n] -> [G,m,n].
Tensor bmm(const Tensor& a, const Tensor& b);
// [G,m,k] x [G,n,k]^T -> [G,m,n].
Tensor bmm_nt(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
// [n,d] + [d], bias broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& bias);

Tensor gelu(const Tensor& x);
Tensor softmax(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// Row gather from a [V,d] table (embedding lookup, first-position pooling).
Tensor gather_rows(const Tensor& table, std::span<const int> rows);
Tensor reshape(const Tensor& x, Shape shape);
// [B*T, h*dh] <-> [B*h, T, dh]
Tensor split_heads(const Tensor& x, std::size_t batch, std::size_t seq, std::size_t heads);
Tensor merge_heads(const Tensor& x, std::size_t batch, std::size_t seq, std::size_t heads);

// Inverted dropout; identity when p == 0.
Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor mse(const Tensor& a, const Tensor& b);
// Mean negative log-likelihood of targets under row-wise softmax of [n,C] logits.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);

// ---- verification ---------------------------------------------------------

// Central-difference check of d f / d x. f must rebuild its graph from the
// current values of x on every call. Returns the max relative error
// |g_ad - g_fd| / max(1, |g_ad|, |g_fd|) over the entries of x.
double grad_check(const std::function<Tensor()>& f, Tensor x, double h = 1e-5);
double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double h = 1e-5);

}  // namespace kdlab
