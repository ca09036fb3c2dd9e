// Copyright (c) 2026, peftport authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors with reverse-mode automatic differentiation.
//
// A Tensor is a shared handle to a graph node. Operations on tensors that
// require gradients record their inputs and a backward rule; calling
// backward() on a scalar result walks the reachable nodes in reverse
// construction order. The graph is rebuilt on every forward pass.
//
// Arithmetic runs in double precision. Trainable parameters are kept on the
// float32 grid (see snap_to_float32) so that files holding 32-bit payloads
// round-trip bit-exactly.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace peftport {

using Scalar = double;
using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {

struct Node {
    std::uint64_t id = 0;
    Shape shape;
    std::vector<Scalar> data;
    std::vector<Scalar> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    Scalar* grad_buffer();
};

}  // namespace detail

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, bool requires_grad = false);
    Tensor(Shape shape, std::vector<Scalar> values, bool requires_grad = false);

    static Tensor scalar(Scalar value);
    static Tensor filled(Shape shape, Scalar value);

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const;
    std::size_t dim(std::size_t axis) const;
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const Scalar> data() const;
    std::span<Scalar> mutable_data();
    Scalar item() const;
    Scalar at(std::size_t row, std::size_t col) const;

    bool requires_grad() const;
    void set_requires_grad(bool value);
    bool has_grad() const;
    std::span<const Scalar> grad() const;
    void zero_grad();

    // Copy of the data with no graph history.
    Tensor detach() const;
    Tensor reshape(Shape shape) const;

    void backward() const;

    const std::shared_ptr<detail::Node>& node() const noexcept { return node_; }
    bool same_node(const Tensor& other) const noexcept { return node_ == other.node_; }

private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    friend Tensor make_op_result(Shape, std::vector<Scalar>, std::vector<Tensor>,
                                 std::function<void(detail::Node&)>);

    std::shared_ptr<detail::Node> node_;
};

// Builds an operation output. When gradients are disabled or no input
// requires them, history is dropped.
Tensor make_op_result(Shape shape, std::vector<Scalar> data, std::vector<Tensor> inputs,
                      std::function<void(detail::Node&)> backward);

bool grad_enabled() noexcept;

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Rounds every element onto the float32 grid in place.
void snap_to_float32(Tensor& t);
bool all_finite(const Tensor& t);

// ---------------------------------------------------------------------------
// Operations. All shape errors throw Error(ShapeMismatch) or Error(RankError).

Tensor matmul(const Tensor& a, const Tensor& b);
// a · bᵀ
Tensor matmul_bt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Same shape, or `b` a row vector ([n] or [1×n]) broadcast over the rows of `a`.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Scalar factor);

Tensor gelu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);

enum class Activation { Gelu, Tanh, Relu };
Tensor activate(const Tensor& x, Activation act);
std::string to_string(Activation act);
Activation activation_from_string(const std::string& name);

// Row-wise softmax. With `causal_offset`, column j of row i is visible iff
// j <= i + *causal_offset.
Tensor softmax_rows(const Tensor& x, std::optional<std::size_t> causal_offset = std::nullopt);
Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       Scalar eps = 1e-5);

Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);
Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor concat_rows(std::span<const Tensor> parts);

// (a ⊗ b)[i·r + k, j·s + l] = a[i, j] · b[k, l]
Tensor kronecker(const Tensor& a, const Tensor& b);

Tensor sum(const Tensor& x);
Tensor add_scalars(std::span<const Tensor> scalars);

// factor · Σ_i −log softmax(logits_i)[target_i]
Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> targets, Scalar factor);
// Mean cross-entropy over the rows.
Tensor softmax_ce_loss(const Tensor& logits, std::span<const std::int32_t> targets);

struct Moments {
    double mean = 0.0;
    double variance = 0.0;
};

// Population mean and variance over all elements.
Moments moments(const Tensor& t);

}  // namespace peftport
