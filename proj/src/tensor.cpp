// Copyright (c) 2026, peftport authors
// SPDX-License-Identifier: Apache-2.0
//

#include "peftport/tensor.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "peftport/errors.h"

namespace peftport {

namespace {

std::atomic<std::uint64_t> g_next_node_id{1};
thread_local bool t_grad_enabled = true;

std::shared_ptr<detail::Node> new_node(Shape shape, std::vector<Scalar> data) {
    auto node = std::make_shared<detail::Node>();
    node->id = g_next_node_id.fetch_add(1, std::memory_order_relaxed);
    node->shape = std::move(shape);
    node->data = std::move(data);
    return node;
}

void require_rank2(const Tensor& t, const char* op) {
    if (t.rank() != 2) {
        fail(ErrorKind::RankError, std::string(op) + " expects a rank-2 tensor, got " +
                                       shape_to_string(t.shape()));
    }
}

bool is_row_vector_for(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2) {
        return false;
    }
    const std::size_t n = a.cols();
    if (b.rank() == 1) {
        return b.dim(0) == n;
    }
    return b.rank() == 2 && b.rows() == 1 && b.cols() == n && a.rows() != 1;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "x" : "") << shape[i];
    }
    os << ']';
    return os.str();
}

Scalar* detail::Node::grad_buffer() {
    if (grad.empty()) {
        grad.assign(data.size(), 0.0);
    }
    return grad.data();
}

Tensor::Tensor(Shape shape, bool requires_grad) : Tensor(shape, std::vector<Scalar>(shape_numel(shape), 0.0), requires_grad) {}

Tensor::Tensor(Shape shape, std::vector<Scalar> values, bool requires_grad) {
    if (shape.empty() && values.size() != 1) {
        fail(ErrorKind::ShapeMismatch, "scalar tensor needs exactly one value");
    }
    for (std::size_t d : shape) {
        if (d == 0) {
            fail(ErrorKind::ShapeMismatch, "dimension sizes must be positive");
        }
    }
    if (shape.size() > 4) {
        fail(ErrorKind::RankError, "tensors above rank 4 are not supported");
    }
    if (shape_numel(shape) != values.size()) {
        fail(ErrorKind::ShapeMismatch, "shape " + shape_to_string(shape) + " does not match " +
                                           std::to_string(values.size()) + " values");
    }
    node_ = new_node(std::move(shape), std::move(values));
    node_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(Scalar value) {
    return Tensor(Shape{}, std::vector<Scalar>{value});
}

Tensor Tensor::filled(Shape shape, Scalar value) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<Scalar>(n, value));
}

const Shape& Tensor::shape() const {
    return node_->shape;
}

std::size_t Tensor::numel() const {
    return node_->data.size();
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= rank()) {
        fail(ErrorKind::RankError, "axis out of range");
    }
    return node_->shape[axis];
}

std::size_t Tensor::rows() const {
    require_rank2(*this, "rows");
    return node_->shape[0];
}

std::size_t Tensor::cols() const {
    require_rank2(*this, "cols");
    return node_->shape[1];
}

std::span<const Scalar> Tensor::data() const {
    return node_->data;
}

std::span<Scalar> Tensor::mutable_data() {
    return node_->data;
}

Scalar Tensor::item() const {
    if (numel() != 1) {
        fail(ErrorKind::ShapeMismatch, "item() requires a single-element tensor");
    }
    return node_->data[0];
}

Scalar Tensor::at(std::size_t row, std::size_t col) const {
    return node_->data[row * cols() + col];
}

bool Tensor::requires_grad() const {
    return node_->requires_grad;
}

void Tensor::set_requires_grad(bool value) {
    node_->requires_grad = value;
    if (!value) {
        node_->grad.clear();
    }
}

bool Tensor::has_grad() const {
    return !node_->grad.empty();
}

std::span<const Scalar> Tensor::grad() const {
    return node_->grad;
}

void Tensor::zero_grad() {
    node_->grad.clear();
}

Tensor Tensor::detach() const {
    return Tensor(node_->shape, node_->data, false);
}

Tensor Tensor::reshape(Shape shape) const {
    if (shape_numel(shape) != numel()) {
        fail(ErrorKind::ShapeMismatch, "cannot reshape " + shape_to_string(this->shape()) +
                                           " to " + shape_to_string(shape));
    }
    return make_op_result(std::move(shape), node_->data, {*this}, [](detail::Node& out) {
        auto& in = *out.parents[0];
        if (!in.requires_grad) {
            return;
        }
        Scalar* g = in.grad_buffer();
        for (std::size_t i = 0; i < out.grad.size(); ++i) {
            g[i] += out.grad[i];
        }
    });
}

void Tensor::backward() const {
    if (numel() != 1) {
        fail(ErrorKind::ShapeMismatch, "backward() requires a scalar tensor");
    }
    if (!node_->requires_grad) {
        return;
    }
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<detail::Node*> stack{node_.get()};
    while (!stack.empty()) {
        detail::Node* n = stack.back();
        stack.pop_back();
        if (!seen.insert(n).second) {
            continue;
        }
        order.push_back(n);
        for (const auto& p : n->parents) {
            if (p->requires_grad) {
                stack.push_back(p.get());
            }
        }
    }
    std::sort(order.begin(), order.end(),
              [](const detail::Node* a, const detail::Node* b) { return a->id > b->id; });
    node_->grad_buffer()[0] += 1.0;
    for (detail::Node* n : order) {
        if (n->backward && !n->grad.empty()) {
            n->backward(*n);
        }
    }
}

Tensor make_op_result(Shape shape, std::vector<Scalar> data, std::vector<Tensor> inputs,
                      std::function<void(detail::Node&)> backward) {
    auto node = new_node(std::move(shape), std::move(data));
    if (t_grad_enabled) {
        const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                       [](const Tensor& t) { return t.requires_grad(); });
        if (needs) {
            node->requires_grad = true;
            node->parents.reserve(inputs.size());
            for (const auto& t : inputs) {
                node->parents.push_back(t.node());
            }
            node->backward = std::move(backward);
        }
    }
    return Tensor(std::move(node));
}

bool grad_enabled() noexcept {
    return t_grad_enabled;
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) {
    t_grad_enabled = false;
}

NoGradGuard::~NoGradGuard() {
    t_grad_enabled = previous_;
}

void snap_to_float32(Tensor& t) {
    for (Scalar& v : t.mutable_data()) {
        v = static_cast<Scalar>(static_cast<float>(v));
    }
}

bool all_finite(const Tensor& t) {
    return std::all_of(t.data().begin(), t.data().end(), [](Scalar v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------------------

namespace {

// c[m×n] += a[m×k] · b[k×n]
void gemm_nn(const Scalar* a, const Scalar* b, Scalar* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        Scalar* ci = c + i * n;
        const Scalar* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const Scalar av = ai[p];
            const Scalar* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                ci[j] += av * bp[j];
            }
        }
    }
}

// c[m×n] += a[m×k] · b[n×k]ᵀ
void gemm_nt(const Scalar* a, const Scalar* b, Scalar* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const Scalar* ai = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const Scalar* bj = b + j * k;
            Scalar acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                acc += ai[p] * bj[p];
            }
            c[i * n + j] += acc;
        }
    }
}

// c[k×n] += a[m×k]ᵀ · b[m×n]
void gemm_tn(const Scalar* a, const Scalar* b, Scalar* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const Scalar* ai = a + i * k;
        const Scalar* bi = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const Scalar av = ai[p];
            if (av == 0.0) {
                continue;
            }
            Scalar* cp = c + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                cp[j] += av * bi[j];
            }
        }
    }
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
    std::vector<Scalar> out(x.numel());
    const auto in = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = fwd(in[i]);
    }
    return make_op_result(x.shape(), std::move(out), {x}, [deriv](detail::Node& o) {
        auto& p = *o.parents[0];
        Scalar* g = p.grad_buffer();
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
            g[i] += o.grad[i] * deriv(p.data[i], o.data[i]);
        }
    });
}

constexpr Scalar kSqrt2OverPi = 0.7978845608028654;
constexpr Scalar kGeluCubic = 0.044715;

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) {
        fail(ErrorKind::ShapeMismatch, "matmul inner dimensions differ: " + shape_to_string(a.shape()) +
                                           " x " + shape_to_string(b.shape()));
    }
    std::vector<Scalar> out(m * n, 0.0);
    gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
    return make_op_result({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& o) {
        auto& pa = *o.parents[0];
        auto& pb = *o.parents[1];
        if (pa.requires_grad) {
            gemm_nt(o.grad.data(), pb.data.data(), pa.grad_buffer(), m, n, k);
        }
        if (pb.requires_grad) {
            gemm_tn(pa.data.data(), o.grad.data(), pb.grad_buffer(), m, k, n);
        }
    });
}

Tensor matmul_bt(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul_bt");
    require_rank2(b, "matmul_bt");
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    if (b.cols() != k) {
        fail(ErrorKind::ShapeMismatch, "matmul_bt inner dimensions differ: " +
                                           shape_to_string(a.shape()) + " x " +
                                           shape_to_string(b.shape()) + "^T");
    }
    std::vector<Scalar> out(m * n, 0.0);
    gemm_nt(a.data().data(), b.data().data(), out.data(), m, k, n);
    return make_op_result({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& o) {
        auto& pa = *o.parents[0];
        auto& pb = *o.parents[1];
        // dA = dC · B ; dB = dCᵀ · A
        if (pa.requires_grad) {
            gemm_nn(o.grad.data(), pb.data.data(), pa.grad_buffer(), m, n, k);
        }
        if (pb.requires_grad) {
            gemm_tn(o.grad.data(), pa.data.data(), pb.grad_buffer(), m, n, k);
        }
    });
}

Tensor transpose(const Tensor& a) {
    require_rank2(a, "transpose");
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<Scalar> out(m * n);
    const auto in = a.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out[j * m + i] = in[i * n + j];
        }
    }
    return make_op_result({n, m}, std::move(out), {a}, [m, n](detail::Node& o) {
        Scalar* g = o.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                g[i * n + j] += o.grad[j * m + i];
            }
        }
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() == b.shape()) {
        std::vector<Scalar> out(a.numel());
        const auto x = a.data();
        const auto y = b.data();
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] = x[i] + y[i];
        }
        return make_op_result(a.shape(), std::move(out), {a, b}, [](detail::Node& o) {
            for (auto& p : o.parents) {
                if (!p->requires_grad) {
                    continue;
                }
                Scalar* g = p->grad_buffer();
                for (std::size_t i = 0; i < o.grad.size(); ++i) {
                    g[i] += o.grad[i];
                }
            }
        });
    }
    if (!is_row_vector_for(a, b)) {
        fail(ErrorKind::ShapeMismatch, "add: shapes " + shape_to_string(a.shape()) + " and " +
                                           shape_to_string(b.shape()) + " do not broadcast");
    }
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<Scalar> out(m * n);
    const auto x = a.data();
    const auto y = b.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out[i * n + j] = x[i * n + j] + y[j];
        }
    }
    return make_op_result(a.shape(), std::move(out), {a, b}, [m, n](detail::Node& o) {
        auto& pa = *o.parents[0];
        auto& pb = *o.parents[1];
        if (pa.requires_grad) {
            Scalar* g = pa.grad_buffer();
            for (std::size_t i = 0; i < m * n; ++i) {
                g[i] += o.grad[i];
            }
        }
        if (pb.requires_grad) {
            Scalar* g = pb.grad_buffer();
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    g[j] += o.grad[i * n + j];
                }
            }
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    const bool same = a.shape() == b.shape();
    if (!same && !is_row_vector_for(a, b)) {
        fail(ErrorKind::ShapeMismatch, "mul: shapes " + shape_to_string(a.shape()) + " and " +
                                           shape_to_string(b.shape()) + " do not broadcast");
    }
    const std::size_t n = same ? a.numel() : a.cols();
    const std::size_t total = a.numel();
    std::vector<Scalar> out(total);
    const auto x = a.data();
    const auto y = b.data();
    for (std::size_t i = 0; i < total; ++i) {
        out[i] = x[i] * y[same ? i : i % n];
    }
    return make_op_result(a.shape(), std::move(out), {a, b}, [same, n, total](detail::Node& o) {
        auto& pa = *o.parents[0];
        auto& pb = *o.parents[1];
        if (pa.requires_grad) {
            Scalar* g = pa.grad_buffer();
            for (std::size_t i = 0; i < total; ++i) {
                g[i] += o.grad[i] * pb.data[same ? i : i % n];
            }
        }
        if (pb.requires_grad) {
            Scalar* g = pb.grad_buffer();
            for (std::size_t i = 0; i < total; ++i) {
                g[same ? i : i % n] += o.grad[i] * pa.data[i];
            }
        }
    });
}

Tensor scale(const Tensor& a, Scalar factor) {
    return unary(
        a, [factor](Scalar v) { return v * factor; }, [factor](Scalar, Scalar) { return factor; });
}

Tensor gelu(const Tensor& x) {
    return unary(
        x,
        [](Scalar v) {
            const Scalar u = kSqrt2OverPi * (v + kGeluCubic * v * v * v);
            return 0.5 * v * (1.0 + std::tanh(u));
        },
        [](Scalar v, Scalar) {
            const Scalar u = kSqrt2OverPi * (v + kGeluCubic * v * v * v);
            const Scalar t = std::tanh(u);
            const Scalar du = kSqrt2OverPi * (1.0 + 3.0 * kGeluCubic * v * v);
            return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
        });
}

Tensor tanh(const Tensor& x) {
    return unary(
        x, [](Scalar v) { return std::tanh(v); }, [](Scalar, Scalar y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& x) {
    return unary(
        x, [](Scalar v) { return v > 0.0 ? v : 0.0; },
        [](Scalar v, Scalar) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor activate(const Tensor& x, Activation act) {
    switch (act) {
    case Activation::Gelu:
        return gelu(x);
    case Activation::Tanh:
        return tanh(x);
    case Activation::Relu:
        return relu(x);
    }
    fail(ErrorKind::InvalidArgument, "unknown activation");
}

std::string to_string(Activation act) {
    switch (act) {
    case Activation::Gelu:
        return "gelu";
    case Activation::Tanh:
        return "tanh";
    case Activation::Relu:
        return "relu";
    }
    return "?";
}

Activation activation_from_string(const std::string& name) {
    if (name == "gelu") {
        return Activation::Gelu;
    }
    if (name == "tanh") {
        return Activation::Tanh;
    }
    if (name == "relu") {
        return Activation::Relu;
    }
    fail(ErrorKind::InvalidArgument, "unknown activation '" + name + "'");
}

Tensor softmax_rows(const Tensor& x, std::optional<std::size_t> causal_offset) {
    require_rank2(x, "softmax_rows");
    const std::size_t m = x.rows(), n = x.cols();
    std::vector<Scalar> out(m * n, 0.0);
    const auto in = x.data();
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t visible = causal_offset ? std::min(n, i + *causal_offset + 1) : n;
        const Scalar* row = in.data() + i * n;
        Scalar* dst = out.data() + i * n;
        Scalar mx = row[0];
        for (std::size_t j = 1; j < visible; ++j) {
            mx = std::max(mx, row[j]);
        }
        Scalar total = 0.0;
        for (std::size_t j = 0; j < visible; ++j) {
            dst[j] = std::exp(row[j] - mx);
            total += dst[j];
        }
        for (std::size_t j = 0; j < visible; ++j) {
            dst[j] /= total;
        }
    }
    return make_op_result({m, n}, std::move(out), {x}, [m, n](detail::Node& o) {
        Scalar* g = o.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < m; ++i) {
            const Scalar* y = o.data.data() + i * n;
            const Scalar* dy = o.grad.data() + i * n;
            Scalar dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                dot += y[j] * dy[j];
            }
            for (std::size_t j = 0; j < n; ++j) {
                g[i * n + j] += y[j] * (dy[j] - dot);
            }
        }
    });
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta, Scalar eps) {
    require_rank2(x, "layer_norm_rows");
    const std::size_t m = x.rows(), n = x.cols();
    if (gamma.numel() != n || beta.numel() != n) {
        fail(ErrorKind::ShapeMismatch, "layer_norm_rows: gamma/beta must have " + std::to_string(n) +
                                           " elements");
    }
    std::vector<Scalar> out(m * n);
    // normalized values and inverse std kept for backward
    auto xhat = std::make_shared<std::vector<Scalar>>(m * n);
    auto inv_std = std::make_shared<std::vector<Scalar>>(m);
    const auto in = x.data();
    const auto g = gamma.data();
    const auto b = beta.data();
    for (std::size_t i = 0; i < m; ++i) {
        const Scalar* row = in.data() + i * n;
        Scalar mean = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            mean += row[j];
        }
        mean /= static_cast<Scalar>(n);
        Scalar var = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const Scalar d = row[j] - mean;
            var += d * d;
        }
        var /= static_cast<Scalar>(n);
        const Scalar is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[i] = is;
        for (std::size_t j = 0; j < n; ++j) {
            const Scalar h = (row[j] - mean) * is;
            (*xhat)[i * n + j] = h;
            out[i * n + j] = h * g[j] + b[j];
        }
    }
    return make_op_result({m, n}, std::move(out), {x, gamma, beta}, [m, n, xhat, inv_std](detail::Node& o) {
        auto& px = *o.parents[0];
        auto& pg = *o.parents[1];
        auto& pb = *o.parents[2];
        if (pg.requires_grad || pb.requires_grad) {
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    const Scalar dy = o.grad[i * n + j];
                    if (pg.requires_grad) {
                        pg.grad_buffer()[j] += dy * (*xhat)[i * n + j];
                    }
                    if (pb.requires_grad) {
                        pb.grad_buffer()[j] += dy;
                    }
                }
            }
        }
        if (px.requires_grad) {
            Scalar* gx = px.grad_buffer();
            const Scalar inv_n = 1.0 / static_cast<Scalar>(n);
            for (std::size_t i = 0; i < m; ++i) {
                Scalar sum_dh = 0.0, sum_dh_h = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    const Scalar dh = o.grad[i * n + j] * pg.data[j];
                    sum_dh += dh;
                    sum_dh_h += dh * (*xhat)[i * n + j];
                }
                for (std::size_t j = 0; j < n; ++j) {
                    const Scalar dh = o.grad[i * n + j] * pg.data[j];
                    const Scalar h = (*xhat)[i * n + j];
                    gx[i * n + j] += (*inv_std)[i] * (dh - inv_n * sum_dh - h * inv_n * sum_dh_h);
                }
            }
        }
    });
}

Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids) {
    require_rank2(table, "embedding");
    const std::size_t v = table.rows(), d = table.cols();
    if (ids.empty()) {
        fail(ErrorKind::ShapeMismatch, "embedding needs at least one id");
    }
    std::vector<Scalar> out(ids.size() * d);
    const auto t = table.data();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v) {
            fail(ErrorKind::IndexOutOfVocab, "token id " + std::to_string(ids[i]) +
                                                 " outside vocabulary of " + std::to_string(v));
        }
        std::copy_n(t.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
    }
    std::vector<std::int32_t> idx(ids.begin(), ids.end());
    return make_op_result({ids.size(), d}, std::move(out), {table}, [idx, d](detail::Node& o) {
        Scalar* g = o.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < idx.size(); ++i) {
            Scalar* row = g + static_cast<std::size_t>(idx[i]) * d;
            for (std::size_t j = 0; j < d; ++j) {
                row[j] += o.grad[i * d + j];
            }
        }
    });
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
    require_rank2(x, "slice_cols");
    const std::size_t m = x.rows(), n = x.cols();
    if (count == 0 || start + count > n) {
        fail(ErrorKind::ShapeMismatch, "slice_cols out of range");
    }
    std::vector<Scalar> out(m * count);
    const auto in = x.data();
    for (std::size_t i = 0; i < m; ++i) {
        std::copy_n(in.data() + i * n + start, count, out.data() + i * count);
    }
    return make_op_result({m, count}, std::move(out), {x}, [m, n, start, count](detail::Node& o) {
        Scalar* g = o.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < count; ++j) {
                g[i * n + start + j] += o.grad[i * count + j];
            }
        }
    });
}

Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count) {
    require_rank2(x, "slice_rows");
    const std::size_t m = x.rows(), n = x.cols();
    if (count == 0 || start + count > m) {
        fail(ErrorKind::ShapeMismatch, "slice_rows out of range");
    }
    std::vector<Scalar> out(x.data().begin() + static_cast<std::ptrdiff_t>(start * n),
                            x.data().begin() + static_cast<std::ptrdiff_t>((start + count) * n));
    return make_op_result({count, n}, std::move(out), {x}, [n, start](detail::Node& o) {
        Scalar* g = o.parents[0]->grad_buffer() + start * n;
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
            g[i] += o.grad[i];
        }
    });
}

Tensor concat_cols(std::span<const Tensor> parts) {
    if (parts.empty()) {
        fail(ErrorKind::ShapeMismatch, "concat_cols needs at least one tensor");
    }
    const std::size_t m = parts[0].rows();
    std::vector<std::size_t> widths;
    std::size_t n = 0;
    for (const auto& p : parts) {
        if (p.rows() != m) {
            fail(ErrorKind::ShapeMismatch, "concat_cols row counts differ");
        }
        widths.push_back(p.cols());
        n += p.cols();
    }
    std::vector<Scalar> out(m * n);
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t w = p.cols();
        const auto in = p.data();
        for (std::size_t i = 0; i < m; ++i) {
            std::copy_n(in.data() + i * w, w, out.data() + i * n + offset);
        }
        offset += w;
    }
    return make_op_result({m, n}, std::move(out), {parts.begin(), parts.end()},
                          [m, n, widths](detail::Node& o) {
                              std::size_t off = 0;
                              for (std::size_t k = 0; k < widths.size(); ++k) {
                                  auto& p = *o.parents[k];
                                  const std::size_t w = widths[k];
                                  if (p.requires_grad) {
                                      Scalar* g = p.grad_buffer();
                                      for (std::size_t i = 0; i < m; ++i) {
                                          for (std::size_t j = 0; j < w; ++j) {
                                              g[i * w + j] += o.grad[i * n + off + j];
                                          }
                                      }
                                  }
                                  off += w;
                              }
                          });
}

Tensor concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) {
        fail(ErrorKind::ShapeMismatch, "concat_rows needs at least one tensor");
    }
    const std::size_t n = parts[0].cols();
    std::size_t m = 0;
    std::vector<Scalar> out;
    std::vector<std::size_t> sizes;
    for (const auto& p : parts) {
        if (p.cols() != n) {
            fail(ErrorKind::ShapeMismatch, "concat_rows column counts differ");
        }
        m += p.rows();
        sizes.push_back(p.numel());
        out.insert(out.end(), p.data().begin(), p.data().end());
    }
    return make_op_result({m, n}, std::move(out), {parts.begin(), parts.end()}, [sizes](detail::Node& o) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < sizes.size(); ++k) {
            auto& p = *o.parents[k];
            if (p.requires_grad) {
                Scalar* g = p.grad_buffer();
                for (std::size_t i = 0; i < sizes[k]; ++i) {
                    g[i] += o.grad[off + i];
                }
            }
            off += sizes[k];
        }
    });
}

Tensor kronecker(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        fail(ErrorKind::RankError, "kronecker expects rank-2 inputs, got " +
                                       shape_to_string(a.shape()) + " and " + shape_to_string(b.shape()));
    }
    const std::size_t p = a.rows(), q = a.cols(), r = b.rows(), s = b.cols();
    const std::size_t cols = q * s;
    std::vector<Scalar> out(p * r * cols);
    const auto x = a.data();
    const auto y = b.data();
    for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = 0; j < q; ++j) {
            const Scalar av = x[i * q + j];
            for (std::size_t k = 0; k < r; ++k) {
                for (std::size_t l = 0; l < s; ++l) {
                    out[(i * r + k) * cols + j * s + l] = av * y[k * s + l];
                }
            }
        }
    }
    return make_op_result({p * r, cols}, std::move(out), {a, b}, [p, q, r, s, cols](detail::Node& o) {
        auto& pa = *o.parents[0];
        auto& pb = *o.parents[1];
        Scalar* ga = pa.requires_grad ? pa.grad_buffer() : nullptr;
        Scalar* gb = pb.requires_grad ? pb.grad_buffer() : nullptr;
        for (std::size_t i = 0; i < p; ++i) {
            for (std::size_t j = 0; j < q; ++j) {
                for (std::size_t k = 0; k < r; ++k) {
                    for (std::size_t l = 0; l < s; ++l) {
                        const Scalar dy = o.grad[(i * r + k) * cols + j * s + l];
                        if (ga) {
                            ga[i * q + j] += dy * pb.data[k * s + l];
                        }
                        if (gb) {
                            gb[k * s + l] += dy * pa.data[i * q + j];
                        }
                    }
                }
            }
        }
    });
}

Tensor sum(const Tensor& x) {
    const auto in = x.data();
    const Scalar total = std::accumulate(in.begin(), in.end(), 0.0);
    return make_op_result({}, {total}, {x}, [](detail::Node& o) {
        auto& p = *o.parents[0];
        Scalar* g = p.grad_buffer();
        for (std::size_t i = 0; i < p.data.size(); ++i) {
            g[i] += o.grad[0];
        }
    });
}

Tensor add_scalars(std::span<const Tensor> scalars) {
    if (scalars.empty()) {
        fail(ErrorKind::ShapeMismatch, "add_scalars needs at least one tensor");
    }
    Scalar total = 0.0;
    for (const auto& s : scalars) {
        total += s.item();
    }
    return make_op_result({}, {total}, {scalars.begin(), scalars.end()}, [](detail::Node& o) {
        for (auto& p : o.parents) {
            if (p->requires_grad) {
                p->grad_buffer()[0] += o.grad[0];
            }
        }
    });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> targets, Scalar factor) {
    require_rank2(logits, "cross_entropy");
    const std::size_t m = logits.rows(), v = logits.cols();
    if (targets.size() != m) {
        fail(ErrorKind::ShapeMismatch, "cross_entropy: " + std::to_string(targets.size()) +
                                           " targets for " + std::to_string(m) + " rows");
    }
    for (auto t : targets) {
        if (t < 0 || static_cast<std::size_t>(t) >= v) {
            fail(ErrorKind::IndexOutOfVocab, "target id " + std::to_string(t) + " >= " + std::to_string(v));
        }
    }
    auto probs = std::make_shared<std::vector<Scalar>>(m * v);
    const auto in = logits.data();
    Scalar loss = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const Scalar* row = in.data() + i * v;
        const Scalar mx = *std::max_element(row, row + v);
        Scalar total = 0.0;
        for (std::size_t j = 0; j < v; ++j) {
            (*probs)[i * v + j] = std::exp(row[j] - mx);
            total += (*probs)[i * v + j];
        }
        for (std::size_t j = 0; j < v; ++j) {
            (*probs)[i * v + j] /= total;
        }
        loss += std::log(total) + mx - row[targets[i]];
    }
    std::vector<std::int32_t> tgt(targets.begin(), targets.end());
    return make_op_result({}, {factor * loss}, {logits}, [probs, tgt, m, v, factor](detail::Node& o) {
        Scalar* g = o.parents[0]->grad_buffer();
        const Scalar up = o.grad[0] * factor;
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < v; ++j) {
                g[i * v + j] += up * (*probs)[i * v + j];
            }
            g[i * v + static_cast<std::size_t>(tgt[i])] -= up;
        }
    });
}

Tensor softmax_ce_loss(const Tensor& logits, std::span<const std::int32_t> targets) {
    require_rank2(logits, "softmax_ce_loss");
    return cross_entropy(logits, targets, 1.0 / static_cast<Scalar>(logits.rows()));
}

Moments moments(const Tensor& t) {
    if (!t.defined() || t.numel() == 0) {
        fail(ErrorKind::EmptyTensor, "moments of an empty tensor");
    }
    const auto d = t.data();
    const double n = static_cast<double>(d.size());
    double mean = 0.0;
    for (Scalar v : d) {
        mean += v;
    }
    mean /= n;
    double var = 0.0;
    for (Scalar v : d) {
        var += (v - mean) * (v - mean);
    }
    return {mean, var / n};
}

}  // namespace peftport
