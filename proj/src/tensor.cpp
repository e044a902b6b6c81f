// Copyright (c) 2026 The kdlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "kdlab/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace kdlab {

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    bool is_leaf = true;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;
    std::uint64_t id = 0;

    std::vector<double>& grad_buffer() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
        return grad;
    }
};

}  // namespace detail

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

namespace {

std::atomic<std::uint64_t> g_next_id{1};
thread_local bool t_grad_enabled = true;

NodePtr make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
    auto node = std::make_shared<Node>();
    if (numel(shape) != values.size()) {
        throw DimensionError("tensor: shape " + shape_str(shape) + " does not hold " +
                             std::to_string(values.size()) + " values");
    }
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    if (requires_grad) node->grad.assign(node->value.size(), 0.0);
    node->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
    return node;
}

}  // namespace

struct TensorAccess {
    static const NodePtr& ptr(const Tensor& t) {
        if (!t.node_) throw std::logic_error("tensor: use of undefined tensor");
        return t.node_;
    }
    static Tensor wrap(NodePtr node) { return Tensor(std::move(node)); }

    // Builds an op result. The backward closure is attached only when some
    // input needs a gradient and recording is on.
    static Tensor result(Shape shape, std::vector<double> values, std::vector<NodePtr> parents,
                         std::function<void(Node&)> backward_fn) {
        auto node = make_leaf(std::move(shape), std::move(values), false);
        const bool needs = t_grad_enabled &&
                           std::any_of(parents.begin(), parents.end(),
                                       [](const NodePtr& p) { return p->requires_grad; });
        if (needs) {
            node->requires_grad = true;
            node->is_leaf = false;
            node->parents = std::move(parents);
            node->backward_fn = std::move(backward_fn);
        }
        return Tensor(std::move(node));
    }
};

namespace {

const NodePtr& P(const Tensor& t) { return TensorAccess::ptr(t); }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    if (t.rank() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                             ", got " + shape_str(t.shape()));
    }
}

}  // namespace

std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

// ---- Tensor ---------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    const auto n = numel(shape);
    return Tensor(make_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const auto n = numel(shape);
    return Tensor(make_leaf(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    for (auto d : shape) {
        if (d == 0) throw DimensionError("tensor: dimensions must be positive, got " + shape_str(shape));
    }
    return Tensor(make_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return Tensor(make_leaf(Shape{}, std::vector<double>{value}, requires_grad));
}

const Shape& Tensor::shape() const { return P(*this)->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) throw DimensionError("tensor: axis out of range for " + shape_str(s));
    return s[axis];
}

std::size_t Tensor::size() const { return P(*this)->value.size(); }

std::span<const double> Tensor::values() const { return P(*this)->value; }
std::span<double> Tensor::mutable_values() { return P(*this)->value; }

std::span<const double> Tensor::grad() const { return P(*this)->grad; }
std::span<double> Tensor::mutable_grad() { return P(*this)->grad_buffer(); }

double Tensor::item() const {
    if (size() != 1) throw DimensionError("item: tensor is not scalar " + shape_str(shape()));
    return values()[0];
}

bool Tensor::requires_grad() const { return P(*this)->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
    auto& n = *P(*this);
    if (!n.is_leaf) throw std::logic_error("set_requires_grad: only leaf tensors");
    n.requires_grad = flag;
    if (flag) n.grad_buffer();
    else n.grad.clear();
}

void Tensor::zero_grad() {
    auto& n = *P(*this);
    std::fill(n.grad.begin(), n.grad.end(), 0.0);
}

std::uint64_t Tensor::node_id() const { return P(*this)->id; }

Tensor Tensor::detach() const {
    return Tensor(make_leaf(shape(), P(*this)->value, false));
}

Tensor Tensor::clone() const {
    return Tensor(make_leaf(shape(), P(*this)->value, requires_grad()));
}

void Tensor::backward() const {
    const auto& root = P(*this);
    if (root->value.size() != 1) {
        throw DimensionError("backward: loss must be scalar, got " + shape_str(root->shape));
    }
    if (!root->requires_grad) return;

    // Iterative post-order DFS gives a topological order (parents first).
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node* n : order) {
        if (n->is_leaf) n->grad_buffer();
        else n->grad.assign(n->value.size(), 0.0);
    }
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (!n->is_leaf && n->backward_fn) n->backward_fn(*n);
    }
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() noexcept { return t_grad_enabled; }

// ---- linear algebra -------------------------------------------------------

namespace {

// c[m,n] += a[m,k] * b[k,n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        const double* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            if (av == 0.0) continue;
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// c[m,n] += a[m,k] * b[n,k]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* bj = b + j * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
            c[i * n + j] += acc;
        }
    }
}

// c[k,n] += a[m,k]^T * b[m,n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        const double* bi = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            if (av == 0.0) continue;
            double* cp = c + p * n;
            for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
        }
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw DimensionError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    std::vector<double> out(m * n, 0.0);
    gemm_nn(a.values().data(), b.values().data(), out.data(), m, k, n);
    return TensorAccess::result({m, n}, std::move(out), {P(a), P(b)}, [m, k, n](Node& self) {
        const auto& pa = self.parents[0];
        const auto& pb = self.parents[1];
        if (pa->requires_grad) gemm_nt(self.grad.data(), pb->value.data(), pa->grad_buffer().data(), m, n, k);
        if (pb->requires_grad) gemm_tn(pa->value.data(), self.grad.data(), pb->grad_buffer().data(), m, k, n);
    });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
    require_rank(a, 3, "bmm");
    require_rank(b, 3, "bmm");
    const std::size_t g = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
    if (b.dim(0) != g || b.dim(1) != k) {
        throw DimensionError("bmm: incompatible " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    std::vector<double> out(g * m * n, 0.0);
    for (std::size_t i = 0; i < g; ++i) {
        gemm_nn(a.values().data() + i * m * k, b.values().data() + i * k * n, out.data() + i * m * n, m, k, n);
    }
    return TensorAccess::result({g, m, n}, std::move(out), {P(a), P(b)}, [g, m, k, n](Node& self) {
        const auto& pa = self.parents[0];
        const auto& pb = self.parents[1];
        for (std::size_t i = 0; i < g; ++i) {
            const double* dc = self.grad.data() + i * m * n;
            if (pa->requires_grad)
                gemm_nt(dc, pb->value.data() + i * k * n, pa->grad_buffer().data() + i * m * k, m, n, k);
            if (pb->requires_grad)
                gemm_tn(pa->value.data() + i * m * k, dc, pb->grad_buffer().data() + i * k * n, m, k, n);
        }
    });
}

Tensor bmm_nt(const Tensor& a, const Tensor& b) {
    require_rank(a, 3, "bmm_nt");
    require_rank(b, 3, "bmm_nt");
    const std::size_t g = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(1);
    if (b.dim(0) != g || b.dim(2) != k) {
        throw DimensionError("bmm_nt: incompatible " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
    }
    std::vector<double> out(g * m * n, 0.0);
    for (std::size_t i = 0; i < g; ++i) {
        gemm_nt(a.values().data() + i * m * k, b.values().data() + i * n * k, out.data() + i * m * n, m, k, n);
    }
    return TensorAccess::result({g, m, n}, std::move(out), {P(a), P(b)}, [g, m, k, n](Node& self) {
        const auto& pa = self.parents[0];
        const auto& pb = self.parents[1];
        for (std::size_t i = 0; i < g; ++i) {
            const double* dc = self.grad.data() + i * m * n;
            // da = dc * b ; db = dc^T * a
            if (pa->requires_grad)
                gemm_nn(dc, pb->value.data() + i * n * k, pa->grad_buffer().data() + i * m * k, m, n, k);
            if (pb->requires_grad)
                gemm_tn(dc, pa->value.data() + i * m * k, pb->grad_buffer().data() + i * n * k, m, n, k);
        }
    });
}

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    const auto av = a.values(), bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    return TensorAccess::result(a.shape(), std::move(out), {P(a), P(b)}, [](Node& self) {
        for (const auto& p : self.parents) {
            if (!p->requires_grad) continue;
            auto& g = p->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> out(a.size());
    const auto av = a.values(), bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    return TensorAccess::result(a.shape(), std::move(out), {P(a), P(b)}, [](Node& self) {
        if (self.parents[0]->requires_grad) {
            auto& g = self.parents[0]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (self.parents[1]->requires_grad) {
            auto& g = self.parents[1]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    const auto av = a.values(), bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    return TensorAccess::result(a.shape(), std::move(out), {P(a), P(b)}, [](Node& self) {
        const auto& pa = self.parents[0];
        const auto& pb = self.parents[1];
        if (pa->requires_grad) {
            auto& g = pa->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb->value[i];
        }
        if (pb->requires_grad) {
            auto& g = pb->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa->value[i];
        }
    });
}

Tensor scale(const Tensor& a, double factor) {
    std::vector<double> out(a.values().begin(), a.values().end());
    for (auto& v : out) v *= factor;
    return TensorAccess::result(a.shape(), std::move(out), {P(a)}, [factor](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
    });
}

Tensor add_scalar(const Tensor& a, double value) {
    std::vector<double> out(a.values().begin(), a.values().end());
    for (auto& v : out) v += value;
    return TensorAccess::result(a.shape(), std::move(out), {P(a)}, [](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor add_row(const Tensor& a, const Tensor& bias) {
    require_rank(bias, 1, "add_row");
    const std::size_t d = bias.dim(0);
    if (a.rank() == 0 || a.shape().back() != d) {
        throw DimensionError("add_row: bias " + shape_str(bias.shape()) + " does not match " +
                             shape_str(a.shape()));
    }
    const std::size_t rows = a.size() / d;
    std::vector<double> out(a.values().begin(), a.values().end());
    const auto bv = bias.values();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) out[r * d + j] += bv[j];
    return TensorAccess::result(a.shape(), std::move(out), {P(a), P(bias)}, [rows, d](Node& self) {
        if (self.parents[0]->requires_grad) {
            auto& g = self.parents[0]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (self.parents[1]->requires_grad) {
            auto& g = self.parents[1]->grad_buffer();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < d; ++j) g[j] += self.grad[r * d + j];
        }
    });
}

// ---- nonlinearities -------------------------------------------------------

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Tensor gelu(const Tensor& x) {
    std::vector<double> out(x.size());
    const auto xv = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = xv[i];
        out[i] = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
    }
    return TensorAccess::result(x.shape(), std::move(out), {P(x)}, [](Node& self) {
        const auto& px = self.parents[0];
        auto& g = px->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = px->value[i];
            const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
            const double dt = (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
            g[i] += self.grad[i] * (0.5 * (1.0 + t) + 0.5 * v * dt);
        }
    });
}

Tensor softmax(const Tensor& x) {
    if (x.rank() == 0) throw DimensionError("softmax: scalar input");
    const std::size_t n = x.shape().back();
    const std::size_t rows = x.size() / n;
    std::vector<double> out(x.size());
    const auto xv = x.values();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = xv.data() + r * n;
        double* o = out.data() + r * n;
        const double mx = *std::max_element(in, in + n);
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += (o[j] = std::exp(in[j] - mx));
        for (std::size_t j = 0; j < n; ++j) o[j] /= s;
    }
    return TensorAccess::result(x.shape(), std::move(out), {P(x)}, [rows, n](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = self.value.data() + r * n;
            const double* dy = self.grad.data() + r * n;
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += dy[j] * y[j];
            for (std::size_t j = 0; j < n; ++j) g[r * n + j] += y[j] * (dy[j] - dot);
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    require_rank(gamma, 1, "layer_norm");
    require_rank(beta, 1, "layer_norm");
    const std::size_t d = gamma.dim(0);
    if (x.rank() == 0 || x.shape().back() != d || beta.dim(0) != d) {
        throw DimensionError("layer_norm: affine " + shape_str(gamma.shape()) + " does not match " +
                             shape_str(x.shape()));
    }
    const std::size_t rows = x.size() / d;
    std::vector<double> xhat(x.size());
    std::vector<double> inv_std(rows);
    const auto xv = x.values();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = xv.data() + r * d;
        const bool constant = std::all_of(in, in + d, [&](double v) { return v == in[0]; });
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += in[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (in[j] - mu) * (in[j] - mu);
        var /= static_cast<double>(d);
        if (constant) var = 0.0;
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) xhat[r * d + j] = constant ? 0.0 : (in[j] - mu) * inv_std[r];
    }
    std::vector<double> out(x.size());
    const auto gv = gamma.values(), bv = beta.values();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) out[r * d + j] = xhat[r * d + j] * gv[j] + bv[j];

    return TensorAccess::result(
        x.shape(), std::move(out), {P(x), P(gamma), P(beta)},
        [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
            const auto& px = self.parents[0];
            const auto& pg = self.parents[1];
            const auto& pb = self.parents[2];
            const double inv_d = 1.0 / static_cast<double>(d);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* dy = self.grad.data() + r * d;
                const double* xh = xhat.data() + r * d;
                if (pg->requires_grad) {
                    auto& gg = pg->grad_buffer();
                    for (std::size_t j = 0; j < d; ++j) gg[j] += dy[j] * xh[j];
                }
                if (pb->requires_grad) {
                    auto& gb = pb->grad_buffer();
                    for (std::size_t j = 0; j < d; ++j) gb[j] += dy[j];
                }
                if (px->requires_grad) {
                    auto& gx = px->grad_buffer();
                    double mean_dxh = 0.0, mean_dxh_xh = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double dxh = dy[j] * pg->value[j];
                        mean_dxh += dxh;
                        mean_dxh_xh += dxh * xh[j];
                    }
                    mean_dxh *= inv_d;
                    mean_dxh_xh *= inv_d;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double dxh = dy[j] * pg->value[j];
                        gx[r * d + j] += inv_std[r] * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
                    }
                }
            }
        });
}

// ---- indexing / layout ----------------------------------------------------

Tensor gather_rows(const Tensor& table, std::span<const int> rows) {
    require_rank(table, 2, "gather_rows");
    const std::size_t v = table.dim(0), d = table.dim(1);
    std::vector<int> idx(rows.begin(), rows.end());
    std::vector<double> out(idx.size() * d);
    const auto tv = table.values();
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= v) {
            throw std::out_of_range("gather_rows: index " + std::to_string(idx[i]) + " outside [0," +
                                    std::to_string(v) + ")");
        }
        std::copy_n(tv.data() + static_cast<std::size_t>(idx[i]) * d, d, out.data() + i * d);
    }
    if (idx.empty()) throw DimensionError("gather_rows: empty index list");
    const std::size_t n = idx.size();
    return TensorAccess::result({n, d}, std::move(out), {P(table)}, [idx = std::move(idx), d](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < idx.size(); ++i) {
            double* dst = g.data() + static_cast<std::size_t>(idx[i]) * d;
            const double* src = self.grad.data() + i * d;
            for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
        }
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (numel(shape) != x.size()) {
        throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
    }
    std::vector<double> out(x.values().begin(), x.values().end());
    return TensorAccess::result(std::move(shape), std::move(out), {P(x)}, [](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

namespace {

// Maps flat index in [B*T, h*dh] to flat index in [B*h, T, dh].
struct HeadLayout {
    std::size_t batch, seq, heads, head_dim;
    std::size_t split_index(std::size_t row, std::size_t col) const {
        const std::size_t b = row / seq, t = row % seq;
        const std::size_t h = col / head_dim, e = col % head_dim;
        return ((b * heads + h) * seq + t) * head_dim + e;
    }
};

HeadLayout head_layout(const Tensor& x, std::size_t rows, std::size_t cols, std::size_t batch,
                       std::size_t seq, std::size_t heads, const char* op) {
    if (heads == 0 || cols % heads != 0 || rows != batch * seq || x.size() != rows * cols) {
        throw DimensionError(std::string(op) + ": cannot map " + shape_str(x.shape()) + " with batch " +
                             std::to_string(batch) + ", seq " + std::to_string(seq) + ", heads " +
                             std::to_string(heads));
    }
    return {batch, seq, heads, cols / heads};
}

}  // namespace

Tensor split_heads(const Tensor& x, std::size_t batch, std::size_t seq, std::size_t heads) {
    require_rank(x, 2, "split_heads");
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    const auto L = head_layout(x, rows, cols, batch, seq, heads, "split_heads");
    std::vector<double> out(x.size());
    const auto xv = x.values();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[L.split_index(r, c)] = xv[r * cols + c];
    return TensorAccess::result({batch * heads, seq, L.head_dim}, std::move(out), {P(x)},
                                [L, rows, cols](Node& self) {
                                    auto& g = self.parents[0]->grad_buffer();
                                    for (std::size_t r = 0; r < rows; ++r)
                                        for (std::size_t c = 0; c < cols; ++c)
                                            g[r * cols + c] += self.grad[L.split_index(r, c)];
                                });
}

Tensor merge_heads(const Tensor& x, std::size_t batch, std::size_t seq, std::size_t heads) {
    require_rank(x, 3, "merge_heads");
    if (x.dim(0) != batch * heads || x.dim(1) != seq) {
        throw DimensionError("merge_heads: unexpected shape " + shape_str(x.shape()));
    }
    const std::size_t rows = batch * seq, cols = heads * x.dim(2);
    const auto L = head_layout(x, rows, cols, batch, seq, heads, "merge_heads");
    std::vector<double> out(x.size());
    const auto xv = x.values();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = xv[L.split_index(r, c)];
    return TensorAccess::result({rows, cols}, std::move(out), {P(x)}, [L, rows, cols](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) g[L.split_index(r, c)] += self.grad[r * cols + c];
    });
}

Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng) {
    if (p <= 0.0) return x;
    if (p >= 1.0) throw std::invalid_argument("dropout: rate must be below 1");
    const double keep_scale = 1.0 / (1.0 - p);
    std::vector<double> mask(x.size());
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (auto& m : mask) m = unif(rng) < p ? 0.0 : keep_scale;
    std::vector<double> out(x.size());
    const auto xv = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * mask[i];
    return TensorAccess::result(x.shape(), std::move(out), {P(x)}, [mask = std::move(mask)](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
    });
}

// ---- reductions / losses --------------------------------------------------

Tensor sum(const Tensor& x) {
    const auto xv = x.values();
    const double s = std::accumulate(xv.begin(), xv.end(), 0.0);
    return TensorAccess::result({}, {s}, {P(x)}, [](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (auto& v : g) v += self.grad[0];
    });
}

Tensor mean(const Tensor& x) {
    const auto xv = x.values();
    const double n = static_cast<double>(xv.size());
    const double s = std::accumulate(xv.begin(), xv.end(), 0.0) / n;
    return TensorAccess::result({}, {s}, {P(x)}, [n](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (auto& v : g) v += self.grad[0] / n;
    });
}

Tensor mse(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mse");
    const auto av = a.values(), bv = b.values();
    const double n = static_cast<double>(av.size());
    double s = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) {
        const double d = av[i] - bv[i];
        s += d * d;
    }
    return TensorAccess::result({}, {s / n}, {P(a), P(b)}, [n](Node& self) {
        const auto& pa = self.parents[0];
        const auto& pb = self.parents[1];
        const double k = 2.0 * self.grad[0] / n;
        if (pa->requires_grad) {
            auto& g = pa->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += k * (pa->value[i] - pb->value[i]);
        }
        if (pb->requires_grad) {
            auto& g = pb->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= k * (pa->value[i] - pb->value[i]);
        }
    });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
    require_rank(logits, 2, "cross_entropy");
    const std::size_t n = logits.dim(0), c = logits.dim(1);
    if (targets.size() != n) {
        throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                             std::to_string(n) + " rows");
    }
    std::vector<int> tgt(targets.begin(), targets.end());
    for (int t : tgt) {
        if (t < 0 || static_cast<std::size_t>(t) >= c) {
            throw std::out_of_range("cross_entropy: target " + std::to_string(t) + " outside [0," +
                                    std::to_string(c) + ")");
        }
    }
    std::vector<double> probs(n * c);
    double loss = 0.0;
    const auto lv = logits.values();
    for (std::size_t r = 0; r < n; ++r) {
        const double* row = lv.data() + r * c;
        const double mx = *std::max_element(row, row + c);
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += (probs[r * c + j] = std::exp(row[j] - mx));
        for (std::size_t j = 0; j < c; ++j) probs[r * c + j] /= s;
        loss += (mx + std::log(s)) - row[static_cast<std::size_t>(tgt[r])];
    }
    loss /= static_cast<double>(n);
    return TensorAccess::result({}, {loss}, {P(logits)},
                                [n, c, probs = std::move(probs), tgt = std::move(tgt)](Node& self) {
                                    auto& g = self.parents[0]->grad_buffer();
                                    const double k = self.grad[0] / static_cast<double>(n);
                                    for (std::size_t r = 0; r < n; ++r) {
                                        for (std::size_t j = 0; j < c; ++j) {
                                            const double onehot =
                                                static_cast<std::size_t>(tgt[r]) == j ? 1.0 : 0.0;
                                            g[r * c + j] += k * (probs[r * c + j] - onehot);
                                        }
                                    }
                                });
}

// ---- gradient check -------------------------------------------------------

double grad_check(const std::function<Tensor()>& f, Tensor x, double h) {
    if (!x.requires_grad()) x.set_requires_grad(true);
    x.zero_grad();
    f().backward();
    const std::vector<double> analytic(x.grad().begin(), x.grad().end());
    x.zero_grad();

    NoGradGuard no_grad;
    auto vals = x.mutable_values();
    double worst = 0.0;
    for (std::size_t i = 0; i < vals.size(); ++i) {
        const double orig = vals[i];
        vals[i] = orig + h;
        const double up = f().item();
        vals[i] = orig - h;
        const double down = f().item();
        vals[i] = orig;
        const double numeric = (up - down) / (2.0 * h);
        const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
        worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    return worst;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double h) {
    return grad_check(std::function<Tensor()>([&f, x] { return f(x); }), x, h);
}

}  // namespace kdlab
