#include "cbd/tensor.hpp"

#include "cbd/errors.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace cbd {

namespace detail {

namespace {

// Global construction order. Atomic so graphs built on worker threads (e.g.
// parallel teacher training) stay consistently ordered with leaves created
// elsewhere; thread joins give the needed happens-before.
std::atomic<std::uint64_t> g_seq{0};

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

} // namespace

void TensorNode::ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
}

void TensorNode::accumulate(std::size_t i, double g) {
    ensure_grad();
    grad[i] += g;
}

} // namespace detail

using detail::TensorNode;

namespace {

std::shared_ptr<TensorNode> make_node(std::vector<std::size_t> shape,
                                      std::vector<double> values,
                                      bool requires_grad) {
    if (shape.empty()) throw dimension_error("tensor: shape must not be empty");
    for (std::size_t d : shape) {
        if (d == 0) throw dimension_error("tensor: zero dimension in shape");
    }
    auto node = std::make_shared<TensorNode>();
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    if (values.size() != n) {
        throw dimension_error("tensor: value count " + std::to_string(values.size()) +
                              " does not match shape product " + std::to_string(n));
    }
    node->shape = std::move(shape);
    node->values = std::move(values);
    node->requires_grad = requires_grad;
    node->seq = detail::g_seq.fetch_add(1, std::memory_order_relaxed);
    return node;
}

// Wraps the output of an op: records parents and the backward rule only when
// gradient tracking is needed, so frozen-model forwards build no graph.
struct OpResult {
    std::shared_ptr<TensorNode> node;

    static OpResult create(std::vector<std::size_t> shape, std::vector<double> values,
                           std::initializer_list<std::shared_ptr<TensorNode>> parents,
                           std::function<void(TensorNode&)> backward_fn) {
        bool needs_grad = false;
        for (const auto& p : parents) needs_grad = needs_grad || p->requires_grad;
        auto node = make_node(std::move(shape), std::move(values), needs_grad);
        if (needs_grad) {
            node->parents.assign(parents.begin(), parents.end());
            node->backward_fn = std::move(backward_fn);
        }
        return {std::move(node)};
    }
};

void require_same_shape(const TensorNode& a, const TensorNode& b, const char* op) {
    if (a.shape != b.shape) {
        throw dimension_error(std::string(op) + ": shape mismatch " +
                              detail::shape_str(a.shape) + " vs " + detail::shape_str(b.shape));
    }
}

// (rows, cols) view: 1-D reads as a single row, 2-D as-is.
std::pair<std::size_t, std::size_t> as_2d(const TensorNode& t, const char* op) {
    if (t.shape.size() == 1) return {1, t.shape[0]};
    if (t.shape.size() == 2) return {t.shape[0], t.shape[1]};
    throw dimension_error(std::string(op) + ": expected 1-D or 2-D tensor, got " +
                          detail::shape_str(t.shape));
}

} // namespace

// ---------------------------------------------------------------------------
// Tensor handle
// ---------------------------------------------------------------------------

TensorNode& Tensor::node() const {
    if (!node_) throw dimension_error("tensor: use of default-constructed tensor");
    return *node_;
}

Tensor Tensor::constant(std::vector<std::size_t> shape, std::vector<double> values) {
    return Tensor(make_node(std::move(shape), std::move(values), false));
}

Tensor Tensor::parameter(std::vector<std::size_t> shape, std::vector<double> values) {
    return Tensor(make_node(std::move(shape), std::move(values), true));
}

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
    std::size_t n = detail::shape_product(shape);
    return Tensor(make_node(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::scalar(double value) {
    return Tensor(make_node({1}, {value}, false));
}

const std::vector<std::size_t>& Tensor::shape() const { return node().shape; }
std::size_t Tensor::size() const { return node().size(); }
std::size_t Tensor::ndim() const { return node().shape.size(); }

std::size_t Tensor::rows() const { return as_2d(node(), "rows").first; }
std::size_t Tensor::cols() const { return as_2d(node(), "cols").second; }

const std::vector<double>& Tensor::values() const { return node().values; }

std::vector<double>& Tensor::mutable_values() {
    TensorNode& n = node();
    if (!n.parents.empty()) {
        throw dimension_error("tensor: mutable_values on a non-leaf tensor");
    }
    return n.values;
}

double Tensor::at(std::size_t i) const { return node().values.at(i); }

double Tensor::at(std::size_t r, std::size_t c) const {
    auto [rows, cols] = as_2d(node(), "at");
    (void)rows;
    return node().values.at(r * cols + c);
}

double Tensor::item() const {
    if (size() != 1) {
        throw dimension_error("tensor: item() on tensor of size " + std::to_string(size()));
    }
    return node().values[0];
}

bool Tensor::requires_grad() const { return node().requires_grad; }

void Tensor::set_requires_grad(bool v) {
    TensorNode& n = node();
    if (!n.parents.empty()) {
        throw dimension_error("tensor: set_requires_grad on a non-leaf tensor");
    }
    n.requires_grad = v;
    if (!v) n.grad.clear();
}

bool Tensor::has_grad() const { return !node().grad.empty(); }

const std::vector<double>& Tensor::grad() const {
    const TensorNode& n = node();
    if (n.grad.empty()) throw dimension_error("tensor: grad() before any backward pass");
    return n.grad;
}

void Tensor::zero_grad() {
    TensorNode& n = node();
    std::fill(n.grad.begin(), n.grad.end(), 0.0);
}

bool Tensor::all_finite() const {
    for (double v : node().values) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

Tensor Tensor::detach() const {
    const TensorNode& n = node();
    return constant(n.shape, n.values);
}

void Tensor::backward() const {
    TensorNode& loss = node();
    if (loss.size() != 1) {
        throw dimension_error("backward: loss must be a scalar, got " +
                              detail::shape_str(loss.shape));
    }
    if (!loss.requires_grad) return;

    // Reachable requires_grad subgraph, then reverse construction order:
    // children run before the parents they feed.
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> seen;
    std::vector<TensorNode*> stack{&loss};
    seen.insert(&loss);
    while (!stack.empty()) {
        TensorNode* cur = stack.back();
        stack.pop_back();
        order.push_back(cur);
        for (const auto& p : cur->parents) {
            if (p->requires_grad && seen.insert(p.get()).second) {
                stack.push_back(p.get());
            }
        }
    }
    std::sort(order.begin(), order.end(),
              [](const TensorNode* a, const TensorNode* b) { return a->seq > b->seq; });

    loss.accumulate(0, 1.0);
    for (TensorNode* n : order) {
        if (n->backward_fn) {
            n->ensure_grad();
            n->backward_fn(*n);
        }
    }
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    auto pa = a.node_;
    auto pb = b.node_;
    if (pa->shape.size() != 2 || pb->shape.size() != 2) {
        throw dimension_error("matmul: both operands must be 2-D");
    }
    const std::size_t m = pa->shape[0], k = pa->shape[1];
    const std::size_t k2 = pb->shape[0], n = pb->shape[1];
    if (k != k2) {
        throw dimension_error("matmul: inner dimensions disagree " +
                              detail::shape_str(pa->shape) + " vs " + detail::shape_str(pb->shape));
    }
    std::vector<double> out(m * n, 0.0);
    const double* A = pa->values.data();
    const double* B = pb->values.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double aik = A[i * k + kk];
            if (aik == 0.0) continue;
            const double* brow = B + kk * n;
            double* crow = out.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
    auto res = OpResult::create(
        {m, n}, std::move(out), {pa, pb}, [pa, pb, m, k, n](TensorNode& self) {
            const double* G = self.grad.data();
            if (pa->requires_grad) {
                pa->ensure_grad();
                const double* B = pb->values.data();
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t kk = 0; kk < k; ++kk) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < n; ++j) acc += G[i * n + j] * B[kk * n + j];
                        pa->grad[i * k + kk] += acc;
                    }
                }
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                const double* A = pa->values.data();
                for (std::size_t kk = 0; kk < k; ++kk) {
                    for (std::size_t j = 0; j < n; ++j) {
                        double acc = 0.0;
                        for (std::size_t i = 0; i < m; ++i) acc += A[i * k + kk] * G[i * n + j];
                        pb->grad[kk * n + j] += acc;
                    }
                }
            }
        });
    return Tensor(res.node);
}

Tensor transpose(const Tensor& a) {
    auto pa = a.node_;
    if (pa->shape.size() != 2) throw dimension_error("transpose: expected 2-D tensor");
    const std::size_t m = pa->shape[0], n = pa->shape[1];
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = pa->values[i * n + j];
    auto res = OpResult::create({n, m}, std::move(out), {pa}, [pa, m, n](TensorNode& self) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) pa->grad[i * n + j] += self.grad[j * m + i];
    });
    return Tensor(res.node);
}

namespace {

enum class BinOp { add, sub, mul };

using NodePtr = std::shared_ptr<TensorNode>;

// Equal shapes, or a size-1 scalar on either side.
NodePtr binary_elementwise(const NodePtr& pa, const NodePtr& pb, BinOp op, const char* name) {
    const bool a_scalar = pa->size() == 1 && pb->size() != 1;
    const bool b_scalar = pb->size() == 1 && pa->size() != 1;
    if (!a_scalar && !b_scalar) require_same_shape(*pa, *pb, name);

    const std::vector<double>& av = pa->values;
    const std::vector<double>& bv = pb->values;
    const std::size_t n = std::max(av.size(), bv.size());
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = a_scalar ? av[0] : av[i];
        const double y = b_scalar ? bv[0] : bv[i];
        out[i] = op == BinOp::add ? x + y : op == BinOp::sub ? x - y : x * y;
    }
    auto shape = a_scalar ? pb->shape : pa->shape;
    auto res = OpResult::create(
        std::move(shape), std::move(out), {pa, pb},
        [pa, pb, a_scalar, b_scalar, op, n](TensorNode& self) {
            const double* G = self.grad.data();
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) {
                    const double g = op == BinOp::mul
                                         ? G[i] * (b_scalar ? pb->values[0] : pb->values[i])
                                         : G[i];
                    pa->grad[a_scalar ? 0 : i] += g;
                }
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) {
                    double g = 0.0;
                    switch (op) {
                        case BinOp::add: g = G[i]; break;
                        case BinOp::sub: g = -G[i]; break;
                        case BinOp::mul: g = G[i] * (a_scalar ? pa->values[0] : pa->values[i]); break;
                    }
                    pb->grad[b_scalar ? 0 : i] += g;
                }
            }
        });
    return res.node;
}

NodePtr unary_elementwise(const NodePtr& pa, const std::function<double(double)>& f,
                          const std::function<double(double, double, double)>& df) {
    // df(x, y, g) -> contribution to dx, where y = f(x)
    std::vector<double> out(pa->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(pa->values[i]);
    auto res = OpResult::create(pa->shape, std::move(out), {pa}, [pa, df](TensorNode& self) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (std::size_t i = 0; i < self.size(); ++i) {
            pa->grad[i] += df(pa->values[i], self.values[i], self.grad[i]);
        }
    });
    return res.node;
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return Tensor(binary_elementwise(a.node_, b.node_, BinOp::add, "add"));
}
Tensor sub(const Tensor& a, const Tensor& b) {
    return Tensor(binary_elementwise(a.node_, b.node_, BinOp::sub, "sub"));
}
Tensor mul(const Tensor& a, const Tensor& b) {
    return Tensor(binary_elementwise(a.node_, b.node_, BinOp::mul, "mul"));
}

Tensor add_scalar(const Tensor& a, double c) {
    return Tensor(unary_elementwise(a.node_, [c](double x) { return x + c; },
                             [](double, double, double g) { return g; }));
}

Tensor scale(const Tensor& a, double c) {
    return Tensor(unary_elementwise(a.node_, [c](double x) { return c * x; },
                             [c](double, double, double g) { return c * g; }));
}

Tensor negate(const Tensor& a) {
    return Tensor(unary_elementwise(a.node_, [](double x) { return -x; },
                             [](double, double, double g) { return -g; }));
}

Tensor relu(const Tensor& a) {
    return Tensor(unary_elementwise(a.node_, [](double x) { return x > 0.0 ? x : 0.0; },
                             [](double x, double, double g) { return x > 0.0 ? g : 0.0; }));
}

Tensor exp(const Tensor& a) {
    return Tensor(unary_elementwise(a.node_, [](double x) { return std::exp(x); },
                             [](double, double y, double g) { return g * y; }));
}

Tensor log(const Tensor& a) {
    for (double v : a.node_->values) {
        if (!(v > 0.0)) {
            throw domain_error("log: non-positive input " + std::to_string(v));
        }
    }
    return Tensor(unary_elementwise(a.node_, [](double x) { return std::log(x); },
                             [](double x, double, double g) { return g / x; }));
}

Tensor add_rowwise(const Tensor& m, const Tensor& row) {
    auto pm = m.node_;
    auto pr = row.node_;
    auto [r, c] = as_2d(*pm, "add_rowwise");
    if (pr->shape.size() != 1 || pr->shape[0] != c) {
        throw dimension_error("add_rowwise: row vector " + detail::shape_str(pr->shape) +
                              " does not match matrix " + detail::shape_str(pm->shape));
    }
    std::vector<double> out(pm->size());
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = pm->values[i * c + j] + pr->values[j];
    auto res = OpResult::create(pm->shape, std::move(out), {pm, pr}, [pm, pr, r, c](TensorNode& self) {
        if (pm->requires_grad) {
            pm->ensure_grad();
            for (std::size_t i = 0; i < self.size(); ++i) pm->grad[i] += self.grad[i];
        }
        if (pr->requires_grad) {
            pr->ensure_grad();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) pr->grad[j] += self.grad[i * c + j];
        }
    });
    return Tensor(res.node);
}

Tensor l2_normalize(const Tensor& v, double eps) {
    if (!(eps > 0.0)) throw domain_error("l2_normalize: eps must be positive");
    auto pv = v.node_;
    auto [r, c] = as_2d(*pv, "l2_normalize");
    std::vector<double> out(pv->size());
    for (std::size_t i = 0; i < r; ++i) {
        const double* x = pv->values.data() + i * c;
        double sq = 0.0;
        for (std::size_t j = 0; j < c; ++j) sq += x[j] * x[j];
        const double denom = std::max(std::sqrt(sq), eps);
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[j] / denom;
    }
    auto res = OpResult::create(pv->shape, std::move(out), {pv}, [pv, r, c, eps](TensorNode& self) {
        if (!pv->requires_grad) return;
        pv->ensure_grad();
        for (std::size_t i = 0; i < r; ++i) {
            const double* x = pv->values.data() + i * c;
            const double* y = self.values.data() + i * c;
            const double* g = self.grad.data() + i * c;
            double sq = 0.0;
            for (std::size_t j = 0; j < c; ++j) sq += x[j] * x[j];
            const double norm = std::sqrt(sq);
            if (norm >= eps) {
                double dot = 0.0;
                for (std::size_t j = 0; j < c; ++j) dot += g[j] * y[j];
                for (std::size_t j = 0; j < c; ++j)
                    pv->grad[i * c + j] += (g[j] - y[j] * dot) / norm;
            } else {
                // denominator pinned at eps: the map is linear here
                for (std::size_t j = 0; j < c; ++j) pv->grad[i * c + j] += g[j] / eps;
            }
        }
    });
    return Tensor(res.node);
}

Tensor softmax(const Tensor& z) {
    auto pz = z.node_;
    auto [r, c] = as_2d(*pz, "softmax");
    std::vector<double> out(pz->size());
    for (std::size_t i = 0; i < r; ++i) {
        const double* x = pz->values.data() + i * c;
        double mx = x[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            out[i * c + j] = std::exp(x[j] - mx);
            denom += out[i * c + j];
        }
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= denom;
    }
    auto res = OpResult::create(pz->shape, std::move(out), {pz}, [pz, r, c](TensorNode& self) {
        if (!pz->requires_grad) return;
        pz->ensure_grad();
        for (std::size_t i = 0; i < r; ++i) {
            const double* y = self.values.data() + i * c;
            const double* g = self.grad.data() + i * c;
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += g[j] * y[j];
            for (std::size_t j = 0; j < c; ++j) pz->grad[i * c + j] += y[j] * (g[j] - dot);
        }
    });
    return Tensor(res.node);
}

Tensor log_softmax(const Tensor& z) {
    auto pz = z.node_;
    auto [r, c] = as_2d(*pz, "log_softmax");
    std::vector<double> out(pz->size());
    for (std::size_t i = 0; i < r; ++i) {
        const double* x = pz->values.data() + i * c;
        double mx = x[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < c; ++j) denom += std::exp(x[j] - mx);
        const double lse = mx + std::log(denom);
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[j] - lse;
    }
    auto res = OpResult::create(pz->shape, std::move(out), {pz}, [pz, r, c](TensorNode& self) {
        if (!pz->requires_grad) return;
        pz->ensure_grad();
        for (std::size_t i = 0; i < r; ++i) {
            const double* y = self.values.data() + i * c;
            const double* g = self.grad.data() + i * c;
            double gsum = 0.0;
            for (std::size_t j = 0; j < c; ++j) gsum += g[j];
            for (std::size_t j = 0; j < c; ++j)
                pz->grad[i * c + j] += g[j] - std::exp(y[j]) * gsum;
        }
    });
    return Tensor(res.node);
}

Tensor sum(const Tensor& t) {
    auto pt = t.node_;
    double acc = 0.0;
    for (double v : pt->values) acc += v;
    auto res = OpResult::create({1}, {acc}, {pt}, [pt](TensorNode& self) {
        if (!pt->requires_grad) return;
        pt->ensure_grad();
        const double g = self.grad[0];
        for (std::size_t i = 0; i < pt->size(); ++i) pt->grad[i] += g;
    });
    return Tensor(res.node);
}

Tensor mean(const Tensor& t) {
    const double inv = 1.0 / static_cast<double>(t.size());
    return scale(sum(t), inv);
}

} // namespace cbd
