#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

namespace cbd {

namespace detail {

/// One node of the define-by-run computation graph. The graph is rebuilt on
/// every forward pass: intermediate nodes are owned by the tensors downstream
/// of them and free as soon as the loss handle goes out of scope. Leaf nodes
/// (parameters, constants) have no parents and persist across passes.
struct TensorNode {
    std::vector<std::size_t> shape;
    std::vector<double> values;
    std::vector<double> grad;   // allocated lazily on first accumulation
    bool requires_grad = false;

    // Recorded operation: inputs plus the rule that routes this node's grad
    // into them. Construction order (seq) is the topological order used by
    // backward; each reachable node is visited exactly once.
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;
    std::uint64_t seq = 0;

    std::size_t size() const noexcept { return values.size(); }
    void ensure_grad();
    void accumulate(std::size_t i, double g);
};

} // namespace detail

/// Dense row-major tensor of 64-bit reals with reverse-mode autodiff.
/// Value-semantics handle: copies share the underlying node. Values are
/// immutable once created except for grad accumulation and explicit
/// parameter updates through mutable_values() on leaves.
class Tensor {
public:
    Tensor() = default;

    /// Leaf constant (requires_grad=false).
    static Tensor constant(std::vector<std::size_t> shape, std::vector<double> values);
    /// Leaf with gradient tracking; the unit of optimization.
    static Tensor parameter(std::vector<std::size_t> shape, std::vector<double> values);
    static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
    static Tensor scalar(double value);

    bool defined() const noexcept { return node_ != nullptr; }
    const std::vector<std::size_t>& shape() const;
    std::size_t size() const;
    std::size_t ndim() const;
    /// 2-D accessors; a 1-D tensor reads as a single row.
    std::size_t rows() const;
    std::size_t cols() const;

    const std::vector<double>& values() const;
    /// Direct value access for in-place parameter updates. Leaf tensors only:
    /// mutating an interior node would desynchronize the recorded graph.
    std::vector<double>& mutable_values();
    double at(std::size_t i) const;
    double at(std::size_t r, std::size_t c) const;
    /// Value of a scalar (size-1) tensor.
    double item() const;

    bool requires_grad() const;
    void set_requires_grad(bool v);
    /// True once a gradient buffer has been allocated (i.e. some backward
    /// pass reached this tensor).
    bool has_grad() const;
    const std::vector<double>& grad() const;
    void zero_grad();

    /// All stored values finite (the validity check for NaN/Inf error states).
    bool all_finite() const;

    /// Constant copy cut loose from the graph: same values, no parents,
    /// requires_grad=false. The detachment primitive for teacher outputs.
    Tensor detach() const;

    /// Reverse-mode sweep from a scalar. Gradients accumulate into every
    /// reachable requires_grad tensor; the caller zeroes between steps, and a
    /// second call without zeroing adds the same contribution again.
    void backward() const;

    // -- graph-recording operations ------------------------------------

    friend Tensor matmul(const Tensor& a, const Tensor& b);
    friend Tensor transpose(const Tensor& a);
    friend Tensor add(const Tensor& a, const Tensor& b);
    friend Tensor sub(const Tensor& a, const Tensor& b);
    friend Tensor mul(const Tensor& a, const Tensor& b);
    friend Tensor add_scalar(const Tensor& a, double c);
    friend Tensor scale(const Tensor& a, double c);
    friend Tensor negate(const Tensor& a);
    friend Tensor relu(const Tensor& a);
    friend Tensor exp(const Tensor& a);
    friend Tensor log(const Tensor& a);
    friend Tensor add_rowwise(const Tensor& m, const Tensor& row);
    friend Tensor l2_normalize(const Tensor& v, double eps);
    friend Tensor softmax(const Tensor& z);
    friend Tensor log_softmax(const Tensor& z);
    friend Tensor sum(const Tensor& t);
    friend Tensor mean(const Tensor& t);

private:
    explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}
    detail::TensorNode& node() const;

    std::shared_ptr<detail::TensorNode> node_;
};

/// Standard matrix product [m×k]·[k×n] -> [m×n].
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

/// Elementwise ops. Binary ops accept equal shapes or a scalar (size-1)
/// tensor on either side; no other broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double c);
Tensor scale(const Tensor& a, double c);
Tensor negate(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);

/// [m×n] + [n]: adds the row vector to every row (bias add).
Tensor add_rowwise(const Tensor& m, const Tensor& row);

/// Divides each trailing-axis vector by max(l2-norm, eps). Rows with norm
/// below eps shrink toward zero instead of blowing up.
Tensor l2_normalize(const Tensor& v, double eps = 1e-12);

/// Row-wise softmax / log-softmax with max subtraction.
Tensor softmax(const Tensor& z);
Tensor log_softmax(const Tensor& z);

/// Reduction to scalar.
Tensor sum(const Tensor& t);
Tensor mean(const Tensor& t);

} // namespace cbd
