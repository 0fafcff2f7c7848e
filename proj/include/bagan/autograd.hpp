#pragma once

#include "bagan/tensor.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

// Reverse-mode automatic differentiation over dense double tensors.
//
// Backward rules are written in terms of the same differentiable ops, so a
// gradient computed with create_graph = true is itself a graph node and can be
// differentiated again. The gradient penalty relies on this: it needs the
// gradient (w.r.t. parameters) of a norm of a gradient (w.r.t. the input).
//
// Image tensors are NHWC; convolution weights are [kh, kw, in, out].
namespace bagan::ag {

class Var;
struct Node;

// Given dL/d(output), returns dL/d(input_i) for each input. Entries whose
// `wanted` flag is false may be left undefined.
using BackwardFn = std::function<std::vector<Var>(const Var& grad, const std::vector<bool>& wanted)>;

struct Node {
    Tensor value;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    BackwardFn backward;
    const char* op = "leaf";
};

class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false);
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    bool defined() const { return static_cast<bool>(node_); }
    const Tensor& value() const { return node_->value; }
    // In-place access for optimizers and weight transfer; only valid on leaves.
    Tensor& mutable_value();
    const Shape& shape() const { return node_->value.shape(); }
    std::int64_t dim(int axis) const { return node_->value.dim(axis); }
    double item() const { return node_->value.item(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    bool is_leaf() const { return node_ && !node_->backward; }
    const char* op() const { return node_->op; }

    Var detach() const { return Var(node_->value, false); }
    const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

// Graph recording is on by default; NoGradGuard turns it off in a scope.
class GradMode {
public:
    static bool enabled();
    static void set_enabled(bool on);
};

class NoGradGuard {
public:
    NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set_enabled(false); }
    ~NoGradGuard() { GradMode::set_enabled(prev_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// Gradients of a scalar `output` with respect to each of `inputs`. Inputs that
// do not influence the output receive zeros.
std::vector<Var> grad(const Var& output, std::span<const Var> inputs, bool create_graph = false);
inline Var grad(const Var& output, const Var& input, bool create_graph = false)
{
    return grad(output, std::span<const Var>(&input, 1), create_graph)[0];
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
// Multiplication by a constant tensor of the same shape.
Var mul_const(const Var& a, std::shared_ptr<const Tensor> c);
Var square(const Var& a);

Var leaky_relu(const Var& x, double slope);
Var tanh(const Var& x);
Var sigmoid(const Var& x);
// log(1 + e^x), evaluated without overflow.
Var softplus(const Var& x);
// sqrt with derivative 0 at 0 (first-order differentiable only).
Var sqrt(const Var& x);

// ---------------------------------------------------------------------------
// Reductions and broadcasts. "rows" treats x as [M, F] with F the last axis.
// ---------------------------------------------------------------------------
Var sum(const Var& a);
Var mean(const Var& a);
Var expand(const Var& scalar, const Shape& shape);
Var reshape(const Var& a, const Shape& shape);
Var sum_rows(const Var& x);                          // [.., F] -> [F]
Var broadcast_rows(const Var& b, const Shape& shape);  // [F] -> shape (last axis F)
Var bias_add(const Var& x, const Var& b);            // x[..., f] + b[f]
Var sum_per_sample(const Var& x);                    // [N, ...] -> [N]
Var broadcast_per_sample(const Var& v, const Shape& shape);

// ---------------------------------------------------------------------------
// Linear algebra and convolution
// ---------------------------------------------------------------------------
Var matmul(const Var& a, const Var& b, bool trans_a = false, bool trans_b = false);

struct ConvGeometry {
    int stride = 2;
    int pad = 1;
};
// x [N,H,W,C], w [k,k,C,O] -> [N,Ho,Wo,O]
Var conv2d(const Var& x, const Var& w, ConvGeometry g);
// Adjoint of conv2d in x (the transposed convolution). gy [N,Ho,Wo,O] -> in_shape.
Var conv2d_input_grad(const Var& gy, const Var& w, const Shape& in_shape, ConvGeometry g);
// Adjoint of conv2d in w.
Var conv2d_weight_grad(const Var& x, const Var& gy, const Shape& w_shape, ConvGeometry g);

Shape conv2d_output_shape(const Shape& x, const Shape& w, ConvGeometry g);

// ---------------------------------------------------------------------------
// Indexing
// ---------------------------------------------------------------------------
Var gather_rows(const Var& table, std::span<const std::int64_t> idx);
Var scatter_add_rows(const Var& src, std::span<const std::int64_t> idx, std::int64_t rows);
Var concat_rows(std::span<const Var> parts);
Var slice_rows(const Var& x, std::int64_t begin, std::int64_t end);
Var pad_rows(const Var& x, std::int64_t begin, std::int64_t total);

// Mean over rows of -log softmax(logits)[label]. First-order differentiable.
Var softmax_cross_entropy(const Var& logits, std::span<const int> labels);

// ---------------------------------------------------------------------------
// Batch normalization over all axes but the last. First-order differentiable.
// ---------------------------------------------------------------------------
struct BatchStats {
    Tensor mean;
    Tensor var;  // biased (population) variance
};
Var batch_norm_train(const Var& x, const Var& gamma, const Var& beta, double eps, BatchStats* stats = nullptr);
Var batch_norm_eval(const Var& x, const Var& gamma, const Var& beta, const Tensor& running_mean,
                    const Tensor& running_var, double eps);

} // namespace bagan::ag
