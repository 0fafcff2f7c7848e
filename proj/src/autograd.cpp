#include "bagan/autograd.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>

namespace bagan::ag {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

thread_local bool g_grad_enabled = true;

bool tracking(std::initializer_list<const Var*> inputs)
{
    if (!GradMode::enabled())
        return false;
    return std::any_of(inputs.begin(), inputs.end(), [](const Var* v) { return v->requires_grad(); });
}

Var make_op(Tensor value, std::initializer_list<const Var*> inputs, BackwardFn fn, const char* name)
{
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->op = name;
    if (tracking(inputs)) {
        node->requires_grad = true;
        for (const Var* in : inputs)
            node->inputs.push_back(in->node());
        node->backward = std::move(fn);
    }
    return Var(std::move(node));
}

// Variant whose backward rule reads the op's own output value.
template <class F>
Var make_op_self(Tensor value, std::initializer_list<const Var*> inputs, F fn, const char* name)
{
    Var out = make_op(std::move(value), inputs, nullptr, name);
    if (out.requires_grad()) {
        std::weak_ptr<Node> self = out.node();
        out.node()->backward = [self, fn](const Var& g, const std::vector<bool>& wanted) {
            auto node = self.lock();
            return fn(*node, g, wanted);
        };
    }
    return out;
}

void require_first_order(const char* op)
{
    if (GradMode::enabled())
        throw std::logic_error(std::string("higher-order gradient through '") + op + "' is not supported");
}

void check_same_shape(const Var& a, const Var& b, const char* op)
{
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs "
                                    + to_string(b.shape()));
}

template <class F>
Tensor map_unary(const Tensor& a, F f)
{
    Tensor out(a.shape());
    const double* src = a.data();
    double* dst = out.data();
    for (std::int64_t i = 0; i < a.size(); ++i)
        dst[i] = f(src[i]);
    return out;
}

template <class F>
Tensor map_binary(const Tensor& a, const Tensor& b, F f)
{
    Tensor out(a.shape());
    const double* pa = a.data();
    const double* pb = b.data();
    double* dst = out.data();
    for (std::int64_t i = 0; i < a.size(); ++i)
        dst[i] = f(pa[i], pb[i]);
    return out;
}

double stable_sigmoid(double x)
{
    if (x >= 0)
        return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

std::int64_t last_dim(const Shape& s)
{
    if (s.empty())
        throw std::invalid_argument("operation requires rank >= 1");
    return s.back();
}

// ---------------------------------------------------------------------------
// Convolution kernels (NHWC, weights [k, k, C, O])
// ---------------------------------------------------------------------------
struct ConvDims {
    std::int64_t n, h, w, c, k, o, ho, wo;
    int stride, pad;
    std::int64_t patch() const { return k * k * c; }
    std::int64_t rows() const { return n * ho * wo; }
};

ConvDims conv_dims(const Shape& x, const Shape& w, ConvGeometry g)
{
    if (x.size() != 4 || w.size() != 4)
        throw std::invalid_argument("conv2d expects rank-4 input and weight, got " + to_string(x) + " and "
                                    + to_string(w));
    if (w[0] != w[1])
        throw std::invalid_argument("conv2d expects square kernels");
    if (x[3] != w[2])
        throw std::invalid_argument("conv2d channel mismatch: input " + to_string(x) + " weight " + to_string(w));
    ConvDims d{x[0], x[1], x[2], x[3], w[0], w[3], 0, 0, g.stride, g.pad};
    d.ho = (d.h + 2 * g.pad - d.k) / g.stride + 1;
    d.wo = (d.w + 2 * g.pad - d.k) / g.stride + 1;
    if (d.ho <= 0 || d.wo <= 0)
        throw std::invalid_argument("conv2d output would be empty for input " + to_string(x));
    return d;
}

// Rows are output pixels (n, oh, ow); columns are (ki, kj, c), matching the
// row-major [k, k, C, O] weight layout.
RowMat im2col(const double* x, const ConvDims& d)
{
    RowMat cols(d.rows(), d.patch());
    const std::int64_t p = d.patch();
    const std::int64_t kc = d.k * d.c;
    for (std::int64_t n = 0; n < d.n; ++n)
        for (std::int64_t oh = 0; oh < d.ho; ++oh) {
            double* base = cols.data() + (n * d.ho + oh) * d.wo * p;
            for (std::int64_t ki = 0; ki < d.k; ++ki) {
                const std::int64_t ih = oh * d.stride - d.pad + ki;
                if (ih < 0 || ih >= d.h) {
                    for (std::int64_t ow = 0; ow < d.wo; ++ow)
                        std::fill_n(base + ow * p + ki * kc, kc, 0.0);
                    continue;
                }
                const double* xrow = x + (n * d.h + ih) * d.w * d.c;
                for (std::int64_t ow = 0; ow < d.wo; ++ow) {
                    double* dst = base + ow * p + ki * kc;
                    const std::int64_t iw0 = ow * d.stride - d.pad;
                    if (iw0 >= 0 && iw0 + d.k <= d.w) {
                        std::copy_n(xrow + iw0 * d.c, kc, dst);
                        continue;
                    }
                    for (std::int64_t kj = 0; kj < d.k; ++kj) {
                        const std::int64_t iw = iw0 + kj;
                        if (iw < 0 || iw >= d.w)
                            std::fill_n(dst + kj * d.c, d.c, 0.0);
                        else
                            std::copy_n(xrow + iw * d.c, d.c, dst + kj * d.c);
                    }
                }
            }
        }
    return cols;
}

void col2im(const RowMat& cols, const ConvDims& d, double* x)
{
    std::fill_n(x, d.n * d.h * d.w * d.c, 0.0);
    const std::int64_t p = d.patch();
    const std::int64_t kc = d.k * d.c;
    for (std::int64_t n = 0; n < d.n; ++n)
        for (std::int64_t oh = 0; oh < d.ho; ++oh) {
            const double* base = cols.data() + (n * d.ho + oh) * d.wo * p;
            for (std::int64_t ki = 0; ki < d.k; ++ki) {
                const std::int64_t ih = oh * d.stride - d.pad + ki;
                if (ih < 0 || ih >= d.h)
                    continue;
                double* xrow = x + (n * d.h + ih) * d.w * d.c;
                for (std::int64_t ow = 0; ow < d.wo; ++ow) {
                    const double* src = base + ow * p + ki * kc;
                    const std::int64_t iw0 = ow * d.stride - d.pad;
                    if (iw0 >= 0 && iw0 + d.k <= d.w) {
                        double* dst = xrow + iw0 * d.c;
                        for (std::int64_t j = 0; j < kc; ++j)
                            dst[j] += src[j];
                        continue;
                    }
                    for (std::int64_t kj = 0; kj < d.k; ++kj) {
                        const std::int64_t iw = iw0 + kj;
                        if (iw < 0 || iw >= d.w)
                            continue;
                        double* dst = xrow + iw * d.c;
                        for (std::int64_t c = 0; c < d.c; ++c)
                            dst[c] += src[kj * d.c + c];
                    }
                }
            }
        }
}

Tensor conv_forward_kernel(const Tensor& x, const Tensor& w, const ConvDims& d)
{
    RowMat cols = im2col(x.data(), d);
    Tensor y(Shape{d.n, d.ho, d.wo, d.o});
    MutMap Y(y.data(), d.rows(), d.o);
    ConstMap W(w.data(), d.patch(), d.o);
    Y.noalias() = cols * W;
    return y;
}

Tensor conv_input_grad_kernel(const Tensor& gy, const Tensor& w, const ConvDims& d)
{
    ConstMap G(gy.data(), d.rows(), d.o);
    ConstMap W(w.data(), d.patch(), d.o);
    RowMat cols(d.rows(), d.patch());
    cols.noalias() = G * W.transpose();
    Tensor gx(Shape{d.n, d.h, d.w, d.c});
    col2im(cols, d, gx.data());
    return gx;
}

Tensor conv_weight_grad_kernel(const Tensor& x, const Tensor& gy, const ConvDims& d)
{
    RowMat cols = im2col(x.data(), d);
    ConstMap G(gy.data(), d.rows(), d.o);
    Tensor gw(Shape{d.k, d.k, d.c, d.o});
    MutMap GW(gw.data(), d.patch(), d.o);
    GW.noalias() = cols.transpose() * G;
    return gw;
}

} // namespace

// ---------------------------------------------------------------------------
// Var / GradMode
// ---------------------------------------------------------------------------
Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>())
{
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

Tensor& Var::mutable_value()
{
    if (!is_leaf())
        throw std::logic_error("mutable_value() on a non-leaf variable");
    return node_->value;
}

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool on) { g_grad_enabled = on; }

// ---------------------------------------------------------------------------
// grad
// ---------------------------------------------------------------------------
std::vector<Var> grad(const Var& output, std::span<const Var> inputs, bool create_graph)
{
    if (!output.defined() || output.value().size() != 1)
        throw std::invalid_argument("grad() requires a single-element output");

    std::vector<Var> result;
    result.reserve(inputs.size());
    auto zeros_for_all = [&] {
        for (const Var& in : inputs)
            result.emplace_back(Tensor(in.shape()));
        return result;
    };
    if (!output.requires_grad())
        return zeros_for_all();

    // Post-order over the tracked subgraph: inputs precede their consumers.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{output.node().get(), 0}};
    visited.insert(output.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next++].get();
            if (child->requires_grad && visited.insert(child).second)
                stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    std::unordered_set<Node*> targets;
    for (const Var& in : inputs)
        targets.insert(in.node().get());
    std::unordered_map<Node*, bool> needed;
    for (Node* node : order) {
        bool n = targets.count(node) > 0;
        for (const auto& in : node->inputs)
            if (in->requires_grad && needed[in.get()])
                n = true;
        needed[node] = n;
    }

    const bool prev_mode = GradMode::enabled();
    GradMode::set_enabled(create_graph);
    std::unordered_map<Node*, Var> grads;
    try {
        grads[output.node().get()] = Var(Tensor(output.shape(), 1.0));
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node* node = *it;
            auto g = grads.find(node);
            if (g == grads.end() || !node->backward || !needed[node])
                continue;
            std::vector<bool> wanted(node->inputs.size());
            bool any = false;
            for (std::size_t i = 0; i < node->inputs.size(); ++i) {
                wanted[i] = node->inputs[i]->requires_grad && needed[node->inputs[i].get()];
                any = any || wanted[i];
            }
            if (!any)
                continue;
            const Var g_out = g->second;
            if (!targets.count(node))
                grads.erase(g);
            std::vector<Var> gin = node->backward(g_out, wanted);
            for (std::size_t i = 0; i < gin.size() && i < node->inputs.size(); ++i) {
                if (!wanted[i] || !gin[i].defined())
                    continue;
                Node* in = node->inputs[i].get();
                auto existing = grads.find(in);
                if (existing == grads.end())
                    grads.emplace(in, gin[i]);
                else
                    existing->second = add(existing->second, gin[i]);
            }
        }
    } catch (...) {
        GradMode::set_enabled(prev_mode);
        throw;
    }
    GradMode::set_enabled(prev_mode);

    for (const Var& in : inputs) {
        auto g = grads.find(in.node().get());
        result.push_back(g != grads.end() ? g->second : Var(Tensor(in.shape())));
    }
    return result;
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------
Var add(const Var& a, const Var& b)
{
    check_same_shape(a, b, "add");
    return make_op(map_binary(a.value(), b.value(), [](double x, double y) { return x + y; }), {&a, &b},
                   [](const Var& g, const std::vector<bool>&) { return std::vector<Var>{g, g}; }, "add");
}

Var sub(const Var& a, const Var& b)
{
    check_same_shape(a, b, "sub");
    return make_op(map_binary(a.value(), b.value(), [](double x, double y) { return x - y; }), {&a, &b},
                   [](const Var& g, const std::vector<bool>& w) {
                       return std::vector<Var>{g, w[1] ? neg(g) : Var()};
                   },
                   "sub");
}

Var mul(const Var& a, const Var& b)
{
    check_same_shape(a, b, "mul");
    return make_op(map_binary(a.value(), b.value(), [](double x, double y) { return x * y; }), {&a, &b},
                   [a, b](const Var& g, const std::vector<bool>& w) {
                       return std::vector<Var>{w[0] ? mul(g, b) : Var(), w[1] ? mul(g, a) : Var()};
                   },
                   "mul");
}

Var neg(const Var& a)
{
    return make_op(map_unary(a.value(), [](double x) { return -x; }), {&a},
                   [](const Var& g, const std::vector<bool>&) { return std::vector<Var>{neg(g)}; }, "neg");
}

Var scale(const Var& a, double s)
{
    return make_op(map_unary(a.value(), [s](double x) { return s * x; }), {&a},
                   [s](const Var& g, const std::vector<bool>&) { return std::vector<Var>{scale(g, s)}; },
                   "scale");
}

Var add_scalar(const Var& a, double s)
{
    return make_op(map_unary(a.value(), [s](double x) { return x + s; }), {&a},
                   [](const Var& g, const std::vector<bool>&) { return std::vector<Var>{g}; }, "add_scalar");
}

Var mul_const(const Var& a, std::shared_ptr<const Tensor> c)
{
    if (a.shape() != c->shape())
        throw std::invalid_argument("mul_const: shape mismatch " + to_string(a.shape()) + " vs "
                                    + to_string(c->shape()));
    return make_op(map_binary(a.value(), *c, [](double x, double y) { return x * y; }), {&a},
                   [c](const Var& g, const std::vector<bool>&) { return std::vector<Var>{mul_const(g, c)}; },
                   "mul_const");
}

Var square(const Var& a) { return mul(a, a); }

Var leaky_relu(const Var& x, double slope)
{
    const Tensor& xv = x.value();
    Tensor y = map_unary(xv, [slope](double v) { return v > 0 ? v : slope * v; });
    if (!tracking({&x}))
        return Var(std::move(y));
    auto mask = std::make_shared<Tensor>(map_unary(xv, [slope](double v) { return v > 0 ? 1.0 : slope; }));
    // The derivative is piecewise constant, so the mask product is exact to all orders.
    return make_op(std::move(y), {&x},
                   [mask](const Var& g, const std::vector<bool>&) { return std::vector<Var>{mul_const(g, mask)}; },
                   "leaky_relu");
}

Var tanh(const Var& x)
{
    return make_op_self(
        map_unary(x.value(), [](double v) { return std::tanh(v); }), {&x},
        [x](const Node& self, const Var& g, const std::vector<bool>&) {
            if (GradMode::enabled()) {
                Var t = tanh(x);
                return std::vector<Var>{mul(g, add_scalar(neg(square(t)), 1.0))};
            }
            auto d = std::make_shared<Tensor>(map_unary(self.value, [](double y) { return 1.0 - y * y; }));
            return std::vector<Var>{mul_const(g, d)};
        },
        "tanh");
}

Var sigmoid(const Var& x)
{
    return make_op_self(map_unary(x.value(), stable_sigmoid), {&x},
                        [](const Node& self, const Var& g, const std::vector<bool>&) {
                            require_first_order("sigmoid");
                            auto d = std::make_shared<Tensor>(
                                map_unary(self.value, [](double s) { return s * (1.0 - s); }));
                            return std::vector<Var>{mul_const(g, d)};
                        },
                        "sigmoid");
}

Var softplus(const Var& x)
{
    return make_op(map_unary(x.value(),
                             [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); }),
                   {&x},
                   [x](const Var& g, const std::vector<bool>&) {
                       if (GradMode::enabled())
                           return std::vector<Var>{mul(g, sigmoid(x))};
                       auto d = std::make_shared<Tensor>(map_unary(x.value(), stable_sigmoid));
                       return std::vector<Var>{mul_const(g, d)};
                   },
                   "softplus");
}

Var sqrt(const Var& x)
{
    return make_op_self(map_unary(x.value(),
                                  [](double v) {
                                      if (v < 0)
                                          throw std::domain_error("sqrt of negative value");
                                      return std::sqrt(v);
                                  }),
                        {&x},
                        [](const Node& self, const Var& g, const std::vector<bool>&) {
                            require_first_order("sqrt");
                            auto d = std::make_shared<Tensor>(
                                map_unary(self.value, [](double s) { return s > 0 ? 0.5 / s : 0.0; }));
                            return std::vector<Var>{mul_const(g, d)};
                        },
                        "sqrt");
}

// ---------------------------------------------------------------------------
// Reductions / broadcasts
// ---------------------------------------------------------------------------
Var sum(const Var& a)
{
    double s = 0;
    for (double v : a.value().values())
        s += v;
    const Shape shape = a.shape();
    return make_op(Tensor::scalar(s), {&a},
                   [shape](const Var& g, const std::vector<bool>&) { return std::vector<Var>{expand(g, shape)}; },
                   "sum");
}

Var mean(const Var& a)
{
    if (a.value().size() == 0)
        throw std::invalid_argument("mean of empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var expand(const Var& scalar, const Shape& shape)
{
    if (scalar.value().size() != 1)
        throw std::invalid_argument("expand expects a single-element tensor");
    return make_op(Tensor(shape, scalar.value()[0]), {&scalar},
                   [](const Var& g, const std::vector<bool>&) { return std::vector<Var>{sum(g)}; }, "expand");
}

Var reshape(const Var& a, const Shape& shape)
{
    const Shape orig = a.shape();
    return make_op(a.value().reshaped(shape), {&a},
                   [orig](const Var& g, const std::vector<bool>&) { return std::vector<Var>{reshape(g, orig)}; },
                   "reshape");
}

Var sum_rows(const Var& x)
{
    const std::int64_t f = last_dim(x.shape());
    const std::int64_t m = f == 0 ? 0 : x.value().size() / f;
    Tensor out(Shape{f});
    ConstMap X(x.value().data(), m, f);
    Eigen::Map<Eigen::RowVectorXd>(out.data(), f) = X.colwise().sum();
    const Shape shape = x.shape();
    return make_op(std::move(out), {&x},
                   [shape](const Var& g, const std::vector<bool>&) {
                       return std::vector<Var>{broadcast_rows(g, shape)};
                   },
                   "sum_rows");
}

Var broadcast_rows(const Var& b, const Shape& shape)
{
    const std::int64_t f = last_dim(shape);
    if (b.shape() != Shape{f})
        throw std::invalid_argument("broadcast_rows: " + to_string(b.shape()) + " onto " + to_string(shape));
    Tensor out(shape);
    const std::int64_t m = f == 0 ? 0 : out.size() / f;
    MutMap(out.data(), m, f).rowwise() = Eigen::Map<const Eigen::RowVectorXd>(b.value().data(), f);
    return make_op(std::move(out), {&b},
                   [](const Var& g, const std::vector<bool>&) { return std::vector<Var>{sum_rows(g)}; },
                   "broadcast_rows");
}

Var bias_add(const Var& x, const Var& b)
{
    const std::int64_t f = last_dim(x.shape());
    if (b.shape() != Shape{f})
        throw std::invalid_argument("bias_add: bias " + to_string(b.shape()) + " for input " + to_string(x.shape()));
    Tensor out = x.value();
    const std::int64_t m = f == 0 ? 0 : out.size() / f;
    MutMap(out.data(), m, f).rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.value().data(), f);
    return make_op(std::move(out), {&x, &b},
                   [](const Var& g, const std::vector<bool>& w) {
                       return std::vector<Var>{g, w[1] ? sum_rows(g) : Var()};
                   },
                   "bias_add");
}

Var sum_per_sample(const Var& x)
{
    if (x.shape().empty())
        throw std::invalid_argument("sum_per_sample on scalar");
    const std::int64_t n = x.shape()[0];
    const std::int64_t f = n == 0 ? 0 : x.value().size() / n;
    Tensor out(Shape{n});
    ConstMap X(x.value().data(), n, f);
    Eigen::Map<Eigen::VectorXd>(out.data(), n) = X.rowwise().sum();
    const Shape shape = x.shape();
    return make_op(std::move(out), {&x},
                   [shape](const Var& g, const std::vector<bool>&) {
                       return std::vector<Var>{broadcast_per_sample(g, shape)};
                   },
                   "sum_per_sample");
}

Var broadcast_per_sample(const Var& v, const Shape& shape)
{
    if (shape.empty() || v.shape() != Shape{shape[0]})
        throw std::invalid_argument("broadcast_per_sample: " + to_string(v.shape()) + " onto " + to_string(shape));
    Tensor out(shape);
    const std::int64_t n = shape[0];
    const std::int64_t f = n == 0 ? 0 : out.size() / n;
    MutMap(out.data(), n, f).colwise() = Eigen::Map<const Eigen::VectorXd>(v.value().data(), n);
    return make_op(std::move(out), {&v},
                   [](const Var& g, const std::vector<bool>&) { return std::vector<Var>{sum_per_sample(g)}; },
                   "broadcast_per_sample");
}

// ---------------------------------------------------------------------------
// matmul / conv
// ---------------------------------------------------------------------------
Var matmul(const Var& a, const Var& b, bool trans_a, bool trans_b)
{
    if (a.shape().size() != 2 || b.shape().size() != 2)
        throw std::invalid_argument("matmul expects rank-2 operands");
    const auto& av = a.value();
    const auto& bv = b.value();
    ConstMap A(av.data(), av.dim(0), av.dim(1));
    ConstMap B(bv.data(), bv.dim(0), bv.dim(1));
    const std::int64_t m = trans_a ? av.dim(1) : av.dim(0);
    const std::int64_t k = trans_a ? av.dim(0) : av.dim(1);
    const std::int64_t k2 = trans_b ? bv.dim(1) : bv.dim(0);
    const std::int64_t n = trans_b ? bv.dim(0) : bv.dim(1);
    if (k != k2)
        throw std::invalid_argument("matmul inner dimension mismatch: " + to_string(av.shape()) + " x "
                                    + to_string(bv.shape()));
    Tensor out(Shape{m, n});
    MutMap C(out.data(), m, n);
    if (!trans_a && !trans_b)
        C.noalias() = A * B;
    else if (trans_a && !trans_b)
        C.noalias() = A.transpose() * B;
    else if (!trans_a && trans_b)
        C.noalias() = A * B.transpose();
    else
        C.noalias() = A.transpose() * B.transpose();

    return make_op(std::move(out), {&a, &b},
                   [a, b, trans_a, trans_b](const Var& g, const std::vector<bool>& w) {
                       Var ga, gb;
                       if (!trans_a && !trans_b) {
                           if (w[0]) ga = matmul(g, b, false, true);
                           if (w[1]) gb = matmul(a, g, true, false);
                       } else if (trans_a && !trans_b) {
                           if (w[0]) ga = matmul(b, g, false, true);
                           if (w[1]) gb = matmul(a, g, false, false);
                       } else if (!trans_a && trans_b) {
                           if (w[0]) ga = matmul(g, b, false, false);
                           if (w[1]) gb = matmul(g, a, true, false);
                       } else {
                           if (w[0]) ga = matmul(b, g, true, true);
                           if (w[1]) gb = matmul(g, a, true, true);
                       }
                       return std::vector<Var>{ga, gb};
                   },
                   "matmul");
}

Shape conv2d_output_shape(const Shape& x, const Shape& w, ConvGeometry g)
{
    const ConvDims d = conv_dims(x, w, g);
    return Shape{d.n, d.ho, d.wo, d.o};
}

Var conv2d(const Var& x, const Var& w, ConvGeometry geo)
{
    const ConvDims d = conv_dims(x.shape(), w.shape(), geo);
    Tensor y = conv_forward_kernel(x.value(), w.value(), d);
    const Shape xs = x.shape();
    const Shape ws = w.shape();
    return make_op(std::move(y), {&x, &w},
                   [x, w, xs, ws, geo](const Var& g, const std::vector<bool>& wanted) {
                       return std::vector<Var>{wanted[0] ? conv2d_input_grad(g, w, xs, geo) : Var(),
                                               wanted[1] ? conv2d_weight_grad(x, g, ws, geo) : Var()};
                   },
                   "conv2d");
}

Var conv2d_input_grad(const Var& gy, const Var& w, const Shape& in_shape, ConvGeometry geo)
{
    const ConvDims d = conv_dims(in_shape, w.shape(), geo);
    if (gy.shape() != Shape{d.n, d.ho, d.wo, d.o})
        throw std::invalid_argument("conv2d_input_grad: gradient " + to_string(gy.shape()) + " does not match input "
                                    + to_string(in_shape) + " and weight " + to_string(w.shape()));
    Tensor gx = conv_input_grad_kernel(gy.value(), w.value(), d);
    const Shape ws = w.shape();
    return make_op(std::move(gx), {&gy, &w},
                   [gy, w, ws, geo](const Var& g, const std::vector<bool>& wanted) {
                       return std::vector<Var>{wanted[0] ? conv2d(g, w, geo) : Var(),
                                               wanted[1] ? conv2d_weight_grad(g, gy, ws, geo) : Var()};
                   },
                   "conv2d_input_grad");
}

Var conv2d_weight_grad(const Var& x, const Var& gy, const Shape& w_shape, ConvGeometry geo)
{
    const ConvDims d = conv_dims(x.shape(), w_shape, geo);
    if (gy.shape() != Shape{d.n, d.ho, d.wo, d.o})
        throw std::invalid_argument("conv2d_weight_grad: gradient shape mismatch");
    Tensor gw = conv_weight_grad_kernel(x.value(), gy.value(), d);
    const Shape xs = x.shape();
    return make_op(std::move(gw), {&x, &gy},
                   [x, gy, xs, geo](const Var& g, const std::vector<bool>& wanted) {
                       return std::vector<Var>{wanted[0] ? conv2d_input_grad(gy, g, xs, geo) : Var(),
                                               wanted[1] ? conv2d(x, g, geo) : Var()};
                   },
                   "conv2d_weight_grad");
}

// ---------------------------------------------------------------------------
// Indexing
// ---------------------------------------------------------------------------
Var gather_rows(const Var& table, std::span<const std::int64_t> idx)
{
    if (table.shape().size() != 2)
        throw std::invalid_argument("gather_rows expects a rank-2 table");
    const std::int64_t rows = table.shape()[0];
    for (auto i : idx)
        if (i < 0 || i >= rows)
            throw std::out_of_range("gather_rows: index " + std::to_string(i) + " out of range [0, "
                                    + std::to_string(rows) + ")");
    auto index = std::make_shared<std::vector<std::int64_t>>(idx.begin(), idx.end());
    return make_op(table.value().gather_rows(idx), {&table},
                   [index, rows](const Var& g, const std::vector<bool>&) {
                       return std::vector<Var>{scatter_add_rows(g, *index, rows)};
                   },
                   "gather_rows");
}

Var scatter_add_rows(const Var& src, std::span<const std::int64_t> idx, std::int64_t rows)
{
    if (src.shape().size() != 2 || src.shape()[0] != static_cast<std::int64_t>(idx.size()))
        throw std::invalid_argument("scatter_add_rows: source/index mismatch");
    const std::int64_t f = src.shape()[1];
    Tensor out(Shape{rows, f});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= rows)
            throw std::out_of_range("scatter_add_rows: index out of range");
        const double* s = src.value().data() + static_cast<std::int64_t>(i) * f;
        double* d = out.data() + idx[i] * f;
        for (std::int64_t j = 0; j < f; ++j)
            d[j] += s[j];
    }
    auto index = std::make_shared<std::vector<std::int64_t>>(idx.begin(), idx.end());
    return make_op(std::move(out), {&src},
                   [index](const Var& g, const std::vector<bool>&) { return std::vector<Var>{gather_rows(g, *index)}; },
                   "scatter_add_rows");
}

Var concat_rows(std::span<const Var> parts)
{
    if (parts.empty())
        throw std::invalid_argument("concat_rows of nothing");
    Shape shape = parts[0].shape();
    if (shape.empty())
        throw std::invalid_argument("concat_rows on scalars");
    std::int64_t total = 0;
    for (const Var& p : parts) {
        Shape s = p.shape();
        if (s.size() != shape.size() || !std::equal(s.begin() + 1, s.end(), shape.begin() + 1))
            throw std::invalid_argument("concat_rows: incompatible shapes");
        total += s[0];
    }
    shape[0] = total;
    Tensor out(shape);
    std::int64_t off = 0;
    std::vector<std::int64_t> offsets;
    for (const Var& p : parts) {
        offsets.push_back(off);
        std::copy_n(p.value().data(), p.value().size(), out.data() + off);
        off += p.value().size();
    }
    // Variadic inputs: build the node by hand.
    auto node = std::make_shared<Node>();
    node->value = std::move(out);
    node->op = "concat_rows";
    const bool track = GradMode::enabled()
                       && std::any_of(parts.begin(), parts.end(), [](const Var& p) { return p.requires_grad(); });
    if (track) {
        node->requires_grad = true;
        std::vector<std::pair<std::int64_t, std::int64_t>> ranges;
        std::int64_t row = 0;
        for (const Var& p : parts) {
            node->inputs.push_back(p.node());
            ranges.emplace_back(row, row + p.shape()[0]);
            row += p.shape()[0];
        }
        node->backward = [ranges](const Var& g, const std::vector<bool>& w) {
            std::vector<Var> out(ranges.size());
            for (std::size_t i = 0; i < ranges.size(); ++i)
                if (w[i])
                    out[i] = slice_rows(g, ranges[i].first, ranges[i].second);
            return out;
        };
    }
    return Var(std::move(node));
}

Var slice_rows(const Var& x, std::int64_t begin, std::int64_t end)
{
    const std::int64_t total = x.shape().at(0);
    return make_op(x.value().slice_rows(begin, end), {&x},
                   [begin, total](const Var& g, const std::vector<bool>&) {
                       return std::vector<Var>{pad_rows(g, begin, total)};
                   },
                   "slice_rows");
}

Var pad_rows(const Var& x, std::int64_t begin, std::int64_t total)
{
    Shape shape = x.shape();
    const std::int64_t n = shape.at(0);
    if (begin < 0 || begin + n > total)
        throw std::out_of_range("pad_rows out of range");
    const std::int64_t row = n == 0 ? 0 : x.value().size() / n;
    shape[0] = total;
    Tensor out(shape);
    std::copy_n(x.value().data(), x.value().size(), out.data() + begin * row);
    return make_op(std::move(out), {&x},
                   [begin, n](const Var& g, const std::vector<bool>&) {
                       return std::vector<Var>{slice_rows(g, begin, begin + n)};
                   },
                   "pad_rows");
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------
Var batch_norm_train(const Var& x, const Var& gamma, const Var& beta, double eps, BatchStats* stats)
{
    const std::int64_t f = last_dim(x.shape());
    const std::int64_t m = x.value().size() / f;
    if (gamma.shape() != Shape{f} || beta.shape() != Shape{f})
        throw std::invalid_argument("batch_norm: parameter shape mismatch for input " + to_string(x.shape()));
    if (m < 2)
        throw std::invalid_argument("batch_norm in training mode needs more than one value per feature");

    ConstMap X(x.value().data(), m, f);
    Eigen::RowVectorXd mu = X.colwise().mean();
    RowMat centered = X.rowwise() - mu;
    Eigen::RowVectorXd var = centered.array().square().colwise().mean();
    Eigen::RowVectorXd invstd = (var.array() + eps).rsqrt();

    auto xhat = std::make_shared<Tensor>(x.shape());
    MutMap XH(xhat->data(), m, f);
    XH = centered.array().rowwise() * invstd.array();

    Tensor y(x.shape());
    MutMap Y(y.data(), m, f);
    Eigen::Map<const Eigen::RowVectorXd> G(gamma.value().data(), f);
    Eigen::Map<const Eigen::RowVectorXd> B(beta.value().data(), f);
    Y = (XH.array().rowwise() * G.array()).rowwise() + B.array();

    if (stats) {
        stats->mean = Tensor(Shape{f}, std::vector<double>(mu.data(), mu.data() + f));
        stats->var = Tensor(Shape{f}, std::vector<double>(var.data(), var.data() + f));
    }

    auto inv = std::make_shared<Eigen::RowVectorXd>(invstd);
    return make_op(std::move(y), {&x, &gamma, &beta},
                   [xhat, inv, gamma, m, f](const Var& g, const std::vector<bool>& w) {
                       require_first_order("batch_norm");
                       ConstMap Gm(g.value().data(), m, f);
                       ConstMap XH(xhat->data(), m, f);
                       Eigen::RowVectorXd dbeta = Gm.colwise().sum();
                       Eigen::RowVectorXd dgamma = (Gm.array() * XH.array()).colwise().sum();
                       std::vector<Var> out(3);
                       if (w[0]) {
                           Eigen::Map<const Eigen::RowVectorXd> gam(gamma.value().data(), f);
                           Tensor dx(g.shape());
                           MutMap DX(dx.data(), m, f);
                           const double md = static_cast<double>(m);
                           // dx = gamma * invstd / m * (m*g - sum(g) - xhat*sum(g*xhat))
                           DX = ((Gm.array() * md).rowwise() - dbeta.array()
                                 - XH.array().rowwise() * dgamma.array());
                           DX = DX.array().rowwise() * (gam.array() * inv->array() / md);
                           out[0] = Var(std::move(dx));
                       }
                       if (w[1])
                           out[1] = Var(Tensor(Shape{f}, std::vector<double>(dgamma.data(), dgamma.data() + f)));
                       if (w[2])
                           out[2] = Var(Tensor(Shape{f}, std::vector<double>(dbeta.data(), dbeta.data() + f)));
                       return out;
                   },
                   "batch_norm_train");
}

Var batch_norm_eval(const Var& x, const Var& gamma, const Var& beta, const Tensor& running_mean,
                    const Tensor& running_var, double eps)
{
    const std::int64_t f = last_dim(x.shape());
    const std::int64_t m = x.value().size() / f;
    Eigen::Map<const Eigen::RowVectorXd> G(gamma.value().data(), f);
    Eigen::Map<const Eigen::RowVectorXd> B(beta.value().data(), f);
    Eigen::Map<const Eigen::RowVectorXd> RM(running_mean.data(), f);
    Eigen::Map<const Eigen::RowVectorXd> RV(running_var.data(), f);
    Eigen::RowVectorXd invstd = (RV.array() + eps).rsqrt();
    ConstMap X(x.value().data(), m, f);
    auto xhat = std::make_shared<Tensor>(x.shape());
    MutMap XH(xhat->data(), m, f);
    XH = (X.rowwise() - RM).array().rowwise() * invstd.array();
    Tensor y(x.shape());
    MutMap(y.data(), m, f) = (XH.array().rowwise() * G.array()).rowwise() + B.array();
    Eigen::RowVectorXd sc = G.array() * invstd.array();
    return make_op(std::move(y), {&x, &gamma, &beta},
                   [xhat, sc, m, f](const Var& g, const std::vector<bool>& w) {
                       require_first_order("batch_norm");
                       ConstMap Gm(g.value().data(), m, f);
                       std::vector<Var> out(3);
                       if (w[0]) {
                           Tensor dx(g.shape());
                           MutMap(dx.data(), m, f) = Gm.array().rowwise() * sc.array();
                           out[0] = Var(std::move(dx));
                       }
                       if (w[1]) {
                           Eigen::RowVectorXd dg = (Gm.array() * ConstMap(xhat->data(), m, f).array()).colwise().sum();
                           out[1] = Var(Tensor(Shape{f}, std::vector<double>(dg.data(), dg.data() + f)));
                       }
                       if (w[2]) {
                           Eigen::RowVectorXd db = Gm.colwise().sum();
                           out[2] = Var(Tensor(Shape{f}, std::vector<double>(db.data(), db.data() + f)));
                       }
                       return out;
                   },
                   "batch_norm_eval");
}

// ---------------------------------------------------------------------------
// Classification loss
// ---------------------------------------------------------------------------

Var softmax_cross_entropy(const Var& logits, std::span<const int> labels)
{
    if (logits.shape().size() != 2 || logits.dim(0) != static_cast<std::int64_t>(labels.size()))
        throw std::invalid_argument("softmax_cross_entropy: expected [N, K] logits with N labels, got "
                                    + to_string(logits.shape()));
    const std::int64_t n = logits.dim(0), k = logits.dim(1);
    auto probs = std::make_shared<Tensor>(logits.shape());
    double loss = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double* row = logits.value().data() + i * k;
        const double mx = *std::max_element(row, row + k);
        double z = 0;
        for (std::int64_t j = 0; j < k; ++j)
            z += std::exp(row[j] - mx);
        const int y = labels[static_cast<std::size_t>(i)];
        if (y < 0 || y >= k)
            throw std::invalid_argument("softmax_cross_entropy: label out of range");
        loss += mx + std::log(z) - row[y];
        for (std::int64_t j = 0; j < k; ++j)
            (*probs)[i * k + j] = std::exp(row[j] - mx) / z;
    }
    std::vector<int> y(labels.begin(), labels.end());
    return make_op(Tensor::scalar(loss / static_cast<double>(n)), {&logits},
                   [probs, y, n, k](const Var& g, const std::vector<bool>&) {
                       require_first_order("softmax_cross_entropy");
                       Tensor d = *probs;
                       for (std::int64_t i = 0; i < n; ++i)
                           d[i * k + y[static_cast<std::size_t>(i)]] -= 1.0;
                       const double s = g.item() / static_cast<double>(n);
                       for (auto& v : d.values())
                           v *= s;
                       return std::vector<Var>{Var(std::move(d))};
                   },
                   "softmax_cross_entropy");
}

} // namespace bagan::ag
