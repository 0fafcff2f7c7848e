#include "bagan/nn.hpp"

#include "bagan/errors.hpp"

#include <cmath>
#include <stdexcept>

namespace bagan::nn {

namespace {

ag::Var glorot(const Shape& shape, double fan_in, double fan_out, Rng& rng)
{
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    Tensor t(shape);
    for (auto& v : t.values())
        v = rng.uniform(-limit, limit);
    return ag::Var(std::move(t), true);
}

ag::Var zeros(std::int64_t n) { return ag::Var(Tensor({n}), true); }

Shape with_batch(std::int64_t n, const Shape& s)
{
    Shape out{n};
    out.insert(out.end(), s.begin(), s.end());
    return out;
}

} // namespace

// ---------------------------------------------------------------------------

Conv2d::Conv2d(std::int64_t in, std::int64_t out, int k, ag::ConvGeometry g) : in_(in), out_(out), k_(k), g_(g)
{
    kernel = ag::Var(Tensor({k, k, in, out}), true);
    bias = zeros(out);
}

void Conv2d::init(Rng& rng)
{
    kernel = glorot({k_, k_, in_, out_}, double(k_ * k_ * in_), double(k_ * k_ * out_), rng);
    bias = zeros(out_);
}

ag::Var Conv2d::forward(const ag::Var& x, Mode) { return ag::bias_add(ag::conv2d(x, kernel, g_), bias); }

Shape Conv2d::output_shape(const Shape& in) const
{
    const auto s = ag::conv2d_output_shape(with_batch(1, in), kernel.shape(), g_);
    return {s[1], s[2], s[3]};
}

ConvTranspose2d::ConvTranspose2d(std::int64_t in, std::int64_t out, int k, ag::ConvGeometry g)
    : in_(in), out_(out), k_(k), g_(g)
{
    kernel = ag::Var(Tensor({k, k, out, in}), true);
    bias = zeros(out);
}

void ConvTranspose2d::init(Rng& rng)
{
    kernel = glorot({k_, k_, out_, in_}, double(k_ * k_ * in_), double(k_ * k_ * out_), rng);
    bias = zeros(out_);
}

Shape ConvTranspose2d::output_shape(const Shape& in) const
{
    if (in.size() != 3 || in[2] != in_)
        throw ShapeMismatch("conv_transpose2d expects [H, W, " + std::to_string(in_) + "], got " + to_string(in));
    const auto up = [&](std::int64_t h) { return (h - 1) * g_.stride - 2 * g_.pad + k_; };
    return {up(in[0]), up(in[1]), out_};
}

ag::Var ConvTranspose2d::forward(const ag::Var& x, Mode)
{
    const Shape out = with_batch(x.dim(0), output_shape({x.dim(1), x.dim(2), x.dim(3)}));
    return ag::bias_add(ag::conv2d_input_grad(x, kernel, out, g_), bias);
}

Dense::Dense(std::int64_t in, std::int64_t out) : in_(in), out_(out)
{
    kernel = ag::Var(Tensor({in, out}), true);
    bias = zeros(out);
}

void Dense::init(Rng& rng)
{
    kernel = glorot({in_, out_}, double(in_), double(out_), rng);
    bias = zeros(out_);
}

ag::Var Dense::forward(const ag::Var& x, Mode) { return ag::bias_add(ag::matmul(x, kernel), bias); }

Shape Dense::output_shape(const Shape& in) const
{
    if (in.size() != 1 || in[0] != in_)
        throw ShapeMismatch("dense expects [" + std::to_string(in_) + "], got " + to_string(in));
    return {out_};
}

BatchNorm::BatchNorm(std::int64_t features, double momentum, double eps)
    : features_(features), momentum_(momentum), eps_(eps)
{
    Rng unused;
    init(unused);
}

void BatchNorm::init(Rng&)
{
    gamma = ag::Var(Tensor({features_}, 1.0), true);
    beta = zeros(features_);
    moving_mean = Tensor({features_}, 0.0);
    moving_variance = Tensor({features_}, 1.0);
}

ag::Var BatchNorm::forward(const ag::Var& x, Mode mode)
{
    if (mode == Mode::Eval)
        return ag::batch_norm_eval(x, gamma, beta, moving_mean, moving_variance, eps_);
    ag::BatchStats stats;
    ag::Var y = ag::batch_norm_train(x, gamma, beta, eps_, &stats);
    const double n = static_cast<double>(x.value().size() / features_);
    const double unbias = n > 1 ? n / (n - 1) : 1.0;
    for (std::int64_t f = 0; f < features_; ++f) {
        moving_mean[f] = momentum_ * moving_mean[f] + (1 - momentum_) * stats.mean[f];
        moving_variance[f] = momentum_ * moving_variance[f] + (1 - momentum_) * stats.var[f] * unbias;
    }
    return y;
}

ag::Var Flatten::forward(const ag::Var& x, Mode)
{
    return ag::reshape(x, {x.dim(0), x.value().size() / x.dim(0)});
}

Shape Reshape::output_shape(const Shape& in) const
{
    if (numel(in) != numel(target_))
        throw ShapeMismatch("cannot reshape " + to_string(in) + " to " + to_string(target_));
    return target_;
}

ag::Var Reshape::forward(const ag::Var& x, Mode) { return ag::reshape(x, with_batch(x.dim(0), target_)); }

Embedding::Embedding(std::int64_t num_classes, std::int64_t dim) : num_classes_(num_classes), dim_(dim)
{
    table = ag::Var(Tensor({num_classes, dim}), true);
}

void Embedding::init(Rng& rng)
{
    Tensor t({num_classes_, dim_});
    for (auto& v : t.values())
        v = rng.normal();
    table = ag::Var(std::move(t), true);
}

ag::Var Embedding::lookup(std::span<const int> labels) const
{
    std::vector<std::int64_t> idx(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= num_classes_)
            throw OutOfRangeLabel("label " + std::to_string(labels[i]) + " not in [0, " + std::to_string(num_classes_)
                                  + ")");
        idx[i] = labels[i];
    }
    return ag::gather_rows(table, idx);
}

ag::Var Embedding::forward(const ag::Var& labels, Mode)
{
    std::vector<int> l;
    l.reserve(static_cast<std::size_t>(labels.value().size()));
    for (double v : labels.value().values())
        l.push_back(static_cast<int>(v));
    return lookup(l);
}

// ---------------------------------------------------------------------------

Network::Network(std::string topology_id, Shape input_signature)
    : topology_id_(std::move(topology_id)), input_(std::move(input_signature))
{
}

Network Network::clone() const
{
    Network out(topology_id_, input_);
    for (const auto& l : layers_) {
        auto copy = l->clone();
        for (auto& [name, var] : copy->params())
            *var = ag::Var(var->value(), true);
        out.layers_.push_back(std::move(copy));
    }
    return out;
}

Network& Network::add(std::unique_ptr<Layer> layer)
{
    layers_.push_back(std::move(layer));
    output_signature();  // validates the chain
    return *this;
}

void Network::init(Rng& rng)
{
    for (auto& l : layers_)
        l->init(rng);
}

ag::Var Network::forward(const ag::Var& x, Mode mode) const
{
    const Shape& s = x.shape();
    if (s.size() != input_.size() + 1 || !std::equal(input_.begin(), input_.end(), s.begin() + 1))
        throw ShapeMismatch(topology_id_ + " expects per-sample input " + to_string(input_) + ", got " + to_string(s));
    ag::Var h = x;
    for (const auto& l : layers_)
        h = l->forward(h, mode);
    return h;
}

ag::Var Network::forward_labels(std::span<const int> labels, Mode mode) const
{
    auto* emb = layers_.empty() ? nullptr : dynamic_cast<Embedding*>(layers_.front().get());
    if (!emb)
        throw std::logic_error(topology_id_ + " does not start with an embedding");
    ag::Var h = emb->lookup(labels);
    for (std::size_t i = 1; i < layers_.size(); ++i)
        h = layers_[i]->forward(h, mode);
    return h;
}

Shape Network::output_signature() const
{
    Shape s = input_;
    for (const auto& l : layers_)
        s = l->output_shape(s);
    return s;
}

std::vector<std::string> Network::layer_kinds() const
{
    std::vector<std::string> out;
    for (const auto& l : layers_)
        out.push_back(l->kind());
    return out;
}

bool Network::contains_kind(const std::string& kind) const
{
    for (const auto& l : layers_)
        if (l->kind() == kind)
            return true;
    return false;
}

std::vector<ag::Var> Network::parameters() const
{
    std::vector<ag::Var> out;
    for (const auto& l : layers_)
        for (auto& [name, var] : l->params())
            out.push_back(*var);
    return out;
}

std::int64_t Network::parameter_count() const
{
    std::int64_t n = 0;
    for (const auto& p : parameters())
        n += p.value().size();
    return n;
}

std::vector<std::pair<std::string, Tensor>> Network::weights() const
{
    std::vector<std::pair<std::string, Tensor>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const std::string prefix = std::to_string(i) + "_" + layers_[i]->kind() + "/";
        for (auto& [name, var] : layers_[i]->params())
            out.emplace_back(prefix + name, var->value());
        for (auto& [name, buf] : layers_[i]->buffers())
            out.emplace_back(prefix + name, *buf);
    }
    return out;
}

bool Network::weights_finite() const
{
    for (const auto& [name, t] : weights())
        if (!t.all_finite())
            return false;
    return true;
}

npz::Archive Network::to_archive() const
{
    npz::Archive a;
    for (const auto& [name, t] : weights())
        a.add(name, npz::Array::from_tensor(t));
    return a;
}

void Network::load_archive(const npz::Archive& archive)
{
    // Validate everything before touching any weight.
    std::vector<std::pair<Tensor*, Tensor>> staged;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const std::string prefix = std::to_string(i) + "_" + layers_[i]->kind() + "/";
        auto stage = [&](const std::string& name, Tensor* dst) {
            if (!archive.contains(prefix + name))
                throw CheckpointCorrupt(topology_id_ + ": missing weight " + prefix + name);
            Tensor t = archive.at(prefix + name).to_tensor();
            if (t.shape() != dst->shape())
                throw ShapeMismatch(topology_id_ + ": weight " + prefix + name + " has shape " + to_string(t.shape())
                                    + ", expected " + to_string(dst->shape()));
            staged.emplace_back(dst, std::move(t));
        };
        for (auto& [name, var] : layers_[i]->params())
            stage(name, &var->mutable_value());
        for (auto& [name, buf] : layers_[i]->buffers())
            stage(name, buf);
    }
    for (auto& [dst, t] : staged)
        *dst = std::move(t);
}

LayerMap prefix_map(std::size_t n)
{
    LayerMap m;
    for (std::size_t i = 0; i < n; ++i)
        m.emplace_back(i, i);
    return m;
}

Network& transfer_weights(const Network& source, Network& target, const LayerMap& map)
{
    std::vector<std::pair<Tensor*, const Tensor*>> staged;
    for (const auto& [si, ti] : map) {
        if (si >= source.num_layers() || ti >= target.num_layers())
            throw ShapeMismatch("layer map entry " + std::to_string(si) + " -> " + std::to_string(ti)
                                + " is out of range");
        Layer& src = source.layer(si);
        Layer& dst = target.layer(ti);
        const std::string where = "layer " + std::to_string(si) + "_" + src.kind() + " -> " + std::to_string(ti) + "_"
                                  + dst.kind();
        auto sp = src.params();
        auto dp = dst.params();
        auto sb = src.buffers();
        auto db = dst.buffers();
        if (src.kind() != dst.kind() || sp.size() != dp.size() || sb.size() != db.size())
            throw ShapeMismatch(where + ": incompatible layer kinds");
        for (std::size_t k = 0; k < sp.size(); ++k) {
            if (sp[k].second->shape() != dp[k].second->shape())
                throw ShapeMismatch(where + ": " + sp[k].first + " " + to_string(sp[k].second->shape()) + " vs "
                                    + to_string(dp[k].second->shape()));
            staged.emplace_back(&dp[k].second->mutable_value(), &sp[k].second->value());
        }
        for (std::size_t k = 0; k < sb.size(); ++k) {
            if (sb[k].second->shape() != db[k].second->shape())
                throw ShapeMismatch(where + ": " + sb[k].first);
            staged.emplace_back(db[k].second, sb[k].second);
        }
    }
    for (auto& [dst, src] : staged)
        *dst = *src;
    return target;
}

} // namespace bagan::nn
