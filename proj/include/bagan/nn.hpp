#pragma once

#include "bagan/autograd.hpp"
#include "bagan/npz.hpp"
#include "bagan/rng.hpp"

#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace bagan::nn {

enum class Mode { Train, Eval };

// Shapes handled by layers are per-sample (no leading batch axis).
class Layer {
public:
    virtual ~Layer() = default;

    virtual std::string kind() const = 0;
    virtual ag::Var forward(const ag::Var& x, Mode mode) = 0;
    virtual Shape output_shape(const Shape& in) const = 0;
    virtual void init(Rng&) {}
    virtual std::unique_ptr<Layer> clone() const = 0;

    // Trainable parameters and non-trainable state, by local name.
    virtual std::vector<std::pair<std::string, ag::Var*>> params() { return {}; }
    virtual std::vector<std::pair<std::string, Tensor*>> buffers() { return {}; }
};

class Conv2d : public Layer {
public:
    Conv2d(std::int64_t in, std::int64_t out, int k = 4, ag::ConvGeometry g = {});
    std::string kind() const override { return "conv2d"; }
    ag::Var forward(const ag::Var& x, Mode) override;
    Shape output_shape(const Shape& in) const override;
    void init(Rng& rng) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }
    std::vector<std::pair<std::string, ag::Var*>> params() override { return {{"kernel", &kernel}, {"bias", &bias}}; }

    ag::Var kernel;  // [k, k, in, out]
    ag::Var bias;

private:
    std::int64_t in_, out_;
    int k_;
    ag::ConvGeometry g_;
};

// Doubles the spatial size. Kernel layout is [k, k, out, in].
class ConvTranspose2d : public Layer {
public:
    ConvTranspose2d(std::int64_t in, std::int64_t out, int k = 4, ag::ConvGeometry g = {});
    std::string kind() const override { return "conv_transpose2d"; }
    ag::Var forward(const ag::Var& x, Mode) override;
    Shape output_shape(const Shape& in) const override;
    void init(Rng& rng) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<ConvTranspose2d>(*this); }
    std::vector<std::pair<std::string, ag::Var*>> params() override { return {{"kernel", &kernel}, {"bias", &bias}}; }

    ag::Var kernel;
    ag::Var bias;

private:
    std::int64_t in_, out_;
    int k_;
    ag::ConvGeometry g_;
};

class Dense : public Layer {
public:
    Dense(std::int64_t in, std::int64_t out);
    std::string kind() const override { return "dense"; }
    ag::Var forward(const ag::Var& x, Mode) override;
    Shape output_shape(const Shape& in) const override;
    void init(Rng& rng) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Dense>(*this); }
    std::vector<std::pair<std::string, ag::Var*>> params() override { return {{"kernel", &kernel}, {"bias", &bias}}; }

    ag::Var kernel;  // [in, out]
    ag::Var bias;

private:
    std::int64_t in_, out_;
};

// Normalizes over every axis but the last. Train mode uses batch statistics
// and folds them into the moving averages; eval mode uses the averages.
class BatchNorm : public Layer {
public:
    explicit BatchNorm(std::int64_t features, double momentum = 0.9, double eps = 1e-3);
    std::string kind() const override { return "batch_norm"; }
    ag::Var forward(const ag::Var& x, Mode mode) override;
    Shape output_shape(const Shape& in) const override { return in; }
    void init(Rng&) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<BatchNorm>(*this); }
    std::vector<std::pair<std::string, ag::Var*>> params() override { return {{"gamma", &gamma}, {"beta", &beta}}; }
    std::vector<std::pair<std::string, Tensor*>> buffers() override
    {
        return {{"moving_mean", &moving_mean}, {"moving_variance", &moving_variance}};
    }

    ag::Var gamma;
    ag::Var beta;
    Tensor moving_mean;
    Tensor moving_variance;

private:
    std::int64_t features_;
    double momentum_, eps_;
};

class LeakyReLU : public Layer {
public:
    explicit LeakyReLU(double slope) : slope_(slope) {}
    std::string kind() const override { return "leaky_relu"; }
    ag::Var forward(const ag::Var& x, Mode) override { return ag::leaky_relu(x, slope_); }
    Shape output_shape(const Shape& in) const override { return in; }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<LeakyReLU>(*this); }

private:
    double slope_;
};

class Tanh : public Layer {
public:
    std::string kind() const override { return "tanh"; }
    ag::Var forward(const ag::Var& x, Mode) override { return ag::tanh(x); }
    Shape output_shape(const Shape& in) const override { return in; }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Tanh>(*this); }
};

class Flatten : public Layer {
public:
    std::string kind() const override { return "flatten"; }
    ag::Var forward(const ag::Var& x, Mode) override;
    Shape output_shape(const Shape& in) const override { return {numel(in)}; }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Flatten>(*this); }
};

class Reshape : public Layer {
public:
    explicit Reshape(Shape target) : target_(std::move(target)) {}
    std::string kind() const override { return "reshape"; }
    ag::Var forward(const ag::Var& x, Mode) override;
    Shape output_shape(const Shape& in) const override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Reshape>(*this); }

private:
    Shape target_;
};

// Lookup table of trainable class vectors, initialized N(0, 1).
class Embedding : public Layer {
public:
    Embedding(std::int64_t num_classes, std::int64_t dim);
    std::string kind() const override { return "embedding"; }
    // Expects a [N] tensor of integral class indices.
    ag::Var forward(const ag::Var& labels, Mode) override;
    ag::Var lookup(std::span<const int> labels) const;
    Shape output_shape(const Shape&) const override { return {dim_}; }
    void init(Rng& rng) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Embedding>(*this); }
    std::vector<std::pair<std::string, ag::Var*>> params() override { return {{"embeddings", &table}}; }

    std::int64_t num_classes() const { return num_classes_; }

    ag::Var table;  // [num_classes, dim]

private:
    std::int64_t num_classes_, dim_;
};

// A sequential network with named, transferable weights. Weight names are
// "<layer index>_<layer kind>/<local name>".
class Network {
public:
    Network() = default;
    Network(std::string topology_id, Shape input_signature);

    Network(Network&&) noexcept = default;
    Network& operator=(Network&&) noexcept = default;
    Network(const Network&) = delete;
    Network& operator=(const Network&) = delete;

    // Deep copy with independent weights.
    Network clone() const;

    Network& add(std::unique_ptr<Layer> layer);
    template <class L, class... Args>
    Network& emplace(Args&&... args)
    {
        return add(std::make_unique<L>(std::forward<Args>(args)...));
    }

    void init(Rng& rng);

    ag::Var forward(const ag::Var& x, Mode mode) const;
    // For networks whose first layer is an Embedding.
    ag::Var forward_labels(std::span<const int> labels, Mode mode) const;

    const std::string& topology_id() const { return topology_id_; }
    const Shape& input_signature() const { return input_; }
    Shape output_signature() const;
    std::size_t num_layers() const { return layers_.size(); }
    Layer& layer(std::size_t i) const { return *layers_.at(i); }
    std::vector<std::string> layer_kinds() const;
    bool contains_kind(const std::string& kind) const;

    std::vector<ag::Var> parameters() const;
    std::int64_t parameter_count() const;
    // Parameters followed by buffers, in layer order.
    std::vector<std::pair<std::string, Tensor>> weights() const;
    bool weights_finite() const;

    npz::Archive to_archive() const;
    // Every weight must be present with a matching shape.
    void load_archive(const npz::Archive& archive);

private:
    std::string topology_id_;
    Shape input_;
    std::vector<std::unique_ptr<Layer>> layers_;
};

// Source layer index -> target layer index.
using LayerMap = std::vector<std::pair<std::size_t, std::size_t>>;

// Identity map over layers [0, n).
LayerMap prefix_map(std::size_t n);

// Copies parameters and buffers of the mapped layers. Throws ShapeMismatch
// naming the first incompatible layer; the target is unchanged on error.
Network& transfer_weights(const Network& source, Network& target, const LayerMap& map);

} // namespace bagan::nn
