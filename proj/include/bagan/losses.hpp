#pragma once

#include "bagan/autograd.hpp"
#include "bagan/dataset.hpp"
#include "bagan/rng.hpp"

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace bagan {

enum class LossVariant { OriginalGan, Wgan, WganGp, Dragan, CDragan, BaganGp };
enum class Interpolation { Model, Noise };
enum class BaganGpVersion { V1, V2, V3 };

struct LossConfig {
    LossVariant variant = LossVariant::BaganGp;
    double lambda = 10.0;
    Interpolation interpolation = Interpolation::Model;
    BaganGpVersion version = BaganGpVersion::V3;
    // Include the label-embedding input in the penalized gradient.
    bool penalize_label_path = false;

    // Throws InvalidConfig.
    void validate() const;
    bool has_penalty() const;
    // v2 and v3 balance the fake labels and add the wrong-label term.
    bool balanced() const { return variant == LossVariant::BaganGp && version != BaganGpVersion::V1; }
};

std::string to_string(LossVariant v);
std::string to_string(Interpolation v);
std::string to_string(BaganGpVersion v);
// Case-insensitive; throw InvalidConfig on unknown names.
LossVariant parse_loss_variant(const std::string& s);
Interpolation parse_interpolation(const std::string& s);
BaganGpVersion parse_version(const std::string& s);

// ---------------------------------------------------------------------------
// Objectives on logits / raw critic scores ([N] tensors). Throw NonFiniteInput.
// ---------------------------------------------------------------------------
// -mean log s(real) - mean log(1 - s(fake))
ag::Var original_d_loss(const ag::Var& real_logits, const ag::Var& fake_logits);
// -mean log s(fake)
ag::Var original_g_loss(const ag::Var& fake_logits);
// mean(real) - mean(fake), to be maximized by the critic.
ag::Var wgan_d_objective(const ag::Var& real_scores, const ag::Var& fake_scores);
// -mean(fake)
ag::Var wgan_g_loss(const ag::Var& fake_scores);
ag::Var dragan_d_loss(const ag::Var& real_logits, const ag::Var& fake_logits, const ag::Var& gp, double lambda);
// The four-term balanced objective given its pieces; wrong_logits may be
// undefined to drop the wrong-label term.
ag::Var bagan_gp_d_loss_from_logits(const ag::Var& real_logits, const ag::Var& fake_logits,
                                    const ag::Var& wrong_logits, const ag::Var& gp, double lambda);

// ---------------------------------------------------------------------------
// Interpolation and gradient penalty
// ---------------------------------------------------------------------------
struct InterpolationSpec {
    Interpolation mode = Interpolation::Model;
    std::optional<double> forced_alpha;  // overrides the per-sample draw
};

// x_r + 0.5 * std(x_r) * U(0, 1) per element, std over the whole batch.
Tensor noise_endpoint(const Tensor& x_r, Rng& rng);
// alpha * x_r + (1 - alpha) * other with one alpha ~ U(0, 1) per sample. In
// Noise mode `other` is ignored and the noise endpoint is drawn from rng.
Tensor interpolate(const Tensor& x_r, const Tensor& other, const InterpolationSpec& spec, Rng& rng);
Tensor interpolate(const Tensor& x_r, const Tensor& other, const InterpolationSpec& spec, std::uint64_t seed);

using CriticFn = std::function<ag::Var(const ag::Var& x)>;
using LabelPathCriticFn = std::function<ag::Var(const ag::Var& x, const ag::Var& label_vec)>;

// Per-sample ||dD/dx|| at x_hat.
Tensor critic_gradient_norms(const CriticFn& critic, const Tensor& x_hat);
// mean over samples of (||dD/dx|| - 1)^2; differentiable w.r.t. the critic's
// parameters. Throws NonFiniteGradient.
ag::Var gradient_penalty(const CriticFn& critic, const Tensor& x_hat);
// Same, with the gradient taken jointly w.r.t. the image and the label vector.
ag::Var gradient_penalty(const LabelPathCriticFn& critic, const Tensor& x_hat, const ag::Var& label_vec);

// ---------------------------------------------------------------------------
// Conditional objectives over networks
// ---------------------------------------------------------------------------
using ConditionalCritic = std::function<ag::Var(const ag::Var& x, std::span<const int> labels)>;
using ConditionalGeneratorFn = std::function<ag::Var(const ag::Var& z, std::span<const int> labels)>;

// Fake images are scored against the real labels; GP on (x_hat, y_r).
ag::Var cdragan_d_loss(const ConditionalCritic& D, const Tensor& x_r, std::span<const int> y_r, const Tensor& x_g,
                       const LossConfig& cfg, Rng& rng);
ag::Var cdragan_g_loss(const ConditionalCritic& D, const ag::Var& x_g, std::span<const int> y_r);

ag::Var bagan_gp_d_loss(const ConditionalCritic& D, const ConditionalGeneratorFn& G, const Tensor& x_r,
                        std::span<const int> y_r, const Tensor& z, std::span<const int> y_f,
                        std::span<const int> y_wrong, const LossConfig& cfg, Rng& rng);
ag::Var bagan_gp_g_loss(const ConditionalCritic& D, const ConditionalGeneratorFn& G, const Tensor& z,
                        std::span<const int> y_f);

// i.i.d. uniform over [0, num_classes).
LabelBatch sample_balanced_labels(std::int64_t n, int num_classes, std::uint64_t seed);
LabelBatch sample_balanced_labels(std::int64_t n, int num_classes, Rng& rng);
// Uniform over the classes other than y_r[i], per sample. Throws ClassCountOne.
std::vector<int> sample_wrong_labels(std::span<const int> y_r, int num_classes, Rng& rng);

Tensor standard_normal(const Shape& shape, Rng& rng);

} // namespace bagan
