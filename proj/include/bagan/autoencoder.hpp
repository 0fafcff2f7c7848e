#pragma once

#include "bagan/dataset.hpp"
#include "bagan/network_zoo.hpp"
#include "bagan/optim.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace bagan {

struct AeTrainConfig {
    int epochs = 30;
    int batch_size = 128;
    AdamConfig adam{};
    std::uint64_t seed = 0;
    // Supervised only: keep the class embedding fixed.
    bool freeze_embedding = false;
};

struct EpochLoss {
    int epoch;  // 1-based
    double mse;
};

// decoder(embed(y) * encode(x))
struct SupervisedAutoencoder {
    nn::Network encoder;
    nn::Network embedding;
    nn::Network decoder;

    ag::Var labeled_latents(const ag::Var& x, std::span<const int> labels) const;
    ag::Var reconstruct(const ag::Var& x, std::span<const int> labels, nn::Mode mode) const;
};

// decoder(encode(x))
struct UnsupervisedAutoencoder {
    nn::Network encoder;
    nn::Network decoder;

    ag::Var reconstruct(const ag::Var& x, nn::Mode mode) const;
};

SupervisedAutoencoder build_supervised_ae(const ArchitectureConfig& cfg, int num_classes, Rng& rng);
UnsupervisedAutoencoder build_unsupervised_ae(const ArchitectureConfig& cfg, Rng& rng);

// Minimizes the mean squared reconstruction error with Adam over seeded
// shuffles; returns the mean batch loss of each epoch. Throws NonFiniteLoss.
std::vector<EpochLoss> pretrain_supervised_ae(SupervisedAutoencoder& ae, const ImageBatch& data,
                                              const LabelBatch& labels, const AeTrainConfig& cfg);
std::vector<EpochLoss> pretrain_unsupervised_ae(UnsupervisedAutoencoder& ae, const ImageBatch& data,
                                                const AeTrainConfig& cfg);

// Encoder outputs for a scaled batch, computed in chunks without a graph.
Tensor encode_all(const nn::Network& encoder, const ImageBatch& data, std::int64_t chunk = 256);
// embed(y) * encode(x) for every sample.
Tensor labeled_latents_all(const SupervisedAutoencoder& ae, const ImageBatch& data, const LabelBatch& labels,
                           std::int64_t chunk = 256);

// ---------------------------------------------------------------------------
// Per-class Gaussian latent model (the unsupervised baseline's generator)
// ---------------------------------------------------------------------------
struct ClassGaussianModel {
    std::vector<Tensor> mean;  // [latent_dim]
    std::vector<Tensor> cov;   // [latent_dim, latent_dim]
    std::vector<double> eps;   // per-class ridge added before sampling

    int num_classes() const { return static_cast<int>(mean.size()); }
    npz::Archive to_archive() const;
    static ClassGaussianModel from_archive(const npz::Archive& a);
};

// Ridge for a covariance: 1e-6 * trace / dim, at least 1e-8.
double covariance_ridge(const Tensor& cov);

ClassGaussianModel fit_class_gaussians(const Tensor& latents, const LabelBatch& labels);
ClassGaussianModel fit_class_gaussians(const nn::Network& encoder, const ImageBatch& data, const LabelBatch& labels);
// n draws from N(mean_k, cov_k + eps_k I). Throws NotPSD.
Tensor sample_labeled_latents(const ClassGaussianModel& model, int k, std::int64_t n, Rng& rng);

// Moment diagnostics of the per-class latents; reported, never judged.
struct NormalityRow {
    int cls;
    std::int64_t count;
    double mean_abs_skewness;
    double mean_excess_kurtosis;
};
std::vector<NormalityRow> normality_report(const Tensor& latents, const LabelBatch& labels);

// ---------------------------------------------------------------------------
// Stage-1 checkpoints
// ---------------------------------------------------------------------------
inline constexpr const char* kTagSupervised = "ae_supervised";
inline constexpr const char* kTagUnsupervised = "ae_unsupervised";

void save_stage1(const std::filesystem::path& dir, const SupervisedAutoencoder& ae, const ArchitectureConfig& cfg,
                 int num_classes);
void save_stage1(const std::filesystem::path& dir, const UnsupervisedAutoencoder& ae, const ArchitectureConfig& cfg,
                 int num_classes, const ClassGaussianModel* gaussians = nullptr);

struct Stage1Checkpoint {
    std::string tag;
    ArchitectureConfig arch;
    int num_classes = 0;
    nn::Network encoder;
    nn::Network decoder;
    std::optional<nn::Network> embedding;           // supervised only
    std::optional<ClassGaussianModel> gaussians;    // unsupervised, when fitted
};
Stage1Checkpoint load_stage1(const std::filesystem::path& dir);

void write_loss_log(const std::filesystem::path& path, std::span<const EpochLoss> log);

} // namespace bagan
