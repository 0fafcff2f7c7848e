#pragma once

#include "bagan/autoencoder.hpp"
#include "bagan/dataset.hpp"
#include "bagan/losses.hpp"
#include "bagan/network_zoo.hpp"
#include "bagan/optim.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace bagan {

enum class InitMode { Both, GeneratorOnly, None };
std::string to_string(InitMode m);
// Case-insensitive; throws InvalidConfig.
InitMode parse_init_mode(const std::string& s);

struct TrainConfig {
    int batch_size = 128;
    AdamConfig adam{};
    // 0 selects 5 for penalty variants and 1 otherwise.
    int n_critic = 0;
    int epochs = 100;
    std::uint64_t seed = 0;
    LossConfig loss{};
    InitMode init_mode = InitMode::GeneratorOnly;
    // 0 writes only the final checkpoint.
    int checkpoint_every = 10;
    // Weight clipping bound for the plain WGAN critic.
    double wgan_clip = 0.01;

    int critic_ratio() const;
    // Throws InvalidConfig.
    void validate() const;
    Manifest to_manifest() const;
    // Throws CheckpointCorrupt on missing or malformed keys.
    static TrainConfig from_manifest(const Manifest& m);
};

// Copies stage-1 weights into freshly built networks. BOTH fills the
// generator (decoder and, when present, embedding) and the discriminator
// trunk; GENERATOR_ONLY leaves the discriminator fresh; NONE copies nothing.
// Throws CheckpointIncompatible when the architectures differ.
std::pair<Generator, Discriminator> init_from_stage1(const Stage1Checkpoint& ckpt, const ArchitectureConfig& arch,
                                                     int num_classes, InitMode mode, Rng& rng);

// Reshuffled index stream over a dataset; a batch never straddles two passes.
class BatchStream {
public:
    BatchStream() = default;
    BatchStream(std::int64_t n, Rng rng);

    std::vector<std::int64_t> next(std::int64_t batch);
    std::int64_t size() const { return n_; }
    std::int64_t passes() const { return passes_; }

    npz::Archive state() const;
    void load_state(const npz::Archive& a);

private:
    void reshuffle();

    std::int64_t n_ = 0;
    Rng rng_;
    std::vector<std::int64_t> order_;
    std::int64_t pos_ = 0;
    std::int64_t passes_ = 0;
};

struct StepMetrics {
    std::int64_t step = 0;
    int epoch = 0;
    double d_loss = 0;  // mean over the critic updates of the step
    double g_loss = 0;
    double gp = 0;      // mean unscaled penalty over the critic updates
};

struct TrainState {
    ArchitectureConfig arch;
    int num_classes;
    Generator G;
    Discriminator D;
    Adam opt_g;
    Adam opt_d;
    Rng rng;
    BatchStream stream;

    std::int64_t step = 0;
    int epoch = 0;  // completed epochs
    std::int64_t d_updates = 0;
    std::int64_t g_updates = 0;
    // Labels passed to the generator, by class.
    std::vector<std::int64_t> fake_label_counts;

    TrainState(ArchitectureConfig arch, int num_classes, Generator G, Discriminator D, const TrainConfig& cfg,
               std::int64_t dataset_size, std::uint64_t seed);
};

TrainState make_train_state(const ArchitectureConfig& arch, int num_classes, const TrainConfig& cfg,
                            std::int64_t dataset_size, const Stage1Checkpoint* stage1 = nullptr);

struct CriticMetrics {
    double loss = 0;
    double gp = 0;
};

// One discriminator update on the given real batch with fresh z, fake and
// wrong labels. Throws NonFiniteLoss.
CriticMetrics critic_step(TrainState& s, const Tensor& x_r, std::span<const int> y_r, const TrainConfig& cfg);
// One generator update. y_r supplies the fake labels for the variants that
// do not balance them. Throws NonFiniteLoss.
double generator_step(TrainState& s, std::span<const int> y_r, const TrainConfig& cfg);

// n_critic critic updates on fresh real batches from the stream, then one
// generator update.
StepMetrics train_step(TrainState& s, const ImageBatch& data, const LabelBatch& labels, const TrainConfig& cfg);

std::int64_t steps_per_epoch(std::int64_t dataset_size, int batch_size);

// ---------------------------------------------------------------------------
// Run directories: config.echo, metrics.csv, checkpoints/epoch_<n>/
// ---------------------------------------------------------------------------
struct TrainOptions {
    // Written verbatim as config.echo; the training config is used when empty.
    std::string config_echo;
    // Called after every epoch; returning false stops the run without a final
    // checkpoint, as if the process had died.
    std::function<bool(const TrainState&, const StepMetrics&)> on_epoch;
};

struct RunResult {
    std::filesystem::path dir;
    int epochs_completed = 0;
    std::int64_t steps = 0;
    std::vector<StepMetrics> metrics;  // this invocation only
    std::vector<std::int64_t> fake_label_counts;
};

RunResult train(const ImageBatch& data, const LabelBatch& labels, const ArchitectureConfig& arch,
                const TrainConfig& cfg, const std::filesystem::path& run_dir, const Stage1Checkpoint* stage1 = nullptr,
                const TrainOptions& opts = {});

// Continues from the newest checkpoint of run_dir up to total_epochs (the
// stored epoch budget when unset). Metric rows written after that checkpoint
// are discarded.
RunResult resume(const ImageBatch& data, const LabelBatch& labels, const std::filesystem::path& run_dir,
                 std::optional<int> total_epochs = std::nullopt, const TrainOptions& opts = {});

void save_train_checkpoint(const std::filesystem::path& dir, const TrainState& s, const TrainConfig& cfg);
// Throws CheckpointCorrupt / CheckpointIncompatible.
std::pair<TrainState, TrainConfig> load_train_checkpoint(const std::filesystem::path& dir);
// Newest checkpoints/epoch_<n> directory; nullopt when there is none.
std::optional<std::filesystem::path> latest_checkpoint(const std::filesystem::path& run_dir);

// Generator only, for sampling and evaluation.
Generator load_generator(const std::filesystem::path& checkpoint_dir);

std::vector<StepMetrics> read_metrics(const std::filesystem::path& csv);

} // namespace bagan
