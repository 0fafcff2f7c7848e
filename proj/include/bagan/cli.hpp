#pragma once

#include "bagan/autoencoder.hpp"
#include "bagan/dataset.hpp"
#include "bagan/evaluation.hpp"
#include "bagan/gan_trainer.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace bagan::cli {

enum class AeMode { Supervised, Unsupervised };

struct EvalConfig {
    std::string extractor = "classifier";  // classifier | pretrained
    std::filesystem::path extractor_path;  // pretrained weights
    std::filesystem::path classifier_data; // training images for the classifier; [data] when empty
    ClassifierConfig classifier{};
    std::filesystem::path validation;
    std::filesystem::path checkpoint;  // GAN or stage-1 checkpoint directory
    std::filesystem::path samples;     // container of generated samples, instead of a checkpoint
    std::int64_t samples_per_class = 0;
    int grid_rows = 3;
    Projection projection = Projection::Pca;
};

struct GenerateConfig {
    std::filesystem::path checkpoint;
    int cls = 0;
    std::int64_t n = 1;
};

// Every value a command uses; the file and the flags both write into it.
struct RunConfig {
    DatasetSpec data{};
    std::filesystem::path schedule;
    ArchitectureConfig arch{};
    AeMode ae_mode = AeMode::Supervised;
    AeTrainConfig ae{};
    TrainConfig train{};
    std::filesystem::path stage1;  // autoencoder checkpoint for stage 2
    bool resume = false;
    EvalConfig eval{};
    GenerateConfig generate{};
    std::uint64_t seed = 0;
    std::filesystem::path out = "out";

    // Fully resolved key = value text, sections included.
    std::string echo() const;
};

// INI text: [section] headers, "key = value" lines, '#' or ';' comments.
// Unknown sections or keys and malformed values raise ConfigError naming
// origin:line.
void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin);
// Throws ConfigError when the file cannot be read.
void apply_config_file(RunConfig& cfg, const std::filesystem::path& path);
// Sets one "section.key" value, as from a flag.
void set_value(RunConfig& cfg, const std::string& dotted_key, const std::string& value);

std::string to_string(AeMode m);
AeMode parse_ae_mode(const std::string& s);

// Commands. Each echoes the resolved config to <out>/config.echo first.
struct PrepareResult {
    std::vector<std::int64_t> counts;
    std::filesystem::path container;
};
PrepareResult cmd_prepare_data(const RunConfig& cfg);
void cmd_pretrain_ae(const RunConfig& cfg);
RunResult cmd_train_gan(const RunConfig& cfg);
std::vector<std::filesystem::path> cmd_generate(const RunConfig& cfg);
FidReport cmd_evaluate(const RunConfig& cfg);
SilhouetteResult cmd_plot_latents(const RunConfig& cfg);

// Entry point of the command-line tool; returns the process exit status.
int run(int argc, const char* const* argv);

} // namespace bagan::cli
