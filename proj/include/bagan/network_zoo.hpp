#pragma once

#include "bagan/dataset.hpp"
#include "bagan/nn.hpp"

#include <array>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace bagan {

struct ArchitectureConfig {
    int latent_dim = 128;
    int channels = 3;
    double leaky_slope = 0.2;
    bool batch_norm_in_generator_only = true;
    // Feature widths of the four stride-2 blocks, from the image side.
    std::array<int, 4> widths{64, 128, 256, 512};

    // Throws InvalidConfig.
    void validate() const;
    // Flattened size of the 4x4 feature map at the bottom of the encoder.
    std::int64_t feature_size() const { return 16LL * widths[3]; }
    std::string signature() const;
};

// Four stride-2 conv blocks (64 -> 4), flatten, dense to latent_dim.
nn::Network build_encoder(const ArchitectureConfig& cfg);
// Dense to 4x4 map, then four transposed-conv blocks back to 64x64xC, tanh.
nn::Network build_decoder(const ArchitectureConfig& cfg);
// Class -> latent_dim vector.
nn::Network build_embedding(const ArchitectureConfig& cfg, int num_classes);

// The encoder without its flatten and final dense layer; layer i of the trunk
// is layer i of the encoder.
nn::Network build_trunk(const ArchitectureConfig& cfg);
std::size_t trunk_layer_count();
// Class -> vector matching the flattened trunk output.
nn::Network build_label_embed(const ArchitectureConfig& cfg, int num_classes);
// Flattened features -> one logit.
nn::Network build_head(const ArchitectureConfig& cfg);

// G(z, c) = decoder(embed(c) * z)
class Generator {
public:
    Generator(nn::Network embedding, nn::Network decoder);

    ag::Var generate(const ag::Var& z, std::span<const int> labels, nn::Mode mode) const;
    ag::Var embed(std::span<const int> labels) const;

    std::vector<ag::Var> parameters() const;
    int latent_dim() const { return latent_dim_; }
    int num_classes() const { return num_classes_; }

    nn::Network embedding;
    nn::Network decoder;

private:
    int latent_dim_;
    int num_classes_;
};

// D(x, c) = head(flatten(trunk(x)) * label_embed(c)); the output is a logit.
class Discriminator {
public:
    Discriminator(nn::Network trunk, nn::Network label_embed, nn::Network head);

    ag::Var features(const ag::Var& x) const;
    ag::Var label_vector(std::span<const int> labels) const;
    // [N] logits.
    ag::Var combine(const ag::Var& features, const ag::Var& label_vec) const;
    ag::Var score(const ag::Var& x, std::span<const int> labels) const;
    // Scores one image batch under several label sets with a single trunk pass.
    std::vector<ag::Var> score_many(const ag::Var& x, std::span<const std::span<const int>> label_sets) const;

    std::vector<ag::Var> parameters() const;
    int num_classes() const { return num_classes_; }

    nn::Network trunk;
    nn::Network label_embed;
    nn::Network head;

private:
    int num_classes_;
};

// Throws DimMismatch.
Generator assemble_generator(nn::Network embedding, nn::Network decoder);
Discriminator assemble_discriminator(nn::Network trunk, nn::Network label_embed, nn::Network head);

Generator build_generator(const ArchitectureConfig& cfg, int num_classes, Rng& rng);
Discriminator build_discriminator(const ArchitectureConfig& cfg, int num_classes, Rng& rng);

// ---------------------------------------------------------------------------
// Checkpoint directories: one <name>.npz per network plus manifest.txt.
// ---------------------------------------------------------------------------
using Manifest = std::map<std::string, std::string>;

void write_manifest(const std::filesystem::path& path, const Manifest& m);
// Throws CheckpointCorrupt on a missing or malformed file.
Manifest read_manifest(const std::filesystem::path& path);

Manifest architecture_manifest(const ArchitectureConfig& cfg, int num_classes);
// Reads latent_dim, channels, leaky_slope and widths back.
ArchitectureConfig architecture_from_manifest(const Manifest& m);
int num_classes_from_manifest(const Manifest& m);

void save_npz_checked(const std::filesystem::path& path, const npz::Archive& a);
npz::Archive load_npz_checked(const std::filesystem::path& path);

struct NamedNetwork {
    std::string name;
    const nn::Network* net;
};
// Writes to a sibling temporary directory and renames it into place, so a
// failed save never leaves a partial checkpoint. Throws DiskFull.
void save_checkpoint(const std::filesystem::path& dir, std::span<const NamedNetwork> nets, const Manifest& manifest,
                     std::span<const std::pair<std::string, npz::Archive>> extra = {});
void load_network(const std::filesystem::path& dir, const std::string& name, nn::Network& net);

} // namespace bagan
