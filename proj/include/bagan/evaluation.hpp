#pragma once

#include "bagan/dataset.hpp"
#include "bagan/network_zoo.hpp"
#include "bagan/optim.hpp"

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace bagan {

// ---------------------------------------------------------------------------
// Frechet distance
// ---------------------------------------------------------------------------
struct FeatureStats {
    Tensor mean;  // [F]
    Tensor cov;   // [F, F], denominator N - 1
    std::int64_t count = 0;
};

// features: [N, F]. Throws TooFewSamples when N < 2.
FeatureStats compute_stats(const Tensor& features);

// |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)). Throws DimMismatch and
// ComplexResidual.
double fid(const FeatureStats& a, const FeatureStats& b);

// ---------------------------------------------------------------------------
// Feature extractors
// ---------------------------------------------------------------------------
class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    virtual std::string id() const = 0;
    // Scaled images -> [N, F].
    virtual Tensor extract(const ImageBatch& images) const = 0;
};

struct ClassifierConfig {
    std::array<int, 4> widths{8, 16, 32, 64};
    int hidden = 64;
    int epochs = 10;
    int batch_size = 64;
    AdamConfig adam{1e-3, 0.9, 0.999, 1e-7};
    std::uint64_t seed = 0;
};

// A small convolutional classifier trained on labeled images. Its hidden layer
// provides FID features; its logits make it a probe of class identity.
class ClassifierExtractor : public FeatureExtractor {
public:
    ClassifierExtractor(int channels, int num_classes, const ClassifierConfig& cfg);

    std::string id() const override;
    Tensor extract(const ImageBatch& images) const override;

    // Returns the mean training loss per epoch.
    std::vector<double> train(const ImageBatch& images, const LabelBatch& labels);
    std::vector<int> predict(const ImageBatch& images) const;
    double accuracy(const ImageBatch& images, const LabelBatch& labels) const;

    void save(const std::filesystem::path& dir) const;
    static ClassifierExtractor load(const std::filesystem::path& dir);

private:
    ag::Var hidden(const ag::Var& x) const;

    int channels_, num_classes_;
    ClassifierConfig cfg_;
    nn::Network body_;    // image -> hidden features
    nn::Network logits_;  // hidden features -> class logits
};

// Externally supplied backbone weights in the classifier checkpoint layout.
// Throws ExtractorUnavailable when the directory or its weights are missing.
std::unique_ptr<FeatureExtractor> load_pretrained_extractor(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Per-class FID
// ---------------------------------------------------------------------------
struct FidRow {
    int cls;
    double fid;
    std::int64_t n_real;
    std::int64_t n_gen;
};

struct FidReport {
    std::string extractor_id;
    std::vector<FidRow> rows;

    double at(int cls) const;
};

// Provided samples vs. class-filtered validation reals. Throws
// EmptyClassInValidation.
FidReport fid_per_class(const ImageBatch& samples, const LabelBatch& sample_labels, const ImageBatch& validation,
                        const LabelBatch& validation_labels, const FeatureExtractor& extractor);
// Generates samples_per_class images of each class (0 matches the validation
// class count) with z ~ N(0, I) in inference mode.
FidReport fid_per_class(const Generator& G, const ImageBatch& validation, const LabelBatch& validation_labels,
                        const FeatureExtractor& extractor, std::int64_t samples_per_class, std::uint64_t seed);

void write_fid_csv(const std::filesystem::path& path, const FidReport& report);

// Scaled images of one class from G in inference mode; z drawn from rng.
ImageBatch generate_class(const Generator& G, int cls, std::int64_t n, Rng& rng, Tensor* z_out = nullptr);

// ---------------------------------------------------------------------------
// Conditional image grid: row 0 holds a real example per class; row r >= 1
// holds G(z_{r-1}, c) for each class c with one z per row.
// ---------------------------------------------------------------------------
struct GridLayout {
    int rows = 0;  // generated rows
    std::vector<int> classes;
    std::uint64_t seed = 0;
    Tensor z;  // [rows, latent_dim]
    // z row used by each cell (r, c), r >= 1; -1 for the real row.
    std::vector<int> cell_z_row;

    int columns() const { return static_cast<int>(classes.size()); }
};

struct ImageGrid {
    ImageBatch cells;  // (rows + 1) * columns images, row-major
    GridLayout layout;
};

// Throws MissingRealExample when a requested class has no real example.
ImageGrid image_grid(const Generator& G, std::span<const int> classes, int rows, std::uint64_t seed,
                     const ImageBatch& real_examples, const LabelBatch& real_labels);
// Recomputes cell (r, c), r >= 1, from the stored z.
ImageBatch regenerate_cell(const Generator& G, const GridLayout& layout, int r, int c);

// Tiles a scaled grid into one 8-bit PNG and writes a sidecar text file.
void write_grid(const std::filesystem::path& png, const ImageGrid& grid);

// ---------------------------------------------------------------------------
// Latent dispersion and feature projection
// ---------------------------------------------------------------------------
enum class Projection { Pca, Tsne };
Projection parse_projection(const std::string& s);

struct SilhouetteResult {
    double score = 0;
    bool degenerate = false;  // zero total variance; score reported as 0
};

// Mean Euclidean silhouette over all samples. Throws SingleClass.
SilhouetteResult silhouette(const Tensor& points, std::span<const int> labels);

// [N, 2] projections.
Tensor pca_2d(const Tensor& points);
Tensor tsne_2d(const Tensor& points, double perplexity, int iterations, std::uint64_t seed);

struct DispersionResult {
    Tensor points;  // [N, 2]
    SilhouetteResult silhouette;
};

// The silhouette is computed in the full latent space, not the projection.
DispersionResult latent_dispersion(const Tensor& latents, std::span<const int> labels,
                                   Projection method = Projection::Pca, std::uint64_t seed = 0);

void write_dispersion_csv(const std::filesystem::path& path, const DispersionResult& d, std::span<const int> labels);

struct ProjectedPoint {
    double x, y;
    int cls;
    bool is_real;
};

// Features of both sets projected jointly onto the top two principal axes.
std::vector<ProjectedPoint> feature_projection(const ImageBatch& real, const LabelBatch& real_labels,
                                               const ImageBatch& gen, const LabelBatch& gen_labels,
                                               const FeatureExtractor& extractor);
// Distance between the real and generated centroids of class `cls`.
double centroid_distance(std::span<const ProjectedPoint> points, int cls);

void write_projection_csv(const std::filesystem::path& path, std::span<const ProjectedPoint> points);

} // namespace bagan
