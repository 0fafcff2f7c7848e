#pragma once

#include "bagan/rng.hpp"
#include "bagan/tensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace bagan {

// Side length of every preprocessed image and network input.
inline constexpr int kImageSize = 64;

enum class RangeTag { Raw0To255, ScaledMinus1To1 };

// N x H x W x C images stored as float32.
struct ImageBatch {
    std::int64_t n = 0, h = 0, w = 0, c = 0;
    RangeTag range = RangeTag::Raw0To255;
    std::vector<float> data;

    ImageBatch() = default;
    ImageBatch(std::int64_t n, std::int64_t h, std::int64_t w, std::int64_t c, RangeTag range);

    std::int64_t image_size() const { return h * w * c; }
    std::span<const float> image(std::int64_t i) const;
    std::span<float> image(std::int64_t i);

    ImageBatch gather(std::span<const std::int64_t> idx) const;
    // Network input for the selected rows (all rows when idx is empty).
    Tensor to_tensor(std::span<const std::int64_t> idx = {}) const;
    static ImageBatch from_tensor(const Tensor& t, RangeTag range);
};

struct LabelBatch {
    std::vector<int> labels;
    int num_classes = 0;

    std::int64_t size() const { return static_cast<std::int64_t>(labels.size()); }
    LabelBatch gather(std::span<const std::int64_t> idx) const;
    std::vector<std::int64_t> counts() const;
    // Indices of every sample of class k, ascending.
    std::vector<std::int64_t> indices_of(int k) const;
};

struct DatasetSpec {
    std::string name;
    // Optional for containers; for folders, when given, must equal the sorted
    // subfolder names.
    std::vector<std::string> class_names;
    std::array<std::int64_t, 3> image_shape{64, 64, 3};  // H, W, C as stored
    std::filesystem::path source;                        // class-folder root or .npz container
};

struct ImbalanceSchedule {
    std::map<int, std::int64_t> per_class_target;
    std::uint64_t seed = 0;
};

// Folder layout root/<class_name>/*.{png,jpg,jpeg,bmp}, or a container with
// "images" (uint8, NxHxWxC or NxHxW) and "labels" (int64, N). Images whose size
// differs from spec.image_shape are resized bilinearly.
std::pair<ImageBatch, LabelBatch> load_dataset(const DatasetSpec& spec);

// Class names in the order load_dataset assigns indices.
std::vector<std::string> folder_class_names(const std::filesystem::path& root);

// Seeded subsample without replacement to the exact per-class targets. Classes
// absent from the schedule are dropped. Survivors keep their input order.
std::pair<ImageBatch, LabelBatch> apply_schedule(const ImageBatch& images, const LabelBatch& labels,
                                                 const ImbalanceSchedule& sched);

ImageBatch resize_bilinear(const ImageBatch& images, std::int64_t h, std::int64_t w);
// Resize to 64x64 then v / 127.5 - 1. Throws AlreadyScaled.
ImageBatch preprocess(const ImageBatch& raw);
// (v + 1) * 127.5, rounded to whole intensities.
ImageBatch to_raw(const ImageBatch& scaled);

ImbalanceSchedule read_schedule(const std::filesystem::path& path);
void write_schedule(const std::filesystem::path& path, const ImbalanceSchedule& sched);

// A uniform random permutation of [0, n).
std::vector<std::int64_t> shuffled_indices(std::int64_t n, Rng& rng);

void save_container(const std::filesystem::path& path, const ImageBatch& raw, const LabelBatch& labels);

} // namespace bagan
