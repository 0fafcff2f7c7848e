#include "bagan/toy_data.hpp"

#include "bagan/errors.hpp"
#include "bagan/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

namespace bagan {

namespace {

constexpr double kBackground = 30.0;
constexpr double kCell = 190.0;
constexpr double kMark = 70.0;

// Soft coverage of a shape whose signed distance is d (negative inside).
double coverage(double d) { return std::clamp(0.5 - d, 0.0, 1.0); }

struct Mark {
    double x0, y0, x1, y1, r;  // capsule from (x0, y0) to (x1, y1); a dot when the ends coincide
};

double capsule_distance(double x, double y, const Mark& m)
{
    const double dx = m.x1 - m.x0, dy = m.y1 - m.y0;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0 ? ((x - m.x0) * dx + (y - m.y0) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    return std::hypot(x - (m.x0 + t * dx), y - (m.y0 + t * dy)) - m.r;
}

} // namespace

std::pair<ImageBatch, LabelBatch> make_toy_cells(std::span<const std::int64_t> counts, std::uint64_t seed)
{
    if (counts.size() != kToyClasses)
        throw InvalidConfig("toy data has exactly " + std::to_string(kToyClasses) + " classes");
    std::int64_t total = 0;
    for (auto c : counts)
        total += c;
    ImageBatch images(total, kImageSize, kImageSize, 1, RangeTag::Raw0To255);
    LabelBatch labels{{}, kToyClasses};
    Rng rng(seed);

    std::int64_t i = 0;
    for (int k = 0; k < kToyClasses; ++k)
        for (std::int64_t n = 0; n < counts[static_cast<std::size_t>(k)]; ++n, ++i) {
            const double cx = 32 + rng.uniform(-4, 4), cy = 32 + rng.uniform(-4, 4);
            const double radius = rng.uniform(17, 22);
            const double bright = kCell + rng.uniform(-15, 15);

            // Marks stay well inside the disk.
            auto inner_point = [&](double margin) {
                const double a = rng.uniform(0, 2 * std::numbers::pi);
                const double r = (radius - margin) * std::sqrt(rng.uniform());
                return std::pair{cx + r * std::cos(a), cy + r * std::sin(a)};
            };
            std::vector<Mark> marks;
            if (k == 1 || k == 2) {
                for (int d = 0; d < (k == 1 ? 1 : 3); ++d) {
                    const auto [x, y] = inner_point(6);
                    marks.push_back({x, y, x, y, rng.uniform(2.5, 3.5)});
                }
            } else if (k == 3) {
                const auto [x, y] = inner_point(12);
                const double a = rng.uniform(0, std::numbers::pi);
                const double h = rng.uniform(5, 7);
                marks.push_back({x - h * std::cos(a), y - h * std::sin(a), x + h * std::cos(a), y + h * std::sin(a),
                                 1.5});
            }

            auto img = images.image(i);
            for (int y = 0; y < kImageSize; ++y)
                for (int x = 0; x < kImageSize; ++x) {
                    const double px = x + 0.5, py = y + 0.5;
                    const double cell = coverage(std::hypot(px - cx, py - cy) - radius);
                    double mark = 0;
                    for (const auto& m : marks)
                        mark = std::max(mark, coverage(capsule_distance(px, py, m)));
                    double v = kBackground + cell * (bright - kBackground);
                    v += mark * cell * (kMark - v);
                    v += 2.0 * rng.normal();
                    img[static_cast<std::size_t>(y * kImageSize + x)] =
                        static_cast<float>(std::clamp(std::round(v), 0.0, 255.0));
                }
            labels.labels.push_back(k);
        }
    return {std::move(images), std::move(labels)};
}

} // namespace bagan
