// Writes a synthetic "cells" container: four classes of 64x64 grayscale disks
// that differ only by small dark marks.
#include "bagan/toy_data.hpp"

#include <CLI11.hpp>
#include <fmt/core.h>

#include <exception>

int main(int argc, char** argv)
{
    CLI::App app{"Synthetic similar-classes image set"};
    std::vector<std::int64_t> counts{500, 50, 50, 100};
    std::uint64_t seed = 1;
    std::string out;
    app.add_option("--counts", counts, "Images per class (four values)")->delimiter(',')->expected(4);
    app.add_option("--seed", seed, "Generator seed");
    app.add_option("--out", out, "Output .npz container")->required();
    CLI11_PARSE(app, argc, argv);
    try {
        const auto [images, labels] = bagan::make_toy_cells(counts, seed);
        bagan::save_container(out, images, labels);
        fmt::print("wrote {} images to {}\n", images.n, out);
    } catch (const std::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return 1;
    }
    return 0;
}
