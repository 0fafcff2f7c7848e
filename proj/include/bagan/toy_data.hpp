#pragma once

#include "bagan/dataset.hpp"

#include <cstdint>
#include <span>
#include <utility>

namespace bagan {

// Synthetic 64x64 grayscale "cells": a bright disk with jittered position and
// radius on a dark background. Classes differ only by small dark marks inside
// the disk: 0 none, 1 one dot, 2 three dots, 3 a short bar.
inline constexpr int kToyClasses = 4;

// counts[k] raw images of class k, grouped by class in index order.
std::pair<ImageBatch, LabelBatch> make_toy_cells(std::span<const std::int64_t> counts, std::uint64_t seed);

} // namespace bagan
