#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace bagan {

// Seeded generator with platform-independent distributions. The full state is
// the engine state, so save/restore is exact.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform on [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller; consumes two draws, caches nothing.
    double normal();

    // Uniform integer on [0, n).
    std::uint64_t below(std::uint64_t n);

    // Derive an independent stream from this one.
    Rng fork() { return Rng(engine_() ^ 0x9e3779b97f4a7c15ULL); }

    std::string state() const;
    void set_state(const std::string& s);

private:
    std::mt19937_64 engine_;
};

} // namespace bagan
