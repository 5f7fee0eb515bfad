#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace diffbatt {

/// Seeded random source with platform-independent output.
///
/// The engine is std::mt19937_64, whose sequence is fixed by the standard.
/// Distribution transforms are implemented here rather than through
/// <random> distributions, whose outputs vary between standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed), seed_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer on [0, n). Rejection sampling removes modulo bias.
    std::uint64_t below(std::uint64_t n);

    /// Standard normal via the Box-Muller transform; caches the second value.
    double normal();

    double normal(double mean, double sd) { return mean + sd * normal(); }

    bool bernoulli(double p) { return uniform() < p; }

    /// Independent child stream derived from this stream's seed and a tag.
    /// Does not advance this generator.
    Rng split(std::string_view tag) const { return Rng(derive_seed(seed_, tag)); }
    Rng split(std::uint64_t index) const { return Rng(mix(seed_ ^ mix(index + 0x9e3779b97f4a7c15ULL))); }

    std::uint64_t seed() const { return seed_; }

    /// splitmix64 finalizer.
    static std::uint64_t mix(std::uint64_t z);
    /// FNV-1a of the tag folded into the parent seed.
    static std::uint64_t derive_seed(std::uint64_t parent, std::string_view tag);

private:
    std::mt19937_64 engine_;
    std::uint64_t seed_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace diffbatt
