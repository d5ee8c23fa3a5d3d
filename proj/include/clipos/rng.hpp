#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string_view>
#include <utility>
#include <vector>

namespace clipos {

/// Seeded random source with every derived distribution pinned in this
/// file, so draws are identical across standard libraries and platforms.
/// (std::normal_distribution and friends are implementation-defined.)
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller; the second variate is cached.
    double normal();

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Unbiased integer in [0, n) by rejection sampling. n must be > 0.
    std::uint64_t below(std::uint64_t n);

    /// Fisher-Yates from the back.
    template <typename T>
    void shuffle(std::vector<T>& values) {
        for (std::size_t i = values.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(values[i - 1], values[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    std::optional<double> spare_;
};

/// 64-bit FNV-1a; used to derive per-word seeds for the toy text encoder.
std::uint64_t fnv1a64(std::string_view text) noexcept;

}  // namespace clipos
