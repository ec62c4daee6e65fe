#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string_view>

namespace vbsel {

/// Seeded random stream.
///
/// Built on std::mt19937_64, whose output sequence is fixed by the standard.
/// The distributions are implemented here rather than taken from <random>
/// because the library distributions are implementation-defined, and every
/// artifact this toolkit writes has to be reproducible from its seed.
/// Copying an Rng forks the stream: both copies yield the same sequence.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller; consumes exactly two 64-bit draws.
    double normal();

    /// +1 or -1 with probability 1/2 each.
    double sign() { return (engine_() >> 63) != 0 ? 1.0 : -1.0; }

    /// Uniform integer in [0, n). n must be positive.
    std::size_t index(std::size_t n);

private:
    std::mt19937_64 engine_;
};

/// Sub-seed for a named role ("split", "init", "train", "inference").
std::uint64_t derive_seed(std::uint64_t seed, std::string_view role);

/// Sub-seed for a positional stream (epoch, batch, MC sample index).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a);
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b);

}  // namespace vbsel
