#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace cbd {

/// Name of the PRNG algorithm, recorded in run reports so results are
/// auditable: runs reproduce bit-exactly only under the same generator.
inline constexpr const char* kRngAlgorithm = "splitmix64+boxmuller";

/// Splittable counter-style PRNG (splitmix64). Small state, trivially
/// seedable, and `derive` gives independent deterministic substreams for
/// init / sampling / augmentation so adding a consumer never perturbs the
/// others.
class Rng {
public:
    explicit Rng(std::uint64_t seed) noexcept : state_(seed) {}

    std::uint64_t next_u64() noexcept {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1), 53-bit resolution.
    double uniform() noexcept {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Uniform integer in [0, n). Modulo bias is ~n/2^64, immaterial here.
    std::uint64_t next_below(std::uint64_t n) noexcept {
        return next_u64() % n;
    }

    /// Standard normal via Box-Muller with a cached spare.
    double gauss() noexcept {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform(); // (0, 1]: keeps log finite
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double gauss(double mean, double sigma) noexcept {
        return mean + sigma * gauss();
    }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// Deterministic substream seed: mixes (seed, stream) through one splitmix
/// round. Used for teacher seed offsets and per-purpose streams.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
    Rng mixer(seed ^ (0x6a09e667f3bcc909ULL + stream * 0x9e3779b97f4a7c15ULL));
    return mixer.next_u64();
}

} // namespace cbd
