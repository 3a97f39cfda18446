#pragma once

#include <cmath>
#include <cstdint>

namespace mirrorsense {

// splitmix64; reference constants from Steele et al.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t s = seed ^ (0x9E3779B97F4A7C15ull * (stream + 1));
    return splitmix64(s);
}

// Self-contained generator so outputs do not depend on the standard library's
// distribution implementations. One instance per independent stream; streams
// derived from (seed, tag) are schedule-independent.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), state_(seed) {
        // decorrelate nearby seeds
        (void)splitmix64(state_);
    }

    std::uint64_t seed() const { return seed_; }

    Rng fork(std::uint64_t tag) const { return Rng(mix_seed(seed_, tag)); }

    std::uint64_t next_u64() { return splitmix64(state_); }

    // uniform in [0, 1)
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // inclusive bounds
    int uniform_int(int lo, int hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(next_u64() % span);
    }

    // Box-Muller; consumes two uniforms per call, no cached state.
    double normal() {
        const double u1 = 1.0 - uniform01();
        const double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

private:
    std::uint64_t seed_;
    std::uint64_t state_;
};

}  // namespace mirrorsense
