#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace lmsq {

// Deterministic RNG helpers. mt19937_64's output sequence is pinned by the
// standard; the distribution adapters in <random> are not, so the mappings
// from raw 64-bit draws to doubles/ranges are spelled out here.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t raw() { return eng_(); }

    // uniform in [0, 1), 53-bit resolution
    double uniform() {
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform();
    }

    // uniform integer in [0, n), n > 0; multiply-shift mapping
    std::uint64_t uniform_index(std::uint64_t n) {
        // 128-bit multiply keeps the mapping unbiased enough for generator
        // purposes and is exactly reproducible
        unsigned __int128 wide = static_cast<unsigned __int128>(eng_()) * n;
        return static_cast<std::uint64_t>(wide >> 64);
    }

    // standard normal via Box-Muller; consumes two draws per pair, caches the
    // second so the draw count is stable
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform(); // log(0) guard, astronomically rare
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

  private:
    std::mt19937_64 eng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

} // namespace lmsq
