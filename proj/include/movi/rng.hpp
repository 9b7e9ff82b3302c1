#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <sstream>
#include <string>

namespace movi {

// Deterministic random source. All distribution logic lives here so that
// draw sequences are identical across platforms and standard libraries
// (std::uniform_real_distribution et al. are implementation-defined).
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1) with 53 bits of mantissa.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi] inclusive.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        // Rejection sampling keeps the draw unbiased.
        uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        uint64_t x;
        do {
            x = gen_();
        } while (x >= limit);
        return lo + static_cast<int64_t>(x % span);
    }

    // Standard normal via Box-Muller, one value per call pair.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1, u2;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // State serialization for resumable training. The spare normal draw is
    // stored as its bit pattern so the roundtrip is exact.
    std::string save_state() const {
        std::ostringstream os;
        uint64_t bits;
        static_assert(sizeof(bits) == sizeof(spare_));
        std::memcpy(&bits, &spare_, sizeof(bits));
        os << gen_ << ' ' << (have_spare_ ? 1 : 0) << ' ' << bits;
        return os.str();
    }

    void load_state(const std::string& s) {
        std::istringstream is(s);
        int hs = 0;
        uint64_t bits = 0;
        is >> gen_ >> hs >> bits;
        std::memcpy(&spare_, &bits, sizeof(bits));
        have_spare_ = hs != 0;
    }

private:
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace movi
