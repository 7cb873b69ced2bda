#pragma once

#include <cmath>
#include <cstdint>

namespace fdpm {

// Philox4x32-10 counter-based generator.  Chosen over std::mt19937 +
// std::normal_distribution because the standard library's distributions are
// implementation-defined: golden tests must produce the same stream on every
// platform.  The generator is the usual 10-round Philox with the standard
// round constants; each 128-bit block yields four 32-bit words.
class philox_rng {
public:
    explicit philox_rng(std::uint64_t seed, std::uint64_t stream = 0)
        : key0_(static_cast<std::uint32_t>(seed)),
          key1_(static_cast<std::uint32_t>(seed >> 32)),
          ctr2_(static_cast<std::uint32_t>(stream)),
          ctr3_(static_cast<std::uint32_t>(stream >> 32)) {}

    std::uint32_t next_u32() {
        if (avail_ == 0) refill();
        return out_[4 - avail_--];
    }

    std::uint64_t next_u64() {
        std::uint64_t lo = next_u32();
        std::uint64_t hi = next_u32();
        return (hi << 32) | lo;
    }

    // Uniform on (0,1), strictly away from both endpoints.
    double uniform() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1p-53;
    }

    // Standard normal via Box-Muller; the paired draw is cached.
    double normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        double u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double t = 6.283185307179586476925286766559 * u2;
        cached_ = r * std::sin(t);
        have_cached_ = true;
        return r * std::cos(t);
    }

    // Uniform integer in [0, bound) by rejection (no modulo bias).
    std::uint64_t below(std::uint64_t bound) {
        const std::uint64_t limit = bound * (~std::uint64_t{0} / bound);
        std::uint64_t v;
        do {
            v = next_u64();
        } while (v >= limit);
        return v % bound;
    }

private:
    static void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
        std::uint64_t p = static_cast<std::uint64_t>(a) * b;
        hi = static_cast<std::uint32_t>(p >> 32);
        lo = static_cast<std::uint32_t>(p);
    }

    void refill() {
        std::uint32_t c0 = ctr0_, c1 = ctr1_, c2 = ctr2_, c3 = ctr3_;
        std::uint32_t k0 = key0_, k1 = key1_;
        for (int round = 0; round < 10; ++round) {
            std::uint32_t hi0, lo0, hi1, lo1;
            mulhilo(0xD2511F53u, c0, hi0, lo0);
            mulhilo(0xCD9E8D57u, c2, hi1, lo1);
            c0 = hi1 ^ c1 ^ k0;
            c1 = lo1;
            c2 = hi0 ^ c3 ^ k1;
            c3 = lo0;
            k0 += 0x9E3779B9u;
            k1 += 0xBB67AE85u;
        }
        out_[0] = c0;
        out_[1] = c1;
        out_[2] = c2;
        out_[3] = c3;
        avail_ = 4;
        if (++ctr0_ == 0) ++ctr1_;
    }

    std::uint32_t key0_, key1_;
    std::uint32_t ctr0_ = 0, ctr1_ = 0, ctr2_, ctr3_;
    std::uint32_t out_[4] = {0, 0, 0, 0};
    int avail_ = 0;
    double cached_ = 0.0;
    bool have_cached_ = false;
};

}  // namespace fdpm
