#pragma once
// Seeded randomness with exact, documented update rules so any language can
// reproduce the streams bit-for-bit.
//
// Generator: xoshiro256++ (Blackman & Vigna), state seeded from the seed via
// the splitmix64 sequence. Update rules:
//
//   splitmix64 sequence from s:
//     s += 0x9E3779B97F4A7C15
//     z = s; z ^= z >> 30; z *= 0xBF58476D1CE4E5B9
//     z ^= z >> 27; z *= 0x94D049BB133111EB; z ^= z >> 31; output z
//
//   xoshiro256++ next():
//     result = rotl(s0 + s3, 23) + s0
//     t = s1 << 17; s2 ^= s0; s3 ^= s1; s1 ^= s2; s0 ^= s3; s2 ^= t
//     s3 = rotl(s3, 45)
//
// Derived values:
//   unit-interval double in (0,1]: ((x >> 11) + 1) * 2^-53
//   uniform(a,b): a + (b-a) * unit
//   gaussian(): Box-Muller from two unit draws u1,u2:
//     r = sqrt(-2 ln u1); first = r*cos(2*pi*u2); cached second = r*sin(2*pi*u2)
//     (one gaussian() call consumes two uniforms and caches the sine value)
//   below(n): unbiased bounded integer by rejection:
//     threshold = (2^64 - n) % n; draw x until x >= threshold; return x % n
//   substream(seed, id): child seed = splitmix64_mix(seed XOR ((id+1) * 0x9E3779B97F4A7C15))
//     where splitmix64_mix is the z-mixing above without the state increment.
#include <cstdint>
#include <cmath>
#include <vector>

namespace manigrad {

inline std::uint64_t splitmix64_mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ull;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBull;
    z ^= z >> 31;
    return z;
}

inline std::uint64_t splitmix64_next(std::uint64_t& s) {
    s += 0x9E3779B97F4A7C15ull;
    return splitmix64_mix(s);
}

inline std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t id) {
    return splitmix64_mix(seed ^ ((id + 1) * 0x9E3779B97F4A7C15ull));
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& w : s_) w = splitmix64_next(sm);
    }

    static Rng substream(std::uint64_t seed, std::uint64_t id) {
        return Rng(substream_seed(seed, id));
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform double in (0,1]
    double next_unit() {
        return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    }

    double uniform(double a, double b) { return a + (b - a) * next_unit(); }

    double gaussian() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        const double u1 = next_unit();
        const double u2 = next_unit();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double th = 2.0 * M_PI * u2;
        cached_ = r * std::sin(th);
        have_cached_ = true;
        return r * std::cos(th);
    }

    // Unbiased integer in [0, n)
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t threshold = (0ull - n) % n;
        for (;;) {
            const std::uint64_t x = next_u64();
            if (x >= threshold) return x % n;
        }
    }

    // Fisher-Yates, descending index, swap with below(i+1)
    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }
    std::uint64_t s_[4]{};
    double cached_ = 0;
    bool have_cached_ = false;
};

} // namespace manigrad
