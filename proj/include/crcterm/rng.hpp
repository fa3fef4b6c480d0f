#pragma once

// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
//
// Every draw is a pure function of (key, counter), so a path's randomness is
// addressed by (seed, path index, step, purpose) and never depends on thread
// scheduling or on how many draws other paths consumed.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace crcterm::rng {

inline constexpr const char* kAlgorithmName = "philox4x32-10";

using Counter = std::array<std::uint32_t, 4>;
using Key = std::array<std::uint32_t, 2>;

namespace detail {

inline constexpr std::uint32_t kMul0 = 0xD2511F53u;
inline constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
inline constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
inline constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
    const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
    hi = static_cast<std::uint32_t>(p >> 32);
    lo = static_cast<std::uint32_t>(p);
}

inline Counter round(const Counter& c, const Key& k) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kMul0, c[0], hi0, lo0);
    mulhilo(kMul1, c[2], hi1, lo1);
    return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
}

}  // namespace detail

inline Counter philox4x32_10(Counter ctr, Key key) {
    for (int r = 0; r < 10; ++r) {
        if (r > 0) {
            key[0] += detail::kWeyl0;
            key[1] += detail::kWeyl1;
        }
        ctr = detail::round(ctr, key);
    }
    return ctr;
}

/// Stream purposes keep model sampling and policy decisions on disjoint
/// counter ranges for the same (path, step).
enum class Purpose : std::uint32_t { Sampling = 0, Policy = 1, Auxiliary = 2 };

/// A sequential view on one (seed, path, step, purpose) substream.
class Stream {
public:
    Stream(std::uint64_t seed, std::uint64_t path, std::uint64_t step,
           Purpose purpose = Purpose::Sampling)
        : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
          path_(path), step_(step), purpose_(static_cast<std::uint32_t>(purpose)) {}

    std::uint32_t next_u32() {
        if (used_ == 4) refill();
        return block_[used_++];
    }

    /// Uniform on the open interval (0, 1) with 53 random bits.
    double uniform() {
        const std::uint64_t hi = next_u32();
        const std::uint64_t lo = next_u32();
        const std::uint64_t bits = ((hi << 32) | lo) >> 11;
        return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller; the second variate of a pair is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double phase = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(phase);
        has_spare_ = true;
        return r * std::cos(phase);
    }

private:
    void refill() {
        // Counter layout: block index, step, low 32 bits of path, high path
        // bits packed with the purpose tag.
        const Counter ctr{block_index_++, static_cast<std::uint32_t>(step_),
                          static_cast<std::uint32_t>(path_),
                          (static_cast<std::uint32_t>(path_ >> 32) & 0x0FFFFFFFu) | (purpose_ << 28)};
        block_ = philox4x32_10(ctr, key_);
        used_ = 0;
    }

    Key key_;
    std::uint64_t path_;
    std::uint64_t step_;
    std::uint32_t purpose_;
    std::uint32_t block_index_ = 0;
    Counter block_{};
    int used_ = 4;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace crcterm::rng
