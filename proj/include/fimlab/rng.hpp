#pragma once

#include <cmath>
#include <cstdint>

namespace fimlab {

/// Counter-based random stream. The state advances by a fixed odd increment
/// and each output is a bijective mix of the counter (SplitMix64), so the
/// i-th draw of a stream is a pure function of (key, i). Substreams derived
/// via child(id) are keyed by hashing the id into the parent key, which lets
/// callers address draws as (master_seed, trial, sample) without any shared
/// mutable state between trials.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : state_(mix(seed ^ kSeedTag)) {}

    /// Derive an independent substream. Streams with distinct (parent, id)
    /// never share counters.
    RngStream child(std::uint64_t id) const {
        RngStream s(*this);
        s.state_ = mix(state_ + (id + 1) * kGamma);
        return s;
    }

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += kGamma);
        return finalize(z);
    }

    /// Uniform double in [0, 1), 53 random bits.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Uniform double in (0, 1]; never zero, safe for log().
    double next_double_pos() {
        return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller; consumes exactly two uniforms.
    double next_normal() {
        const double u1 = next_double_pos();
        const double u2 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
    }

private:
    static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;
    static constexpr std::uint64_t kSeedTag = 0x5851f42d4c957f2dULL;
    static constexpr double kPi = 3.14159265358979323846;

    static std::uint64_t finalize(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }
    static std::uint64_t mix(std::uint64_t z) { return finalize(z + kGamma); }

    std::uint64_t state_;
};

}  // namespace fimlab
