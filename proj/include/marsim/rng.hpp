#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace marsim {

/// Philox4x32-10 counter-based generator (Salmon et al.). Output depends only on
/// (counter, key), so streams can be addressed directly by index.
struct Philox4x32 {
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static Counter generate(Counter counter, Key key);
};

/// SplitMix64 finalizer; used to derive child seeds from (seed, index).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index);

/// Map 64 random bits to a double in the open interval (0, 1).
inline double to_unit_open(std::uint64_t bits) {
    return (double(bits >> 12) + 0.5) * 0x1.0p-52;
}

/// Sequential view of one Philox stream. The stream is identified by (seed, stream id)
/// and the n-th draw is a pure function of (seed, stream, n).
class CounterRng {
public:
    using result_type = std::uint32_t;

    CounterRng(std::uint64_t seed, std::uint64_t stream);

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()();
    std::uint64_t next_u64();
    /// Uniform in (0, 1).
    double uniform() { return to_unit_open(next_u64()); }
    /// Standard normal (Box-Muller on two uniforms).
    double normal();

private:
    void refill();

    Philox4x32::Key key_;
    std::uint64_t stream_;
    std::uint64_t block_ = 0;
    Philox4x32::Counter buffer_{};
    unsigned used_ = 4;
};

/// Standard normal deviate addressed by (seed, a, b) without any sequential state.
double counter_normal(std::uint64_t seed, std::uint64_t a, std::uint64_t b);

}  // namespace marsim
