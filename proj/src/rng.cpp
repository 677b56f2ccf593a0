#include "marsim/rng.hpp"

#include <cmath>
#include <numbers>

namespace marsim {

namespace {

constexpr std::uint32_t kM0 = 0xD2511F53u;
constexpr std::uint32_t kM1 = 0xCD9E8D57u;
constexpr std::uint32_t kW0 = 0x9E3779B9u;
constexpr std::uint32_t kW1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
    const std::uint64_t p = std::uint64_t(a) * b;
    hi = std::uint32_t(p >> 32);
    lo = std::uint32_t(p);
}

inline Philox4x32::Key split(std::uint64_t v) {
    return {std::uint32_t(v), std::uint32_t(v >> 32)};
}

}  // namespace

Philox4x32::Counter Philox4x32::generate(Counter c, Key k) {
    for (int round = 0; round < 10; ++round) {
        std::uint32_t hi0, lo0, hi1, lo1;
        mulhilo(kM0, c[0], hi0, lo0);
        mulhilo(kM1, c[2], hi1, lo1);
        c = {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
        k[0] += kW0;
        k[1] += kW1;
    }
    return c;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

CounterRng::CounterRng(std::uint64_t seed, std::uint64_t stream) : key_(split(seed)), stream_(stream) {}

void CounterRng::refill() {
    const auto s = split(stream_);
    buffer_ = Philox4x32::generate({std::uint32_t(block_), std::uint32_t(block_ >> 32), s[0], s[1]}, key_);
    ++block_;
    used_ = 0;
}

CounterRng::result_type CounterRng::operator()() {
    if (used_ == 4) refill();
    return buffer_[used_++];
}

std::uint64_t CounterRng::next_u64() {
    const std::uint64_t lo = (*this)();
    const std::uint64_t hi = (*this)();
    return (hi << 32) | lo;
}

double CounterRng::normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double counter_normal(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    const auto k = split(seed);
    const auto out = Philox4x32::generate({std::uint32_t(b), std::uint32_t(b >> 32), std::uint32_t(a),
                                           std::uint32_t(a >> 32)},
                                          k);
    const double u1 = to_unit_open((std::uint64_t(out[1]) << 32) | out[0]);
    const double u2 = to_unit_open((std::uint64_t(out[3]) << 32) | out[2]);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace marsim
