#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace crocodil {

// Fixed stream ids so every pipeline stage draws from its own lane of the
// run seed.
namespace streams {
constexpr uint64_t corpus = 1;
constexpr uint64_t acd = 2;
constexpr uint64_t prior = 3;
constexpr uint64_t cond = 4;
constexpr uint64_t scorer = 5;
constexpr uint64_t generate = 6;
constexpr uint64_t eval = 7;
} // namespace streams

// Counter-based random stream. State is the (seed, stream_id, counter)
// triple; the same triple yields the same draw sequence on every platform,
// and distinct stream_ids give independent streams. Splitting off child
// streams never advances the parent, so per-sample / per-worker streams can
// be handed out without changing the sequential result.
class RngStream {
  public:
    RngStream() : RngStream(0, 0) {}
    RngStream(uint64_t seed, uint64_t stream_id, uint64_t counter = 0)
        : seed_(seed), stream_id_(stream_id), counter_(counter) {
        key_ = mix64(mix64(seed_) ^ (stream_id_ * 0x9E3779B97F4A7C15ull));
    }

    uint64_t seed() const { return seed_; }
    uint64_t stream_id() const { return stream_id_; }
    uint64_t counter() const { return counter_; }

    RngStream substream(uint64_t child_id) const {
        return RngStream(seed_, mix64(stream_id_ ^ mix64(child_id + 0x1234ull)));
    }

    uint64_t next_u64() { return mix64(key_ ^ mix64(counter_++)); }

    // uniform in [0, 1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // integer in [0, n)
    uint64_t next_below(uint64_t n) {
        // 128-bit multiply keeps the bias below 2^-64, fine for our sizes
        return uint64_t((__uint128_t(next_u64()) * n) >> 64);
    }

    double gaussian() {
        // Box-Muller; two uniforms per draw so the state stays a bare counter
        double u = 1.0 - uniform();
        double theta = 2.0 * std::numbers::pi * uniform();
        return std::sqrt(-2.0 * std::log(u)) * std::cos(theta);
    }

    static uint64_t mix64(uint64_t x) {
        x += 0x9E3779B97F4A7C15ull;
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
        return x ^ (x >> 31);
    }

  private:
    uint64_t seed_ = 0;
    uint64_t stream_id_ = 0;
    uint64_t counter_ = 0;
    uint64_t key_ = 0;
};

} // namespace crocodil
