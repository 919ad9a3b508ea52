#pragma once

#include <cstdint>
#include <vector>

#include "avfp/tensor.hpp"

namespace avfp {

/// SplitMix64 finalizer.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Counter-based generator: the i-th draw of stream (seed, stream) is
/// splitmix64(key + i * golden) where key mixes seed and stream id. Any draw
/// can be reproduced from (seed, stream, counter) alone, which is all the
/// state a checkpoint needs.
class CounterRng {
public:
    CounterRng(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter = 0) noexcept
        : seed_(seed), stream_(stream), counter_(counter), key_(splitmix64(seed ^ splitmix64(stream + 0x5851f42d4c957f2dULL))) {}

    std::uint64_t next_u64() noexcept { return splitmix64(key_ + 0x9e3779b97f4a7c15ULL * counter_++); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Standard normal by Box-Muller (one output per two uniforms).
    double normal() noexcept;

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) noexcept { return n == 0 ? 0 : next_u64() % n; }

    Tensor normal_tensor(Shape shape);

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream() const noexcept { return stream_; }
    std::uint64_t counter() const noexcept { return counter_; }

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t counter_;
    std::uint64_t key_;
};

/// Fisher-Yates permutation of 0..n-1.
std::vector<std::size_t> permutation(CounterRng& rng, std::size_t n);

}  // namespace avfp
