#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace plural {

using Rng = std::mt19937_64;

// SplitMix64 finalizer; used to derive independent child seeds so that every
// random process traces back to one named seed plus a stream id.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    return mix_seed(base ^ mix_seed(stream + 0x632BE59BD9B4E019ULL));
}

inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
    for (auto p : path) base = derive_seed(base, p);
    return base;
}

// Uniform double in [0,1) from the top 53 bits; independent of libstdc++'s
// distribution implementations.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace plural
