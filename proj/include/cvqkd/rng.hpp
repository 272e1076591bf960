#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace cvqkd {

/// All randomness in the library flows through explicitly passed generators.
/// One 64-bit master seed fans out into independent streams, one per named
/// pipeline stage, so stages can run in any order (or in parallel) without
/// perturbing each other's draws.
using Rng = std::mt19937_64;

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace detail

/// Stream key derivation: FNV-1a over the stage name, folded into the master
/// seed and finalized with splitmix64. Stable across platforms and runs.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view stage) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : stage) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return detail::splitmix64(master ^ h);
}

inline Rng make_rng(std::uint64_t master, std::string_view stage) {
    return Rng(derive_seed(master, stage));
}

/// Indexed sub-stream (e.g. one per sub-channel) of a named stage.
inline Rng make_rng(std::uint64_t master, std::string_view stage, std::uint64_t index) {
    return Rng(detail::splitmix64(derive_seed(master, stage) + 0x632be59bd9b4e019ULL * (index + 1)));
}

}  // namespace cvqkd
