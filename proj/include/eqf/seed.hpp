#pragma once

#include <cstdint>

namespace eqf {

/// SplitMix64 finalizer (Steele, Lea & Flood 2014).
constexpr std::uint64_t splitmix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Seed of realization `index` in an ensemble rooted at `base_seed`.
/// Stable across releases: extending an ensemble keeps existing members.
constexpr std::uint64_t realization_seed(std::uint64_t base_seed, std::uint64_t index) noexcept {
    return splitmix64(base_seed ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

/// Derive an independent stream seed from a parent seed and a tag.
constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t tag) noexcept {
    return splitmix64(splitmix64(parent) + tag);
}

} // namespace eqf
