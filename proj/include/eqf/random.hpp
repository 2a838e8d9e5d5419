#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace eqf {

using Rng = std::mt19937_64;

__extension__ using uint128 = unsigned __int128;

/// Uniform on the open interval (0, 1); never returns 0 or 1.
inline double uniform_open01(Rng& rng) {
    return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

/// Uniform integer in [0, n), n > 0. Multiply-shift; bias at most n / 2^64.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
    return static_cast<std::uint64_t>((static_cast<uint128>(rng()) * n) >> 64);
}

/// Fisher-Yates with uniform_index, so the permutation depends only on the stream.
template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(uniform_index(rng, i));
        std::swap(v[i - 1], v[j]);
    }
}

} // namespace eqf
