#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace mriuq {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent, order-free substream
// seeds from a base seed and a list of indices.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path) noexcept
{
    std::uint64_t s = mix_seed(base);
    for (auto p : path)
        s = mix_seed(s ^ mix_seed(p + 0x632be59bd9b4e019ULL));
    return s;
}

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

inline Rng make_rng(std::uint64_t base, std::initializer_list<std::uint64_t> path)
{
    return Rng(derive_seed(base, path));
}

} // namespace mriuq
