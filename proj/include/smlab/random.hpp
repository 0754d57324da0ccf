#pragma once

#include <cstdint>
#include <random>

namespace smlab {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to decorrelate derived seeds.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Independent sub-stream seed for (base, stream). Deterministic across runs.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) noexcept
{
    return splitmix64(base ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) noexcept
{
    return derive_seed(derive_seed(base, a), b);
}

inline double uniform01(Rng& rng)
{
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline double std_normal(Rng& rng)
{
    return std::normal_distribution<double>(0.0, 1.0)(rng);
}

} // namespace smlab
