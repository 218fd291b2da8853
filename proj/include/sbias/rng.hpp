#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace sbias {

using Engine = std::mt19937_64;

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Counter-based split: the child seed depends only on the parent seed and the
// key path, never on how many draws any sibling stream consumed. Replicates
// and cells can therefore run in any order or on any worker.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> keys) noexcept {
    std::uint64_t s = mix64(base);
    for (auto k : keys) s = mix64(s ^ mix64(k + 0x632be59bd9b4e019ULL));
    return s;
}

inline Engine make_engine(std::uint64_t seed) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
    return Engine(seq);
}

// Named sub-streams used inside one replicate.
enum class StreamId : std::uint64_t {
    locations = 1,
    treatment = 2,
    confounder = 3,
    error = 4,
    auxiliary = 5,
};

inline std::uint64_t stream_seed(std::uint64_t replicate_seed, StreamId id) noexcept {
    return derive_seed(replicate_seed, {static_cast<std::uint64_t>(id)});
}

}  // namespace sbias
