#pragma once

#include <cstdint>
#include <random>

namespace ggalign {

// splitmix64; used to derive independent stream seeds from (seed, indices).
inline std::uint64_t hash_u64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    return hash_u64(hash_u64(seed ^ hash_u64(a)) ^ hash_u64(b + 0x51ed270b9f9cULL));
}

inline std::mt19937_64 make_rng(std::uint64_t seed) {
    return std::mt19937_64(seed);
}

}  // namespace ggalign
