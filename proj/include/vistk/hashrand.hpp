#pragma once

#include <cstdint>
#include <initializer_list>

namespace vistk {

/// splitmix64 finalizer. Used wherever a value must depend only on logical
/// coordinates (seed, video, frame, pixel), never on traversal order, so
/// results are identical across clip decompositions and thread counts.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t hash_combine(std::initializer_list<std::uint64_t> values) {
    std::uint64_t h = 0x2545f4914f6cdd1dULL;
    for (std::uint64_t v : values)
        h = splitmix64(h ^ v);
    return h;
}

/// Uniform double in [0, 1) from a hash, using the top 53 bits.
inline double hash_unit(std::uint64_t h) {
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

} // namespace vistk
