#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace iconsal {

constexpr std::uint64_t fnv1a64(std::string_view text, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t value);

/// Portable uniform draw in [-1, 1) from a 64-bit engine (the standard
/// distributions are implementation-defined).
inline double symmetric_unit(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * (2.0 / 9007199254740992.0) - 1.0;
}

/// Portable uniform integer in [0, bound).
inline std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t v;
    do {
        v = rng();
    } while (v >= limit);
    return v % bound;
}

}  // namespace iconsal
