// Copyright (c) 2026, peftport authors
// SPDX-License-Identifier: Apache-2.0
//
// Seed derivation helpers. Every stochastic routine takes an explicit seed and
// derives sub-seeds by name, so results do not depend on call order.

#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace peftport {

using Rng = std::mt19937_64;

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ull;
    }
    return h;
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) noexcept {
    return splitmix64(seed ^ splitmix64(fnv1a(tag)));
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) noexcept {
    return splitmix64(seed ^ splitmix64(index + 0x51ED27u));
}

inline Rng make_rng(std::uint64_t seed, std::string_view tag) {
    return Rng(derive_seed(seed, tag));
}

}  // namespace peftport
