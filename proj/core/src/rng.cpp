#include "iidm/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace iidm {

namespace {

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ull;

std::uint64_t mix64(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ull;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebull;
    z ^= z >> 31;
    return z;
}

} // namespace

std::uint64_t hash_label(std::string_view label) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : label) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
    return mix64(mix64(seed + kGolden) ^ (index + kGolden));
}

Prng::Prng(std::uint64_t seed, std::string_view label)
    : key_(mix64(seed + kGolden) ^ hash_label(label)) {}

std::uint64_t Prng::next_u64() {
    return mix64(key_ + (counter_++) * kGolden);
}

double Prng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Prng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // Box-Muller; u1 nudged away from 0 so log stays finite.
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
}

std::uint64_t Prng::below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Prng::below: n must be > 0");
    // Rejection sampling keeps the draw unbiased.
    const std::uint64_t limit = ~0ull - (~0ull % n);
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % n;
}

} // namespace iidm
