#pragma once

#include <cstdint>
#include <string_view>

namespace iidm {

/// Counter-based pseudo-random stream. Every consumer derives its own stream
/// from one run seed plus a purpose label ("train.noise", "scene.latent", ...),
/// so adding a consumer never perturbs the draws of another. The output at
/// counter n is a pure function of (seed, label, n).
class Prng {
public:
    Prng(std::uint64_t seed, std::string_view label);

    std::uint64_t next_u64();

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform();

    /// Standard normal via Box-Muller; draws are cached in pairs.
    double normal();

    /// Uniform integer in [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n);

    std::uint64_t key() const { return key_; }

private:
    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// Stable 64-bit hash of a label (FNV-1a). Exposed for deterministic
/// derived-seed construction (per-scene, per-ablation-row).
std::uint64_t hash_label(std::string_view label);

/// Mixes a seed with an index into a new seed (splitmix64 finalizer chain).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

} // namespace iidm
