#pragma once

#include <cstdint>
#include <string>

#include "iidm/patch.hpp"
#include "iidm/raster.hpp"

namespace iidm {

/// A self-consistent stand-in for the survey + imagery stack: 4-band f32
/// imagery, canopy height (m), {0,255} forest mask, survey patches, and the
/// per-pixel carbon density truth (Mg/pixel) the pipeline regresses toward.
struct SyntheticScene {
    Raster imagery;       // f32, 4 bands
    Raster canopy;        // f32, metres, positive over forest
    Raster mask;          // u8 {0,255}
    PatchTable patches;
    Raster truth_density; // f32, Mg/pixel, zero outside forest

    void validate() const;
};

/// Deterministic synthetic scene. The density field is a saturating function
/// of a smooth latent; the bands observe the latent linearly under ~10 dB of
/// smooth noise, so a learnable nonlinear signal exists while a plain linear
/// fit stays beatable. Patches are Voronoi cells over the forest pixels; the
/// truth raster is produced by the carbon pipeline itself, so conservation
/// holds by construction.
///
/// Requires h, w >= 16 and 1 <= n_patches <= number of forest pixels.
SyntheticScene gen_synthetic_scene(std::uint64_t seed, std::uint32_t h, std::uint32_t w,
                                   std::uint32_t n_patches);

// Scene directory layout: imagery.ras, canopy.ras, mask.ras, truth.ras,
// patch_map.ras, patches.csv.
void write_scene(const SyntheticScene& s, const std::string& dir);
SyntheticScene read_scene(const std::string& dir);

} // namespace iidm
