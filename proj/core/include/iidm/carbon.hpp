#pragma once

#include <string>
#include <vector>

#include "iidm/patch.hpp"
#include "iidm/raster.hpp"

namespace iidm {

/// Volume-to-carbon conversion coefficients. The leading 2.439 constant is
/// kept configurable; see README for the caveat on its provenance.
struct CarbonParams {
    double delta = 1.90;   // volume expansion coefficient
    double rho = 0.5;      // bulk density (t/m^3)
    double gamma = 0.5;    // carbon content rate
    double factor = 2.439; // leading constant

    void validate() const;
};

/// v_ha (m^3/ha) times area (ha). Negative volume or nonpositive area throws.
double accumulated_volume(double v_ha, double area_ha);

/// Carbon storage (Mg) from accumulated volume: factor * delta * rho * gamma * v.
double carbon_storage(double volume_m3, const CarbonParams& p);

/// Canopy-height weights over a patch pixel set, normalized to sum to one.
/// An all-zero canopy falls back to uniform weights. Empty patch throws.
std::vector<double> canopy_weights(const Raster& canopy,
                                   const std::vector<std::uint32_t>& pixels);

/// Same normalization on a plain height vector (one entry per patch pixel).
std::vector<double> canopy_weights(const std::vector<double>& heights);

/// Per-pixel carbon density (Mg/pixel) with patch-id provenance.
struct DensityMap {
    Raster cd;         // f32
    Raster provenance; // u32 patch id per pixel, 0 where none
    std::vector<std::string> warnings;
};

/// Distributes each patch's carbon over its forest pixels by normalized
/// canopy weight. Pixels falling outside the forest mask are excluded with a
/// warning and the remaining weights renormalized; per-patch totals are
/// conserved over the pixels that stay.
DensityMap carbon_density_map(const PatchTable& patches, const Raster& canopy,
                              const Raster& mask, const CarbonParams& p);

} // namespace iidm
