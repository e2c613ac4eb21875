#include "iidm/carbon.hpp"

#include <stdexcept>

namespace iidm {

void CarbonParams::validate() const {
    if (delta <= 0.0 || rho <= 0.0 || gamma <= 0.0 || factor <= 0.0)
        throw std::invalid_argument("CarbonParams: all coefficients must be > 0");
    if (gamma > 1.0) throw std::invalid_argument("CarbonParams: gamma must be <= 1");
}

double accumulated_volume(double v_ha, double area_ha) {
    if (v_ha < 0.0) throw std::invalid_argument("accumulated_volume: v_ha must be >= 0");
    if (area_ha <= 0.0) throw std::invalid_argument("accumulated_volume: area must be > 0");
    return v_ha * area_ha;
}

double carbon_storage(double volume_m3, const CarbonParams& p) {
    p.validate();
    if (volume_m3 < 0.0) throw std::invalid_argument("carbon_storage: volume must be >= 0");
    return p.factor * (p.delta * p.rho * p.gamma * volume_m3);
}

std::vector<double> canopy_weights(const std::vector<double>& heights) {
    if (heights.empty()) throw std::invalid_argument("canopy_weights: empty patch");
    double total = 0.0;
    for (double h : heights) {
        if (h < 0.0) throw std::invalid_argument("canopy_weights: canopy must be >= 0 on patch");
        total += h;
    }
    std::vector<double> w(heights.size());
    if (total == 0.0) {
        const double u = 1.0 / static_cast<double>(heights.size());
        for (auto& x : w) x = u;
    } else {
        for (std::size_t i = 0; i < heights.size(); ++i) w[i] = heights[i] / total;
    }
    return w;
}

std::vector<double> canopy_weights(const Raster& canopy,
                                   const std::vector<std::uint32_t>& pixels) {
    if (pixels.empty()) throw std::invalid_argument("canopy_weights: empty patch");
    if (canopy.dtype != RasterDtype::F32 || canopy.channels != 1)
        throw std::invalid_argument("canopy_weights: canopy must be single-channel f32");
    std::vector<double> heights(pixels.size());
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        if (pixels[i] >= canopy.pixel_count())
            throw std::invalid_argument("canopy_weights: pixel index out of range");
        heights[i] = canopy.f32[pixels[i]];
    }
    return canopy_weights(heights);
}

DensityMap carbon_density_map(const PatchTable& patches, const Raster& canopy,
                              const Raster& mask, const CarbonParams& p) {
    patches.validate();
    p.validate();
    const auto h = patches.patch_map.height, w = patches.patch_map.width;
    if (canopy.height != h || canopy.width != w || mask.height != h || mask.width != w)
        throw std::invalid_argument("carbon_density_map: raster extents disagree");
    if (!is_binary_mask(mask))
        throw std::invalid_argument("carbon_density_map: mask must be a {0,255} u8 raster");

    DensityMap out;
    out.cd = Raster::make_f32(h, w, 1, 0.f);
    out.provenance = Raster::make_u32(h, w, 1, 0);

    for (const auto& patch : patches.patches) {
        std::vector<std::uint32_t> kept;
        kept.reserve(patch.pixels.size());
        for (auto px : patch.pixels)
            if (mask.u8[px] == 255) kept.push_back(px);

        if (kept.size() != patch.pixels.size())
            out.warnings.push_back("patch " + std::to_string(patch.id) + ": " +
                                   std::to_string(patch.pixels.size() - kept.size()) +
                                   " pixel(s) outside forest mask excluded");
        if (kept.empty()) {
            out.warnings.push_back("patch " + std::to_string(patch.id) +
                                   ": entirely outside forest mask, contributes nothing");
            continue;
        }

        const double carbon = carbon_storage(accumulated_volume(patch.v_ha, patch.area_ha), p);
        const auto weights = canopy_weights(canopy, kept);
        for (std::size_t i = 0; i < kept.size(); ++i) {
            out.cd.f32[kept[i]] = static_cast<float>(carbon * weights[i]);
            out.provenance.u32[kept[i]] = patch.id;
        }
    }
    return out;
}

} // namespace iidm
