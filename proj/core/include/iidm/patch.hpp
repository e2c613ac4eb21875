#pragma once

#include <cstdint>
#include <string>
#include <tuple>
#include <vector>

#include "iidm/raster.hpp"

namespace iidm {

/// Ground-survey pixel area: 16 m pixels, so 256 m^2 = 0.0256 ha.
inline constexpr double kPixelAreaHa = 0.0256;

struct Patch {
    std::uint32_t id = 0;              // nonzero
    double v_ha = 0.0;                 // stand volume per hectare (m^3/ha)
    double area_ha = 0.0;              // patch area (ha)
    std::vector<std::uint32_t> pixels; // flat y*width+x indices
};

/// Survey patches ("plaques") as disjoint pixel sets over a u32 id raster
/// (0 = no patch, k > 0 = patch id).
struct PatchTable {
    Raster patch_map; // u32, single channel
    std::vector<Patch> patches;

    /// Checks the id raster and rows agree: every nonzero id has exactly one
    /// row, pixel lists match the map, areas positive, volumes nonnegative.
    void validate() const;

    const Patch& find(std::uint32_t id) const;
};

/// Builds the per-patch pixel lists from an id raster plus (id, v_ha, area)
/// attribute rows.
PatchTable make_patch_table(Raster patch_map,
                            const std::vector<std::tuple<std::uint32_t, double, double>>& rows);

// CSV interchange: header "patch_id,v_ha,area_ha", one row per patch.
void write_patch_csv(const PatchTable& t, const std::string& path);
/// Reads attribute rows and joins them with the id raster.
PatchTable read_patch_csv(const std::string& csv_path, Raster patch_map);

} // namespace iidm
