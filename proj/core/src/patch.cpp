#include "iidm/patch.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace iidm {

void PatchTable::validate() const {
    if (patch_map.dtype != RasterDtype::U32 || patch_map.channels != 1)
        throw std::invalid_argument("PatchTable: patch_map must be a single-channel u32 raster");
    patch_map.validate();

    std::map<std::uint32_t, std::size_t> counts;
    for (auto id : patch_map.u32)
        if (id != 0) ++counts[id];

    if (counts.size() != patches.size())
        throw std::invalid_argument("PatchTable: row count does not match ids in patch_map");
    for (const auto& p : patches) {
        if (p.id == 0) throw std::invalid_argument("PatchTable: patch id 0 is reserved");
        auto it = counts.find(p.id);
        if (it == counts.end())
            throw std::invalid_argument("PatchTable: row id not present in patch_map");
        if (it->second != p.pixels.size())
            throw std::invalid_argument("PatchTable: pixel list size disagrees with patch_map");
        if (p.area_ha <= 0.0) throw std::invalid_argument("PatchTable: area must be > 0");
        if (p.v_ha < 0.0) throw std::invalid_argument("PatchTable: v_ha must be >= 0");
        for (auto px : p.pixels) {
            if (px >= patch_map.pixel_count())
                throw std::invalid_argument("PatchTable: pixel index out of range");
            if (patch_map.u32[px] != p.id)
                throw std::invalid_argument("PatchTable: pixel list disagrees with patch_map");
        }
    }
}

const Patch& PatchTable::find(std::uint32_t id) const {
    for (const auto& p : patches)
        if (p.id == id) return p;
    throw std::invalid_argument("PatchTable: no patch with id " + std::to_string(id));
}

PatchTable make_patch_table(Raster patch_map,
                            const std::vector<std::tuple<std::uint32_t, double, double>>& rows) {
    PatchTable t;
    t.patch_map = std::move(patch_map);
    std::map<std::uint32_t, std::vector<std::uint32_t>> pixels;
    for (std::size_t i = 0; i < t.patch_map.u32.size(); ++i)
        if (t.patch_map.u32[i] != 0)
            pixels[t.patch_map.u32[i]].push_back(static_cast<std::uint32_t>(i));
    for (const auto& [id, v_ha, area] : rows) {
        Patch p;
        p.id = id;
        p.v_ha = v_ha;
        p.area_ha = area;
        auto it = pixels.find(id);
        if (it != pixels.end()) p.pixels = it->second;
        t.patches.push_back(std::move(p));
    }
    t.validate();
    return t;
}

void write_patch_csv(const PatchTable& t, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("patch csv: cannot open for write: " + path);
    os << "patch_id,v_ha,area_ha\n";
    char buf[64];
    for (const auto& p : t.patches) {
        os << p.id << ',';
        std::snprintf(buf, sizeof buf, "%.17g", p.v_ha);
        os << buf << ',';
        std::snprintf(buf, sizeof buf, "%.17g", p.area_ha);
        os << buf << '\n';
    }
    if (!os) throw std::runtime_error("patch csv: write failed: " + path);
}

PatchTable read_patch_csv(const std::string& csv_path, Raster patch_map) {
    std::ifstream is(csv_path);
    if (!is) throw std::runtime_error("patch csv: cannot open for read: " + csv_path);
    std::string line;
    if (!std::getline(is, line) || line != "patch_id,v_ha,area_ha")
        throw std::runtime_error("patch csv: bad header in " + csv_path);
    std::vector<std::tuple<std::uint32_t, double, double>> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string a, b, c;
        if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',') || !std::getline(ss, c))
            throw std::runtime_error("patch csv: malformed row: " + line);
        rows.emplace_back(static_cast<std::uint32_t>(std::stoul(a)), std::stod(b), std::stod(c));
    }
    return make_patch_table(std::move(patch_map), rows);
}

} // namespace iidm
