#include "iidm/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <stdexcept>

#include "iidm/carbon.hpp"
#include "iidm/rng.hpp"

namespace iidm {

namespace {

// Bilinearly interpolated grid of unit normals; cell controls smoothness.
std::vector<double> noise_octave(std::uint64_t seed, const std::string& label, std::uint32_t h,
                                 std::uint32_t w, std::uint32_t cell) {
    Prng rng(seed, label);
    const std::uint32_t gh = h / cell + 2, gw = w / cell + 2;
    std::vector<double> grid(std::size_t(gh) * gw);
    for (auto& v : grid) v = rng.normal();

    std::vector<double> out(std::size_t(h) * w);
    for (std::uint32_t y = 0; y < h; ++y) {
        const double fy = static_cast<double>(y) / cell;
        const auto y0 = static_cast<std::uint32_t>(fy);
        const double ty = fy - y0;
        for (std::uint32_t x = 0; x < w; ++x) {
            const double fx = static_cast<double>(x) / cell;
            const auto x0 = static_cast<std::uint32_t>(fx);
            const double tx = fx - x0;
            const double a = grid[std::size_t(y0) * gw + x0];
            const double b = grid[std::size_t(y0) * gw + x0 + 1];
            const double c = grid[std::size_t(y0 + 1) * gw + x0];
            const double d = grid[std::size_t(y0 + 1) * gw + x0 + 1];
            out[std::size_t(y) * w + x] =
                (1 - ty) * ((1 - tx) * a + tx * b) + ty * ((1 - tx) * c + tx * d);
        }
    }
    return out;
}

void standardize(std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= static_cast<double>(v.size());
    const double inv = var > 0.0 ? 1.0 / std::sqrt(var) : 1.0;
    for (double& x : v) x = (x - mean) * inv;
}

std::vector<double> smooth_field(std::uint64_t seed, const std::string& label, std::uint32_t h,
                                 std::uint32_t w) {
    auto coarse = noise_octave(seed, label + ".oct8", h, w, 8);
    const auto fine = noise_octave(seed, label + ".oct4", h, w, 4);
    for (std::size_t i = 0; i < coarse.size(); ++i) coarse[i] += 0.5 * fine[i];
    standardize(coarse);
    return coarse;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

constexpr double kDensityMax = 40.0;   // Mg/pixel ceiling of the saturating law
constexpr double kDensityGain = 1.6;   // saturation steepness
constexpr double kForestQuantile = 0.35;

} // namespace

void SyntheticScene::validate() const {
    imagery.validate();
    canopy.validate();
    mask.validate();
    truth_density.validate();
    patches.validate();
    const auto h = imagery.height, w = imagery.width;
    for (const Raster* r : {&canopy, &mask, &truth_density, &patches.patch_map})
        if (r->height != h || r->width != w)
            throw std::invalid_argument("SyntheticScene: raster extents disagree");
    if (imagery.channels != 4)
        throw std::invalid_argument("SyntheticScene: imagery must have 4 bands");
    if (!is_binary_mask(mask))
        throw std::invalid_argument("SyntheticScene: mask must be a {0,255} u8 raster");
    for (std::size_t i = 0; i < mask.u8.size(); ++i)
        if (mask.u8[i] == 0 && truth_density.f32[i] != 0.f)
            throw std::invalid_argument("SyntheticScene: truth_density nonzero outside forest");
}

SyntheticScene gen_synthetic_scene(std::uint64_t seed, std::uint32_t h, std::uint32_t w,
                                   std::uint32_t n_patches) {
    if (h < 16 || w < 16)
        throw std::invalid_argument("gen_synthetic_scene: dimensions must be >= 16");
    if (n_patches < 1) throw std::invalid_argument("gen_synthetic_scene: n_patches must be >= 1");

    const auto latent = smooth_field(seed, "scene.latent", h, w);
    const auto forest_field = smooth_field(seed, "scene.forest", h, w);

    // Forest mask at a fixed quantile keeps both classes present.
    std::vector<double> sorted = forest_field;
    std::sort(sorted.begin(), sorted.end());
    const double cut =
        sorted[static_cast<std::size_t>(kForestQuantile * (static_cast<double>(sorted.size()) - 1))];

    Raster mask = Raster::make_u8(h, w, 1, 0);
    std::vector<std::uint32_t> forest_pixels;
    for (std::size_t i = 0; i < mask.u8.size(); ++i)
        if (forest_field[i] >= cut) {
            mask.u8[i] = 255;
            forest_pixels.push_back(static_cast<std::uint32_t>(i));
        }
    if (forest_pixels.size() < n_patches)
        throw std::invalid_argument("gen_synthetic_scene: more patches than forest pixels");

    // Canopy and the desired density share the saturating transform of the latent.
    Raster canopy = Raster::make_f32(h, w, 1, 0.f);
    std::vector<double> desired(std::size_t(h) * w, 0.0);
    for (auto px : forest_pixels) {
        const double s = sigmoid(kDensityGain * latent[px]);
        canopy.f32[px] = static_cast<float>(2.0 + 28.0 * s);
        desired[px] = kDensityMax * s;
    }

    // Voronoi patches over forest pixels, seeded by distinct forest centers.
    Prng centers_rng(seed, "scene.centers");
    std::vector<std::uint32_t> centers;
    {
        std::vector<std::uint32_t> pool = forest_pixels;
        for (std::uint32_t k = 0; k < n_patches; ++k) {
            const auto j = static_cast<std::size_t>(centers_rng.below(pool.size()));
            centers.push_back(pool[j]);
            pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(j));
        }
    }
    Raster patch_map = Raster::make_u32(h, w, 1, 0);
    for (auto px : forest_pixels) {
        const double py = px / w, pxx = px % w;
        double best = 1e300;
        std::uint32_t best_id = 1;
        for (std::uint32_t k = 0; k < n_patches; ++k) {
            const double cy = centers[k] / w, cx = centers[k] % w;
            const double d = (py - cy) * (py - cy) + (pxx - cx) * (pxx - cx);
            if (d < best) {
                best = d;
                best_id = k + 1;
            }
        }
        patch_map.u32[px] = best_id;
    }

    // Patch attributes back out v_ha so the carbon math reproduces the
    // aggregated desired density.
    CarbonParams cp;
    std::vector<std::tuple<std::uint32_t, double, double>> rows;
    {
        std::vector<double> carbon_sum(n_patches, 0.0);
        std::vector<std::size_t> count(n_patches, 0);
        for (auto px : forest_pixels) {
            const auto id = patch_map.u32[px];
            carbon_sum[id - 1] += desired[px];
            ++count[id - 1];
        }
        for (std::uint32_t k = 0; k < n_patches; ++k) {
            const double area = static_cast<double>(count[k]) * kPixelAreaHa;
            const double v_ha =
                carbon_sum[k] / (cp.factor * cp.delta * cp.rho * cp.gamma * area);
            rows.emplace_back(k + 1, v_ha, area);
        }
    }

    SyntheticScene scene;
    scene.mask = std::move(mask);
    scene.canopy = std::move(canopy);
    scene.patches = make_patch_table(std::move(patch_map), rows);
    scene.truth_density =
        carbon_density_map(scene.patches, scene.canopy, scene.mask, cp).cd;

    // Bands observe the latent linearly plus smooth band noise at ~10 dB SNR.
    constexpr double kGain[4] = {0.8, 0.6, 0.5, 0.4};
    constexpr double kOffset[4] = {0.2, 0.3, 0.25, 0.35};
    scene.imagery = Raster::make_f32(h, w, 4);
    for (int band = 0; band < 4; ++band) {
        auto noise = smooth_field(seed, "scene.band" + std::to_string(band), h, w);
        const double sigma_n = kGain[band] * std::sqrt(0.1);
        for (std::uint32_t y = 0; y < h; ++y)
            for (std::uint32_t x = 0; x < w; ++x) {
                const std::size_t px = std::size_t(y) * w + x;
                scene.imagery.at(y, x, static_cast<std::uint32_t>(band)) = static_cast<float>(
                    kGain[band] * latent[px] + kOffset[band] + sigma_n * noise[px]);
            }
    }

    scene.validate();
    return scene;
}

void write_scene(const SyntheticScene& s, const std::string& dir) {
    std::filesystem::create_directories(dir);
    const std::filesystem::path base(dir);
    write_raster(s.imagery, (base / "imagery.ras").string());
    write_raster(s.canopy, (base / "canopy.ras").string());
    write_raster(s.mask, (base / "mask.ras").string());
    write_raster(s.truth_density, (base / "truth.ras").string());
    write_raster(s.patches.patch_map, (base / "patch_map.ras").string());
    write_patch_csv(s.patches, (base / "patches.csv").string());
}

SyntheticScene read_scene(const std::string& dir) {
    const std::filesystem::path base(dir);
    SyntheticScene s;
    s.imagery = read_raster((base / "imagery.ras").string());
    s.canopy = read_raster((base / "canopy.ras").string());
    s.mask = read_raster((base / "mask.ras").string());
    s.truth_density = read_raster((base / "truth.ras").string());
    Raster patch_map = read_raster((base / "patch_map.ras").string());
    s.patches = read_patch_csv((base / "patches.csv").string(), std::move(patch_map));
    s.validate();
    return s;
}

} // namespace iidm
