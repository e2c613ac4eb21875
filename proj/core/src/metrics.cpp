#include "iidm/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace iidm {

namespace {

void check_pair(const Raster& pred, const Raster& truth, const Raster* mask) {
    pred.validate();
    truth.validate();
    if (pred.height != truth.height || pred.width != truth.width ||
        pred.channels != truth.channels)
        throw std::invalid_argument("metrics: pred/truth extents disagree");
    if (pred.dtype != RasterDtype::F32 || truth.dtype != RasterDtype::F32)
        throw std::invalid_argument("metrics: rasters must be f32");
    if (mask) {
        if (mask->height != pred.height || mask->width != pred.width)
            throw std::invalid_argument("metrics: mask extents disagree");
        if (!is_binary_mask(*mask))
            throw std::invalid_argument("metrics: mask must be a {0,255} u8 raster");
    }
}

bool included(const Raster* mask, std::size_t pixel) {
    return mask == nullptr || mask->u8[pixel] == 255;
}

} // namespace

PixelErrors pixel_metrics(const Raster& pred, const Raster& truth, const Raster* mask) {
    check_pair(pred, truth, mask);
    double abs_sum = 0.0, sq_sum = 0.0;
    std::size_t n = 0;
    for (std::size_t p = 0; p < pred.pixel_count(); ++p) {
        if (!included(mask, p)) continue;
        for (std::uint32_t c = 0; c < pred.channels; ++c) {
            const double d = static_cast<double>(pred.f32[p * pred.channels + c]) -
                             static_cast<double>(truth.f32[p * pred.channels + c]);
            abs_sum += std::fabs(d);
            sq_sum += d * d;
            ++n;
        }
    }
    if (n == 0) throw std::invalid_argument("metrics: mask excludes every pixel");
    PixelErrors e;
    e.n_pixels = n;
    e.mae = abs_sum / static_cast<double>(n);
    e.mse = sq_sum / static_cast<double>(n);
    e.rmse = std::sqrt(e.mse);
    return e;
}

double psnr(const Raster& pred, const Raster& truth, double max_val, const Raster* mask) {
    if (max_val <= 0.0) throw std::invalid_argument("psnr: max_val must be > 0");
    const double mse = pixel_metrics(pred, truth, mask).mse;
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(max_val * max_val / mse);
}

double ssim(const Raster& pred, const Raster& truth, const SsimOptions& opts,
            const Raster* mask) {
    check_pair(pred, truth, mask);
    if (pred.channels != 1) throw std::invalid_argument("ssim: needs single-channel rasters");
    if (opts.dynamic_range <= 0.0) throw std::invalid_argument("ssim: dynamic range must be > 0");
    const std::uint32_t h = pred.height, w = pred.width;
    const std::uint32_t win = opts.global_window ? std::max(h, w) : opts.window;
    if (!opts.global_window && (opts.window > h || opts.window > w))
        throw std::invalid_argument("ssim: window larger than image");

    const double c1 = (opts.k1 * opts.dynamic_range) * (opts.k1 * opts.dynamic_range);
    const double c2 = (opts.k2 * opts.dynamic_range) * (opts.k2 * opts.dynamic_range);

    double total = 0.0;
    std::size_t windows = 0;
    for (std::uint32_t wy = 0; wy < h; wy += win)
        for (std::uint32_t wx = 0; wx < w; wx += win) {
            double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
            std::size_t n = 0;
            for (std::uint32_t y = wy; y < std::min(h, wy + win); ++y)
                for (std::uint32_t x = wx; x < std::min(w, wx + win); ++x) {
                    const std::size_t p = std::size_t(y) * w + x;
                    if (!included(mask, p)) continue;
                    const double a = pred.f32[p];
                    const double b = truth.f32[p];
                    sx += a;
                    sy += b;
                    sxx += a * a;
                    syy += b * b;
                    sxy += a * b;
                    ++n;
                }
            if (n == 0) continue;
            const double dn = static_cast<double>(n);
            const double mx = sx / dn, my = sy / dn;
            const double vx = sxx / dn - mx * mx;
            const double vy = syy / dn - my * my;
            const double cxy = sxy / dn - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) /
                     ((mx * mx + my * my + c1) * (vx + vy + c2));
            ++windows;
        }
    if (windows == 0) throw std::invalid_argument("ssim: mask excludes every pixel");
    return total / static_cast<double>(windows);
}

MetricReport compute_report(const Raster& pred, const Raster& truth, const Raster* mask,
                            std::optional<double> max_val) {
    const PixelErrors e = pixel_metrics(pred, truth, mask);
    double mx;
    if (max_val) {
        mx = *max_val;
    } else {
        mx = 0.0;
        for (std::size_t p = 0; p < truth.pixel_count(); ++p)
            if (included(mask, p))
                for (std::uint32_t c = 0; c < truth.channels; ++c)
                    mx = std::max(mx, static_cast<double>(truth.f32[p * truth.channels + c]));
        if (mx <= 0.0) mx = 1.0; // degenerate all-zero truth
    }
    MetricReport r;
    r.mae = e.mae;
    r.mse = e.mse;
    r.rmse = e.rmse;
    r.n_pixels = e.n_pixels;
    r.mask_applied = mask != nullptr;
    r.psnr = e.mse == 0.0 ? std::numeric_limits<double>::infinity()
                          : 10.0 * std::log10(mx * mx / e.mse);
    SsimOptions so;
    so.dynamic_range = mx;
    so.window = std::min<std::uint32_t>(8, std::min(pred.height, pred.width));
    r.ssim = ssim(pred, truth, so, mask);
    return r;
}

void append_report_csv(const std::string& path, const std::string& run_id,
                       const MetricReport& r) {
    const bool fresh = !std::filesystem::exists(path);
    std::ofstream os(path, std::ios::app);
    if (!os) throw std::runtime_error("metrics csv: cannot open " + path);
    if (fresh) os << "run_id,mae,mse,rmse,psnr,ssim,n_pixels\n";
    char buf[512];
    if (std::isinf(r.psnr))
        std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%.17g,inf,%.17g,%zu", run_id.c_str(),
                      r.mae, r.mse, r.rmse, r.ssim, r.n_pixels);
    else
        std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%.17g,%.17g,%.17g,%zu", run_id.c_str(),
                      r.mae, r.mse, r.rmse, r.psnr, r.ssim, r.n_pixels);
    os << buf << '\n';
}

} // namespace iidm
