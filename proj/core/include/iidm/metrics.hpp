#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "iidm/raster.hpp"

namespace iidm {

/// One evaluation record. psnr is +infinity when pred == truth exactly (the
/// "infinite PSNR" sentinel); all other fields are finite.
struct MetricReport {
    double mae = 0.0;
    double mse = 0.0;
    double rmse = 0.0;
    double psnr = 0.0;
    double ssim = 0.0;
    std::size_t n_pixels = 0;
    bool mask_applied = false;
};

struct PixelErrors {
    double mae = 0.0;
    double mse = 0.0;
    double rmse = 0.0;
    std::size_t n_pixels = 0;
};

/// MAE/MSE/RMSE over included pixels (mask == 255 where a mask is given).
/// Shapes must agree; an all-excluded mask is a contract error.
PixelErrors pixel_metrics(const Raster& pred, const Raster& truth, const Raster* mask);

/// 10*log10(MAX^2/MSE); returns +infinity when MSE == 0.
double psnr(const Raster& pred, const Raster& truth, double max_val, const Raster* mask);

struct SsimOptions {
    double k1 = 0.01;
    double k2 = 0.03;
    double dynamic_range = 1.0; // L
    std::uint32_t window = 8;   // non-overlapping tiles
    bool global_window = false; // single window over the whole image
};

/// Two-factor SSIM (c3 = c2/2 folded in) averaged over non-overlapping
/// windows; trailing partial windows contribute, windows with no included
/// pixel are skipped. Statistics use the population convention.
double ssim(const Raster& pred, const Raster& truth, const SsimOptions& opts,
            const Raster* mask);

/// Full report. MAX (and the SSIM dynamic range) defaults to the truth
/// maximum over included pixels; pass max_val to override.
MetricReport compute_report(const Raster& pred, const Raster& truth, const Raster* mask,
                            std::optional<double> max_val = std::nullopt);

/// Appends "run_id,mae,mse,rmse,psnr,ssim,n_pixels" rows; writes the header
/// when the file does not yet exist. Infinite PSNR serializes as "inf".
void append_report_csv(const std::string& path, const std::string& run_id,
                       const MetricReport& r);

} // namespace iidm
