#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "iidm/nn.hpp"
#include "iidm/tensor.hpp"

namespace iidm {

/// Pixel-center coordinates of an h x w grid in the shared [-1,1]^2 frame.
struct CoordGrid {
    std::uint32_t h = 0;
    std::uint32_t w = 0;

    double y(std::uint32_t row) const { return -1.0 + (2.0 * row + 1.0) / h; }
    double x(std::uint32_t col) const { return -1.0 + (2.0 * col + 1.0) / w; }
};

/// Nearest grid cell per query point (clamped to the frame). Equidistant
/// candidates resolve to the smallest (row, col).
struct NearestLookup {
    std::vector<std::int64_t> flat_indices;         // row*w + col per query
    std::vector<std::pair<double, double>> centers; // (y,x) of the chosen cell
};

NearestLookup nearest_lookup(const CoordGrid& grid,
                             const std::vector<std::pair<double, double>>& queries);

/// Features and cell-center coordinates of the Euclidean-nearest grid cell
/// for each query; h is (C,Hc,Wc) laid out on `grid`.
std::pair<Tensor, std::vector<std::pair<double, double>>> nearest_interp(
    const Tensor& h, const CoordGrid& grid,
    const std::vector<std::pair<double, double>>& queries);

/// Two-layer coordinate MLP: (nearest coarse feature, coordinate offset) ->
/// feature. One head per decoder level.
struct InrHead {
    Linear l1, l2;
    int feat_channels = 0;
    int out_channels = 0;

    static InrHead make(ParamRegistry& reg, const std::string& name, int feat_channels,
                        int out_channels, Prng& rng);
};

/// Evaluates the head at every fine-grid coordinate against the nearest
/// coarse feature; output is (C_out, fine.h, fine.w). The fine grid must be
/// strictly finer than the coarse one.
Tensor inr_upsample(const Tensor& h_next, const CoordGrid& coarse, const CoordGrid& fine,
                    const InrHead& head);

} // namespace iidm
