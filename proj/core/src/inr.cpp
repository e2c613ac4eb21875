#include "iidm/inr.hpp"

#include <cmath>
#include <stdexcept>

namespace iidm {

namespace {

// Nearest center index along one axis of n cells; exact ties take the lower
// index. Queries clamp to the frame.
std::int64_t nearest_axis_index(double q, std::uint32_t n) {
    if (q < -1.0) q = -1.0;
    if (q > 1.0) q = 1.0;
    const double continuous = ((q + 1.0) * n - 1.0) / 2.0; // solves center(r) == q
    const double floor_c = std::floor(continuous);
    std::int64_t idx;
    if (continuous - floor_c == 0.5)
        idx = static_cast<std::int64_t>(floor_c); // tie -> lower
    else
        idx = static_cast<std::int64_t>(std::floor(continuous + 0.5));
    if (idx < 0) idx = 0;
    if (idx >= static_cast<std::int64_t>(n)) idx = static_cast<std::int64_t>(n) - 1;
    return idx;
}

} // namespace

NearestLookup nearest_lookup(const CoordGrid& grid,
                             const std::vector<std::pair<double, double>>& queries) {
    if (grid.h == 0 || grid.w == 0) throw std::invalid_argument("nearest_lookup: empty grid");
    NearestLookup out;
    out.flat_indices.reserve(queries.size());
    out.centers.reserve(queries.size());
    for (const auto& [qy, qx] : queries) {
        const std::int64_t r = nearest_axis_index(qy, grid.h);
        const std::int64_t c = nearest_axis_index(qx, grid.w);
        out.flat_indices.push_back(r * grid.w + c);
        out.centers.emplace_back(grid.y(static_cast<std::uint32_t>(r)),
                                 grid.x(static_cast<std::uint32_t>(c)));
    }
    return out;
}

std::pair<Tensor, std::vector<std::pair<double, double>>> nearest_interp(
    const Tensor& h, const CoordGrid& grid,
    const std::vector<std::pair<double, double>>& queries) {
    if (h.ndim() != 3 || h.dim(1) != grid.h || h.dim(2) != grid.w)
        throw std::invalid_argument("nearest_interp: feature grid does not match coordinates");
    const auto lookup = nearest_lookup(grid, queries);
    Tensor table = transpose2(reshape(h, {h.dim(0), h.dim(1) * h.dim(2)})); // (HW,C)
    return {index_rows(table, lookup.flat_indices), lookup.centers};
}

InrHead InrHead::make(ParamRegistry& reg, const std::string& name, int feat_channels,
                      int out_channels, Prng& rng) {
    InrHead head;
    head.feat_channels = feat_channels;
    head.out_channels = out_channels;
    const int in_dim = feat_channels + 2;
    head.l1 = Linear::make(reg, name + ".l1", in_dim, 2 * in_dim, rng);
    head.l2 = Linear::make(reg, name + ".l2", 2 * in_dim, out_channels, rng);
    return head;
}

Tensor inr_upsample(const Tensor& h_next, const CoordGrid& coarse, const CoordGrid& fine,
                    const InrHead& head) {
    if (h_next.ndim() != 3 || h_next.dim(1) != coarse.h || h_next.dim(2) != coarse.w)
        throw std::invalid_argument("inr_upsample: coarse features do not match their grid");
    if (fine.h <= coarse.h || fine.w <= coarse.w)
        throw std::invalid_argument("inr_upsample: level ordering inverted, fine grid must be finer");
    if (h_next.dim(0) != head.feat_channels)
        throw std::invalid_argument("inr_upsample: head feature width mismatch");

    std::vector<std::pair<double, double>> queries;
    queries.reserve(std::size_t(fine.h) * fine.w);
    for (std::uint32_t r = 0; r < fine.h; ++r)
        for (std::uint32_t c = 0; c < fine.w; ++c) queries.emplace_back(fine.y(r), fine.x(c));

    auto [feats, centers] = nearest_interp(h_next, coarse, queries); // (Q,C)
    std::vector<double> offsets(queries.size() * 2);
    for (std::size_t i = 0; i < queries.size(); ++i) {
        offsets[2 * i] = queries[i].first - centers[i].first;
        offsets[2 * i + 1] = queries[i].second - centers[i].second;
    }
    Tensor off =
        Tensor::from(std::move(offsets), {static_cast<std::int64_t>(queries.size()), 2});
    Tensor out = head.l2(relu(head.l1(concat(feats, off, 1)))); // (Q,C_out)
    return reshape(transpose2(out), {head.out_channels, fine.h, fine.w});
}

} // namespace iidm
