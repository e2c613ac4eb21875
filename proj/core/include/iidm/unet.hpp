#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "iidm/fusion.hpp"
#include "iidm/inr.hpp"
#include "iidm/nn.hpp"
#include "iidm/tensor.hpp"

namespace iidm {

/// Conditional feature pyramid: each level is a stride-2 conv of the previous
/// (level 0 is f0 itself); spatial extents halve per level.
std::vector<Tensor> cond_features(const Tensor& f0, std::span<const Conv2d> downs);

struct DenoiseNetConfig {
    int cond_channels = 4;          // channels of f0
    std::array<int, 3> widths{16, 32, 64};
    int timesteps = 50;             // size of the step-embedding table
    int temb_dim = 32;
    bool attention = true;          // cross-attention fusion vs concat + 1x1

    void validate() const;
};

/// Noise-prediction U-Net with three levels, a learned timestep embedding,
/// conditional-feature fusion on the decoder path and INR upsampling between
/// decoder levels. Input and output spatial extents are equal (scale factor
/// fixed to 1).
struct DenoiseNet {
    DenoiseNetConfig cfg;
    ParamRegistry params;

    Conv2d in_conv, enc0, down01, enc1, down12, mid1, mid2, dec1, dec0, out_conv;
    Conv2d pcond1, pcond2;
    Tensor temb_table;
    Linear temb_l0, temb_l1, temb_l2;
    FusionBlock fuse2, fuse1;
    ConcatFuse alt2, alt1;
    InrHead inr2, inr1;

    static DenoiseNet make(const DenoiseNetConfig& cfg, std::uint64_t seed);

    /// {f0, f1, f2} with f1, f2 produced by the two pyramid convs.
    std::vector<Tensor> cond_pyramid(const Tensor& f0) const;

    /// Predicted noise for y_t (1,H,W) with H, W divisible by 4; t in 1..T.
    Tensor predict_noise(const Tensor& y_t, const std::vector<Tensor>& pyramid, int t) const;

    void freeze();
};

} // namespace iidm
