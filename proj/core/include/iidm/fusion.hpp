#pragma once

#include "iidm/nn.hpp"
#include "iidm/tensor.hpp"

namespace iidm {

/// Single-head cross-attention (queries from the U-Net feature u, keys and
/// values from the conditional feature f) followed by a two-layer MLP, both
/// with residual adds. Model dim equals u's channel count; MLP hidden is 2x.
struct FusionBlock {
    Linear wq, wk, wv;
    Linear mlp1, mlp2;
    int u_channels = 0;
    int f_channels = 0;

    static FusionBlock make(ParamRegistry& reg, const std::string& name, int u_channels,
                            int f_channels, Prng& rng);
};

/// softmax(QK^T/sqrt(d))V with residual, then the MLP with residual. u and f
/// are (C,H,W) and spatially aligned; output matches u's shape.
Tensor attention_fuse(const Tensor& u, const Tensor& f, const FusionBlock& block);

/// Ablation stand-in for the fusion block: channel concat + 1x1 conv.
struct ConcatFuse {
    Conv2d proj;

    static ConcatFuse make(ParamRegistry& reg, const std::string& name, int u_channels,
                           int f_channels, Prng& rng);
    Tensor operator()(const Tensor& u, const Tensor& f) const;
};

} // namespace iidm
