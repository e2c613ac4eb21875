#include "iidm/fusion.hpp"

#include <cmath>
#include <stdexcept>

namespace iidm {

FusionBlock FusionBlock::make(ParamRegistry& reg, const std::string& name, int u_channels,
                              int f_channels, Prng& rng) {
    FusionBlock b;
    b.u_channels = u_channels;
    b.f_channels = f_channels;
    b.wq = Linear::make(reg, name + ".wq", u_channels, u_channels, rng);
    b.wk = Linear::make(reg, name + ".wk", f_channels, u_channels, rng);
    b.wv = Linear::make(reg, name + ".wv", f_channels, u_channels, rng);
    b.mlp1 = Linear::make(reg, name + ".mlp1", u_channels, 2 * u_channels, rng);
    b.mlp2 = Linear::make(reg, name + ".mlp2", 2 * u_channels, u_channels, rng);
    return b;
}

Tensor attention_fuse(const Tensor& u, const Tensor& f, const FusionBlock& block) {
    if (u.ndim() != 3 || f.ndim() != 3 || u.dim(1) != f.dim(1) || u.dim(2) != f.dim(2))
        throw std::invalid_argument("attention_fuse: u and f must be spatially aligned (C,H,W)");
    if (u.dim(0) != block.u_channels || f.dim(0) != block.f_channels)
        throw std::invalid_argument("attention_fuse: channel counts do not match the block");
    const auto cu = u.dim(0), h = u.dim(1), w = u.dim(2);
    const auto hw = h * w;

    Tensor tokens_u = transpose2(reshape(u, {cu, hw}));            // (HW,Cu)
    Tensor tokens_f = transpose2(reshape(f, {f.dim(0), hw}));      // (HW,Cf)
    Tensor q = block.wq(tokens_u);
    Tensor k = block.wk(tokens_f);
    Tensor v = block.wv(tokens_f);
    Tensor attn = softmax_rows(scale(matmul(q, transpose2(k)),
                                     1.0 / std::sqrt(static_cast<double>(cu))));
    Tensor fused = add(tokens_u, matmul(attn, v));
    Tensor mlp = block.mlp2(relu(block.mlp1(fused)));
    Tensor out = add(fused, mlp);
    return reshape(transpose2(out), {cu, h, w});
}

ConcatFuse ConcatFuse::make(ParamRegistry& reg, const std::string& name, int u_channels,
                            int f_channels, Prng& rng) {
    ConcatFuse c;
    c.proj = Conv2d::make(reg, name + ".proj", u_channels + f_channels, u_channels, 1, 1, rng);
    return c;
}

Tensor ConcatFuse::operator()(const Tensor& u, const Tensor& f) const {
    return proj(concat(u, f, 0));
}

} // namespace iidm
