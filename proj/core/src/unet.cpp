#include "iidm/unet.hpp"

#include <stdexcept>

namespace iidm {

std::vector<Tensor> cond_features(const Tensor& f0, std::span<const Conv2d> downs) {
    if (f0.ndim() != 3) throw std::invalid_argument("cond_features: f0 must be (C,H,W)");
    std::vector<Tensor> pyramid{f0};
    for (const auto& conv : downs) {
        // Stride-2 conv with zero pad 1 yields ceil(n/2) for any extent, so
        // odd inputs follow the pad-then-crop policy with no explicit crop.
        pyramid.push_back(conv(pyramid.back()));
    }
    return pyramid;
}

void DenoiseNetConfig::validate() const {
    if (cond_channels <= 0) throw std::invalid_argument("DenoiseNet: cond_channels must be > 0");
    for (int w : widths)
        if (w <= 0) throw std::invalid_argument("DenoiseNet: widths must be > 0");
    if (timesteps < 2) throw std::invalid_argument("DenoiseNet: timesteps must be >= 2");
    if (temb_dim <= 0) throw std::invalid_argument("DenoiseNet: temb_dim must be > 0");
}

DenoiseNet DenoiseNet::make(const DenoiseNetConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Prng rng(seed, "init.denoise_net");
    DenoiseNet n;
    n.cfg = cfg;
    auto& p = n.params;
    const int w0 = cfg.widths[0], w1 = cfg.widths[1], w2 = cfg.widths[2];

    n.in_conv = Conv2d::make(p, "in_conv", 1 + cfg.cond_channels, w0, 3, 1, rng);
    n.enc0 = Conv2d::make(p, "enc0", w0, w0, 3, 1, rng);
    n.down01 = Conv2d::make(p, "down01", w0, w1, 3, 2, rng);
    n.enc1 = Conv2d::make(p, "enc1", w1, w1, 3, 1, rng);
    n.down12 = Conv2d::make(p, "down12", w1, w2, 3, 2, rng);
    n.mid1 = Conv2d::make(p, "mid1", w2, w2, 3, 1, rng);
    n.mid2 = Conv2d::make(p, "mid2", w2, w2, 3, 1, rng);
    n.dec1 = Conv2d::make(p, "dec1", w2 + w1, w1, 3, 1, rng);
    n.dec0 = Conv2d::make(p, "dec0", w1 + w0, w0, 3, 1, rng);
    n.out_conv = Conv2d::make(p, "out_conv", w0, 1, 1, 1, rng);

    n.pcond1 = Conv2d::make(p, "pcond1", cfg.cond_channels, w1, 3, 2, rng);
    n.pcond2 = Conv2d::make(p, "pcond2", w1, w2, 3, 2, rng);

    n.temb_table = p.add("temb.table",
                         Tensor::randn({cfg.timesteps, cfg.temb_dim}, rng, 0.02, true));
    n.temb_l0 = Linear::make(p, "temb.l0", cfg.temb_dim, w0, rng);
    n.temb_l1 = Linear::make(p, "temb.l1", cfg.temb_dim, w1, rng);
    n.temb_l2 = Linear::make(p, "temb.l2", cfg.temb_dim, w2, rng);

    if (cfg.attention) {
        n.fuse2 = FusionBlock::make(p, "fuse2", w2, w2, rng);
        n.fuse1 = FusionBlock::make(p, "fuse1", w1, w1, rng);
    } else {
        n.alt2 = ConcatFuse::make(p, "fuse2", w2, w2, rng);
        n.alt1 = ConcatFuse::make(p, "fuse1", w1, w1, rng);
    }
    n.inr2 = InrHead::make(p, "inr2", w2, w2, rng);
    n.inr1 = InrHead::make(p, "inr1", w1, w1, rng);
    return n;
}

std::vector<Tensor> DenoiseNet::cond_pyramid(const Tensor& f0) const {
    const Conv2d downs[2] = {pcond1, pcond2};
    return cond_features(f0, downs);
}

Tensor DenoiseNet::predict_noise(const Tensor& y_t, const std::vector<Tensor>& pyramid,
                                 int t) const {
    if (y_t.ndim() != 3 || y_t.dim(0) != 1)
        throw std::invalid_argument("predict_noise: y_t must be (1,H,W)");
    const auto h = y_t.dim(1), w = y_t.dim(2);
    if (h % 4 != 0 || w % 4 != 0)
        throw std::invalid_argument("predict_noise: extents must be divisible by 4");
    if (t < 1 || t > cfg.timesteps)
        throw std::invalid_argument("predict_noise: t out of 1..T");
    if (pyramid.size() != 3 || pyramid[0].dim(1) != h || pyramid[0].dim(2) != w)
        throw std::invalid_argument("predict_noise: conditional pyramid does not match y_t");

    Tensor temb = index_rows(temb_table, {t - 1}); // (1,temb_dim)
    const Tensor t0 = reshape(temb_l0(temb), {cfg.widths[0]});
    const Tensor t1 = reshape(temb_l1(temb), {cfg.widths[1]});
    const Tensor t2 = reshape(temb_l2(temb), {cfg.widths[2]});

    Tensor x = concat(y_t, pyramid[0], 0);
    Tensor s0 = relu(enc0(relu(add_chan_bias(in_conv(x), t0))));       // (w0,H,W)
    Tensor s1 = relu(enc1(relu(add_chan_bias(down01(s0), t1))));       // (w1,H/2)
    Tensor h2 = relu(add_chan_bias(down12(s1), t2));                   // (w2,H/4)
    h2 = relu(mid2(relu(mid1(h2))));

    Tensor u2 = cfg.attention ? attention_fuse(h2, pyramid[2], fuse2) : alt2(h2, pyramid[2]);
    const CoordGrid g2{static_cast<std::uint32_t>(h / 4), static_cast<std::uint32_t>(w / 4)};
    const CoordGrid g1{static_cast<std::uint32_t>(h / 2), static_cast<std::uint32_t>(w / 2)};
    const CoordGrid g0{static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(w)};
    Tensor up1 = inr_upsample(u2, g2, g1, inr2);                       // (w2,H/2)
    Tensor d1 = relu(dec1(concat(up1, s1, 0)));                        // (w1,H/2)

    Tensor u1 = cfg.attention ? attention_fuse(d1, pyramid[1], fuse1) : alt1(d1, pyramid[1]);
    Tensor up0 = inr_upsample(u1, g1, g0, inr1);                       // (w1,H)
    Tensor d0 = relu(dec0(concat(up0, s0, 0)));                        // (w0,H)
    return out_conv(d0);
}

void DenoiseNet::freeze() {
    for (const auto& [name, t] : params.entries()) {
        Tensor handle = t;
        handle.set_requires_grad(false);
    }
}

} // namespace iidm
