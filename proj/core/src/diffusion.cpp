#include "iidm/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace iidm {

namespace {

Tensor constant_copy(const Tensor& t) {
    return Tensor::from(std::vector<double>(t.data().begin(), t.data().end()), t.shape());
}

void check_noise_shape(const Tensor& x, const Tensor& noise, const char* what) {
    if (x.shape() != noise.shape())
        throw std::invalid_argument(std::string(what) + ": noise shape must match the signal");
}

} // namespace

Tensor forward_step(const Tensor& x_prev, int t, const VarianceSchedule& sched,
                    const Tensor& noise) {
    check_noise_shape(x_prev, noise, "forward_step");
    const double beta = sched.beta(t); // validates t
    const double keep = std::sqrt(1.0 - beta);
    const double add = std::sqrt(beta);
    std::vector<double> out(x_prev.data().size());
    auto xd = x_prev.data();
    auto nd = noise.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = keep * xd[i] + add * nd[i];
    return Tensor::from(std::move(out), x_prev.shape());
}

Tensor forward_jump(const Tensor& x0, int t, const VarianceSchedule& sched, const Tensor& noise) {
    check_noise_shape(x0, noise, "forward_jump");
    const double abar = sched.alpha_bar(t);
    if (t < 1) throw std::invalid_argument("forward_jump: t must be in 1..T");
    const double keep = std::sqrt(abar);
    const double add = std::sqrt(1.0 - abar);
    std::vector<double> out(x0.data().size());
    auto xd = x0.data();
    auto nd = noise.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = keep * xd[i] + add * nd[i];
    return Tensor::from(std::move(out), x0.shape());
}

DiffusionState denoise_step(const DiffusionState& state, const NoisePredictor& predict,
                            const VarianceSchedule& sched, Prng& rng) {
    if (state.t < 1)
        throw std::invalid_argument("denoise_step: t must be >= 1 (chain already finished)");
    const int t = state.t;
    const double beta = sched.beta(t);
    const double abar = sched.alpha_bar(t);
    const Tensor eps_hat = predict(state.y_t, state.cond, t);
    if (eps_hat.shape() != state.y_t.shape())
        throw std::invalid_argument("denoise_step: predictor output shape mismatch");

    const double eps_coef = beta / std::sqrt(1.0 - abar);
    const double inv_sqrt_alpha = 1.0 / std::sqrt(1.0 - beta);
    const double sigma = t > 1 ? std::sqrt(sched.posterior_variance(t)) : 0.0;

    std::vector<double> out(state.y_t.data().size());
    auto yd = state.y_t.data();
    auto ed = eps_hat.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        double v = (yd[i] - eps_coef * ed[i]) * inv_sqrt_alpha;
        if (sigma > 0.0) v += sigma * rng.normal();
        out[i] = v;
    }
    DiffusionState next;
    next.y_t = Tensor::from(std::move(out), state.y_t.shape());
    next.t = t - 1;
    next.cond = state.cond;
    return next;
}

// --- feature extractor ---------------------------------------------------------

Tensor FeatureExtractor::features(const Tensor& imagery) const {
    if (kind == "raw") return imagery;
    if (kind == "vgg") {
        if (!teacher) throw std::logic_error("FeatureExtractor: teacher missing");
        return teacher->tap(imagery, 1);
    }
    if (kind == "kd_vgg") {
        if (!student) throw std::logic_error("FeatureExtractor: student missing");
        return student->enc_tap(imagery, 1);
    }
    throw std::logic_error("FeatureExtractor: unknown kind " + kind);
}

FeatureExtractor FeatureExtractor::raw(int image_channels) {
    FeatureExtractor e;
    e.kind = "raw";
    e.channels = image_channels;
    return e;
}

FeatureExtractor FeatureExtractor::vgg(std::shared_ptr<VggEncoder> teacher) {
    FeatureExtractor e;
    e.kind = "vgg";
    e.channels = VggEncoder::kChannels[0];
    e.teacher = std::move(teacher);
    return e;
}

FeatureExtractor FeatureExtractor::kd(std::shared_ptr<SlimCoder> student) {
    FeatureExtractor e;
    e.kind = "kd_vgg";
    e.channels = student->channels[0];
    e.student = std::move(student);
    return e;
}

void FeatureExtractor::save_into(Checkpoint& ck) const {
    ck.put_scalar("meta.extractor_kind", kind == "raw" ? 0.0 : kind == "vgg" ? 1.0 : 2.0);
    ck.put_scalar("meta.cond_channels", static_cast<double>(channels));
    if (kind == "vgg") {
        ck.put_scalar("meta.vgg_in_channels", static_cast<double>(teacher->in_channels));
        ck.put_params(teacher->params, "extractor.");
    } else if (kind == "kd_vgg") {
        ck.put_scalar("meta.kd_in_channels", static_cast<double>(student->in_channels));
        for (int i = 0; i < 4; ++i)
            ck.put_scalar("meta.kd_c" + std::to_string(i + 1),
                          static_cast<double>(student->channels[static_cast<std::size_t>(i)]));
        ck.put_params(student->params, "extractor.");
    }
}

FeatureExtractor FeatureExtractor::from_checkpoint(const Checkpoint& ck) {
    const int kind = static_cast<int>(ck.scalar("meta.extractor_kind"));
    if (kind == 0) {
        return raw(static_cast<int>(ck.scalar("meta.cond_channels")));
    }
    if (kind == 1) {
        auto teacher = std::make_shared<VggEncoder>(
            VggEncoder::make(static_cast<int>(ck.scalar("meta.vgg_in_channels")), 0));
        ck.load_params_into(teacher->params, "extractor.");
        teacher->freeze();
        return vgg(std::move(teacher));
    }
    if (kind == 2) {
        std::array<int, 4> channels{};
        for (int i = 0; i < 4; ++i)
            channels[static_cast<std::size_t>(i)] =
                static_cast<int>(ck.scalar("meta.kd_c" + std::to_string(i + 1)));
        auto student = std::make_shared<SlimCoder>(
            SlimCoder::make(static_cast<int>(ck.scalar("meta.kd_in_channels")), channels, 0));
        ck.load_params_into(student->params, "extractor.");
        for (const auto& [name, t] : student->params.entries()) {
            Tensor handle = t;
            handle.set_requires_grad(false);
        }
        return kd(std::move(student));
    }
    throw std::runtime_error("checkpoint: unknown extractor kind");
}

// --- training --------------------------------------------------------------------

void IidmTrainConfig::validate() const {
    if (steps < 1) throw std::invalid_argument("train: steps must be >= 1");
    if (lr <= 0.0) throw std::invalid_argument("train: lr must be > 0");
    if (timesteps < 2) throw std::invalid_argument("train: T must be >= 2");
    if (!(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0))
        throw std::invalid_argument("train: bad beta range");
}

TrainScene make_train_scene(const Raster& imagery, const Raster& truth_density,
                            const Raster& mask) {
    imagery.validate();
    truth_density.validate();
    if (!is_binary_mask(mask)) throw std::invalid_argument("train scene: bad mask");
    const auto h = imagery.height, w = imagery.width, c = imagery.channels;
    TrainScene s;
    std::vector<double> img(std::size_t(c) * h * w);
    for (std::uint32_t ch = 0; ch < c; ++ch)
        for (std::uint32_t y = 0; y < h; ++y)
            for (std::uint32_t x = 0; x < w; ++x)
                img[(std::size_t(ch) * h + y) * w + x] = imagery.at(y, x, ch);
    s.imagery = Tensor::from(std::move(img),
                             {static_cast<std::int64_t>(c), static_cast<std::int64_t>(h),
                              static_cast<std::int64_t>(w)});
    std::vector<double> den(truth_density.f32.begin(), truth_density.f32.end());
    s.density = Tensor::from(std::move(den),
                             {1, static_cast<std::int64_t>(h), static_cast<std::int64_t>(w)});
    s.mask = mask.u8;
    return s;
}

namespace {

Tensor masked_l1(const Tensor& a, const Tensor& b, const Tensor& weights, double weight_sum) {
    return scale(sum_all(mul(abs(sub(a, b)), weights)), 1.0 / weight_sum);
}

double grad_norm(const std::vector<Tensor>& params) {
    double s = 0.0;
    for (const auto& p : params)
        if (p.has_grad())
            for (double g : p.grad()) s += g * g;
    return std::sqrt(s);
}

} // namespace

IidmTrainResult train_iidm(const std::vector<TrainScene>& scenes, const FeatureExtractor& ext,
                           const IidmTrainConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    if (scenes.empty()) throw std::invalid_argument("train_iidm: need at least one scene");

    const auto sched = make_schedule(cfg.timesteps, cfg.beta_start, cfg.beta_end);

    // Per-run normalization of the regression target into [-1,1].
    double norm_max = 0.0;
    for (const auto& s : scenes)
        for (double v : s.density.data()) norm_max = std::max(norm_max, v);
    if (norm_max <= 0.0) norm_max = 1.0;

    std::vector<Tensor> targets;   // normalized x0
    std::vector<Tensor> features;  // f0, frozen
    std::vector<Tensor> loss_masks;
    std::vector<double> mask_sums;
    for (const auto& s : scenes) {
        std::vector<double> x0(s.density.data().size());
        for (std::size_t i = 0; i < x0.size(); ++i)
            x0[i] = 2.0 * s.density.data()[i] / norm_max - 1.0;
        targets.push_back(Tensor::from(std::move(x0), s.density.shape()));
        features.push_back(constant_copy(ext.features(s.imagery)));
        if (cfg.use_mask) {
            std::vector<double> m(s.mask.size());
            double total = 0.0;
            for (std::size_t i = 0; i < m.size(); ++i) {
                m[i] = s.mask[i] == 255 ? 1.0 : 0.0;
                total += m[i];
            }
            if (total == 0.0)
                throw std::invalid_argument("train_iidm: mask excludes every pixel of a scene");
            loss_masks.push_back(Tensor::from(std::move(m), s.density.shape()));
            mask_sums.push_back(total);
        }
    }

    DenoiseNetConfig ncfg;
    ncfg.cond_channels = ext.channels;
    ncfg.widths = cfg.widths;
    ncfg.timesteps = cfg.timesteps;
    ncfg.temb_dim = cfg.temb_dim;
    ncfg.attention = cfg.attention;
    DenoiseNet net = DenoiseNet::make(ncfg, derive_seed(seed, 3));
    std::vector<Tensor> params = net.params.tensors();

    Prng pick(seed, "train.pick");
    Prng trng(seed, "train.t");
    Prng noise_rng(seed, "train.noise");

    IidmTrainResult result;
    double last_grad_norm = 0.0;
    for (int step = 1; step <= cfg.steps; ++step) {
        const std::size_t k = pick.below(scenes.size());
        const int t = 1 + static_cast<int>(trng.below(static_cast<std::uint64_t>(cfg.timesteps)));
        Tensor eps = Tensor::randn(targets[k].shape(), noise_rng);
        Tensor x_t = forward_jump(targets[k], t, sched, eps);
        Tensor eps_hat = net.predict_noise(x_t, net.cond_pyramid(features[k]), t);
        Tensor loss = cfg.use_mask ? masked_l1(eps_hat, eps, loss_masks[k], mask_sums[k])
                                   : l1_loss(eps_hat, eps);
        const double lv = loss.item();
        if (!std::isfinite(lv)) {
            char buf[160];
            std::snprintf(buf, sizeof buf,
                          "train_iidm: non-finite loss at step %d (lr=%g, grad_norm=%g)", step,
                          cfg.lr, last_grad_norm);
            throw std::runtime_error(buf);
        }
        result.loss_curve.emplace_back(step, lv);
        backward(loss);
        last_grad_norm = grad_norm(params);
        sgd_step(params, cfg.lr);
    }

    Checkpoint ck;
    ck.put_params(net.params, "net.");
    ext.save_into(ck);
    ck.put_scalar("meta.T", cfg.timesteps);
    ck.put_scalar("meta.beta_start", cfg.beta_start);
    ck.put_scalar("meta.beta_end", cfg.beta_end);
    ck.put_scalar("meta.w0", cfg.widths[0]);
    ck.put_scalar("meta.w1", cfg.widths[1]);
    ck.put_scalar("meta.w2", cfg.widths[2]);
    ck.put_scalar("meta.temb_dim", cfg.temb_dim);
    ck.put_scalar("meta.attention", cfg.attention ? 1.0 : 0.0);
    ck.put_scalar("meta.use_mask", cfg.use_mask ? 1.0 : 0.0);
    ck.put_scalar("meta.norm_max", norm_max);
    result.checkpoint = std::move(ck);
    return result;
}

void write_loss_csv(const std::vector<std::pair<int, double>>& curve, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("loss csv: cannot open " + path);
    os << "step,loss\n";
    char buf[64];
    for (const auto& [step, loss] : curve) {
        std::snprintf(buf, sizeof buf, "%d,%.17g", step, loss);
        os << buf << '\n';
    }
}

Raster estimate(const Raster& imagery, const Raster* mask, const Checkpoint& ckpt,
                std::uint64_t seed) {
    imagery.validate();
    if (mask && !is_binary_mask(*mask))
        throw std::invalid_argument("estimate: mask must be a {0,255} u8 raster");
    if (mask && (mask->height != imagery.height || mask->width != imagery.width))
        throw std::invalid_argument("estimate: mask extents disagree with imagery");

    FeatureExtractor ext = FeatureExtractor::from_checkpoint(ckpt);

    DenoiseNetConfig ncfg;
    ncfg.cond_channels = static_cast<int>(ckpt.scalar("meta.cond_channels"));
    ncfg.widths = {static_cast<int>(ckpt.scalar("meta.w0")),
                   static_cast<int>(ckpt.scalar("meta.w1")),
                   static_cast<int>(ckpt.scalar("meta.w2"))};
    ncfg.timesteps = static_cast<int>(ckpt.scalar("meta.T"));
    ncfg.temb_dim = static_cast<int>(ckpt.scalar("meta.temb_dim"));
    ncfg.attention = ckpt.scalar("meta.attention") != 0.0;
    DenoiseNet net = DenoiseNet::make(ncfg, 0);
    ckpt.load_params_into(net.params, "net.");
    net.freeze();

    const auto sched =
        make_schedule(ncfg.timesteps, ckpt.scalar("meta.beta_start"), ckpt.scalar("meta.beta_end"));
    const double norm_max = ckpt.scalar("meta.norm_max");

    const auto h = imagery.height, w = imagery.width, c = imagery.channels;
    std::vector<double> img(std::size_t(c) * h * w);
    for (std::uint32_t ch = 0; ch < c; ++ch)
        for (std::uint32_t y = 0; y < h; ++y)
            for (std::uint32_t x = 0; x < w; ++x)
                img[(std::size_t(ch) * h + y) * w + x] = imagery.at(y, x, ch);
    Tensor img_t = Tensor::from(std::move(img),
                                {static_cast<std::int64_t>(c), static_cast<std::int64_t>(h),
                                 static_cast<std::int64_t>(w)});
    if (ext.channels != static_cast<int>(c) && ext.kind == "raw")
        throw std::invalid_argument("estimate: imagery channels disagree with checkpoint");

    std::vector<Tensor> pyramid = net.cond_pyramid(ext.features(img_t));
    for (auto& level : pyramid) level = constant_copy(level);

    Prng init_rng(seed, "estimate.init");
    Prng step_rng(seed, "estimate.noise");
    DiffusionState state;
    state.y_t = Tensor::randn({1, static_cast<std::int64_t>(h), static_cast<std::int64_t>(w)},
                              init_rng);
    state.t = sched.steps;
    state.cond = pyramid;
    const NoisePredictor predictor = [&net](const Tensor& y, const std::vector<Tensor>& cond,
                                            int t) { return net.predict_noise(y, cond, t); };
    while (state.t >= 1) state = denoise_step(state, predictor, sched, step_rng);

    Raster out = Raster::make_f32(h, w, 1);
    auto yd = state.y_t.data();
    for (std::size_t i = 0; i < out.f32.size(); ++i) {
        double v = (yd[i] + 1.0) * 0.5 * norm_max;
        if (v < 0.0) v = 0.0; // densities are nonnegative
        if (mask && mask->u8[i] != 255) v = 0.0;
        out.f32[i] = static_cast<float>(v);
    }
    return out;
}

} // namespace iidm
