#include "iidm/distill.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "iidm/eigh.hpp"

namespace iidm {

namespace {

Tensor constant_copy(const Tensor& t) {
    return Tensor::from(std::vector<double>(t.data().begin(), t.data().end()), t.shape());
}

Tensor broadcast_cols(const Tensor& col, std::int64_t cols) {
    // (C,1) -> (C,cols) via an all-ones row.
    return matmul(col, Tensor::full({1, cols}, 1.0));
}

} // namespace

Tensor as_feature_matrix(const Tensor& chw) {
    if (chw.ndim() != 3) throw std::invalid_argument("as_feature_matrix: needs (C,H,W)");
    return reshape(chw, {chw.dim(0), chw.dim(1) * chw.dim(2)});
}

Tensor center_features(const Tensor& f) {
    if (f.ndim() != 2) throw std::invalid_argument("center_features: needs a 2-D matrix");
    const auto hw = f.dim(1);
    Tensor row_mean = scale(matmul(f, Tensor::full({hw, 1}, 1.0)), 1.0 / static_cast<double>(hw));
    return sub(f, broadcast_cols(row_mean, hw));
}

Tensor decenter_with(const Tensor& f, const std::vector<double>& mean) {
    if (f.ndim() != 2 || f.dim(0) != static_cast<std::int64_t>(mean.size()))
        throw std::invalid_argument("decenter_with: mean length must match channel count");
    Tensor mean_col = Tensor::from(mean, {f.dim(0), 1});
    return sub(f, broadcast_cols(mean_col, f.dim(1)));
}

Tensor reconstruction_loss(const Tensor& w, const Tensor& fbar) {
    if (w.ndim() != 2 || fbar.ndim() != 2 || w.dim(1) != fbar.dim(0))
        throw std::invalid_argument("reconstruction_loss: needs (c_e,C) and (C,HW)");
    Tensor projected = matmul(transpose2(w), matmul(w, fbar));
    return sum_all(square(sub(projected, fbar)));
}

std::vector<double> covariance_spectrum(const Tensor& fbar) {
    if (fbar.ndim() != 2) throw std::invalid_argument("covariance_spectrum: needs (C,HW)");
    const auto c = fbar.dim(0), hw = fbar.dim(1);
    auto d = fbar.data();
    const int n = static_cast<int>(std::min(c, hw));
    std::vector<double> m(static_cast<std::size_t>(n) * n, 0.0);
    if (c <= hw) {
        // cov = F F^T / HW
        for (std::int64_t i = 0; i < c; ++i)
            for (std::int64_t j = i; j < c; ++j) {
                double s = 0.0;
                for (std::int64_t k = 0; k < hw; ++k)
                    s += d[static_cast<std::size_t>(i * hw + k)] *
                         d[static_cast<std::size_t>(j * hw + k)];
                s /= static_cast<double>(hw);
                m[static_cast<std::size_t>(i) * n + static_cast<std::size_t>(j)] = s;
                m[static_cast<std::size_t>(j) * n + static_cast<std::size_t>(i)] = s;
            }
    } else {
        // Gram route: F^T F / HW shares the nonzero spectrum with the covariance.
        for (std::int64_t i = 0; i < hw; ++i)
            for (std::int64_t j = i; j < hw; ++j) {
                double s = 0.0;
                for (std::int64_t k = 0; k < c; ++k)
                    s += d[static_cast<std::size_t>(k * hw + i)] *
                         d[static_cast<std::size_t>(k * hw + j)];
                s /= static_cast<double>(hw);
                m[static_cast<std::size_t>(i) * n + static_cast<std::size_t>(j)] = s;
                m[static_cast<std::size_t>(j) * n + static_cast<std::size_t>(i)] = s;
            }
    }
    auto spec = eigh_sym(m, n);
    std::vector<double> out(static_cast<std::size_t>(c), 0.0);
    for (int i = 0; i < n; ++i)
        out[static_cast<std::size_t>(i)] = std::max(0.0, spec.eigenvalues[static_cast<std::size_t>(i)]);
    return out;
}

SpectrumStats collect_spectra(const VggEncoder& teacher, const std::vector<Tensor>& images) {
    if (images.empty()) throw std::invalid_argument("collect_spectra: empty dataset");
    SpectrumStats stats;
    for (const auto& img : images) {
        const auto taps = teacher.taps(img, 4);
        for (int level = 0; level < 4; ++level) {
            Tensor fbar = center_features(as_feature_matrix(taps[static_cast<std::size_t>(level)]));
            stats.per_layer[static_cast<std::size_t>(level)].push_back(covariance_spectrum(fbar));
        }
    }
    return stats;
}

double mcev(const std::vector<std::vector<double>>& layer_spectra, int c_prime) {
    if (layer_spectra.empty()) throw std::invalid_argument("mcev: empty spectra");
    const auto c = static_cast<int>(layer_spectra.front().size());
    if (c_prime < 1 || c_prime > c) throw std::invalid_argument("mcev: c_prime out of 1..C");
    double acc = 0.0;
    for (const auto& spec : layer_spectra) {
        if (static_cast<int>(spec.size()) != c)
            throw std::invalid_argument("mcev: inconsistent spectrum lengths");
        double total = 0.0, head = 0.0;
        for (int i = 0; i < c; ++i) {
            total += spec[static_cast<std::size_t>(i)];
            if (i < c_prime) head += spec[static_cast<std::size_t>(i)];
        }
        // An all-zero spectrum counts as fully captured.
        acc += total == 0.0 ? 1.0 : head / total;
    }
    return acc / static_cast<double>(layer_spectra.size());
}

std::array<int, 4> select_channel_lengths(const SpectrumStats& spectra, double target) {
    if (!(target > 0.0 && target <= 1.0))
        throw std::invalid_argument("select_channel_lengths: target must be in (0,1]");
    std::array<int, 4> out{};
    for (int level = 0; level < 4; ++level) {
        const auto& layer = spectra.per_layer[static_cast<std::size_t>(level)];
        if (layer.empty()) throw std::invalid_argument("select_channel_lengths: empty spectra");
        const int c_full = static_cast<int>(layer.front().size());
        int chosen = c_full;
        for (int c = 1; c <= c_full; ++c)
            if (mcev(layer, c) >= target) {
                chosen = c;
                break;
            }
        out[static_cast<std::size_t>(level)] = chosen;
    }
    // The relu1_1 fix: double the first channel length, capped at the teacher width.
    const int c1_full = static_cast<int>(spectra.per_layer[0].front().size());
    out[0] = std::min(out[0] * 2, c1_full);
    return out;
}

Tensor derive_eigenbasis(const std::vector<Tensor>& fbars, int c_e, int batch_size, int epochs,
                         double lr, std::uint64_t seed, EigenbasisTrainInfo* info) {
    if (fbars.empty()) throw std::invalid_argument("derive_eigenbasis: empty dataset");
    const auto c = fbars.front().dim(0);
    if (c_e < 1 || c_e > c)
        throw std::invalid_argument("derive_eigenbasis: c_e must be in 1..C");
    if (batch_size < 1 || epochs < 1 || lr <= 0.0)
        throw std::invalid_argument("derive_eigenbasis: bad hyperparameters");

    Prng init(seed, "basis.init");
    Tensor w = Tensor::randn({c_e, c}, init, 1.0 / std::sqrt(static_cast<double>(c)), true);
    std::vector<Tensor> params{w};

    Prng shuffle(seed, "basis.shuffle");
    std::vector<std::size_t> order(fbars.size());
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle.below(i)]);
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(batch_size)) {
            const std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(batch_size));
            Tensor loss;
            for (std::size_t i = start; i < stop; ++i) {
                Tensor term = reconstruction_loss(w, fbars[order[i]]);
                loss = loss.defined() ? add(loss, term) : term;
            }
            loss = scale(loss, 1.0 / static_cast<double>(stop - start));
            backward(loss);
            sgd_step(params, lr);
        }
    }

    if (info) {
        double total = 0.0;
        for (const auto& f : fbars) total += reconstruction_loss(w, f).item();
        info->final_loss = total / static_cast<double>(fbars.size());
        // ||W W^T - I||_inf
        auto wd = w.data();
        double worst = 0.0;
        for (std::int64_t a = 0; a < c_e; ++a)
            for (std::int64_t b = 0; b < c_e; ++b) {
                double dot = 0.0;
                for (std::int64_t k = 0; k < c; ++k)
                    dot += wd[static_cast<std::size_t>(a * c + k)] *
                           wd[static_cast<std::size_t>(b * c + k)];
                worst = std::max(worst, std::fabs(dot - (a == b ? 1.0 : 0.0)));
            }
        info->orthonormality_inf = worst;
    }
    return w;
}

// --- Distiller -----------------------------------------------------------------

Distiller::Distiller(VggEncoder teacher, const std::vector<Tensor>& images,
                     const DistillConfig& cfg, std::uint64_t seed)
    : teacher_(std::move(teacher)), cfg_(cfg), seed_(seed) {
    if (images.empty()) throw std::invalid_argument("Distiller: empty dataset");
    for (const auto& img : images) {
        if (img.ndim() != 3 || img.dim(0) != teacher_.in_channels)
            throw std::invalid_argument("Distiller: images must be (C,H,W) matching the teacher");
        if (img.dim(1) % 8 != 0 || img.dim(2) % 8 != 0)
            throw std::invalid_argument("Distiller: image extents must be multiples of 8");
        images_.push_back(constant_copy(img));
    }
    teacher_.freeze();

    if (cfg_.auto_select_channels) {
        const auto spectra = collect_spectra(teacher_, images_);
        const auto chosen = select_channel_lengths(spectra, cfg_.mcev_target);
        for (int i = 0; i < 4; ++i)
            cfg_.channels[static_cast<std::size_t>(i)] =
                std::min(chosen[static_cast<std::size_t>(i)],
                         VggEncoder::kChannels[static_cast<std::size_t>(i)] - 1);
    }
    student_ = SlimCoder::make(teacher_.in_channels, cfg_.channels, derive_seed(seed_, 1));
    for (auto& level : teacher_taps_) level.assign(images_.size(), Tensor());
    for (auto& level : teacher_fbars_) level.assign(images_.size(), Tensor());
    for (auto& level : frozen_inputs_) level.assign(images_.size(), Tensor());
}

Tensor Distiller::teacher_feature(std::size_t image, int level) const {
    auto& slot = teacher_taps_[static_cast<std::size_t>(level - 1)][image];
    if (!slot.defined()) {
        const auto taps = teacher_.taps(images_[image], 4);
        for (int l = 0; l < 4; ++l)
            teacher_taps_[static_cast<std::size_t>(l)][image] =
                constant_copy(taps[static_cast<std::size_t>(l)]);
    }
    return slot;
}

Tensor Distiller::teacher_decentered(std::size_t image, int level) const {
    auto& slot = teacher_fbars_[static_cast<std::size_t>(level - 1)][image];
    if (!slot.defined()) {
        Tensor fbar = decenter_with(as_feature_matrix(teacher_feature(image, level)),
                                    basis_[static_cast<std::size_t>(level - 1)].mean);
        slot = constant_copy(fbar);
    }
    return slot;
}

Tensor Distiller::student_input(std::size_t image, int level) const {
    if (level == 1) return images_[image];
    auto& slot = frozen_inputs_[static_cast<std::size_t>(level - 1)][image];
    if (!slot.defined())
        slot = constant_copy(student_.enc_tap(images_[image], level - 1));
    return slot;
}

void Distiller::check_sequencing(int level) const {
    if (level < 1 || level > 4) throw std::invalid_argument("Distiller: level out of 1..4");
    if (!bases_ready_)
        throw std::logic_error("Distiller: eigenbases must be derived before block training");
    if (trained_until_ < level - 1)
        throw std::logic_error("Distiller: pairs must be trained in order 1..4 (pair " +
                               std::to_string(level - 1) + " still untrained)");
}

std::vector<Tensor> Distiller::pair_params(int level) const {
    const std::string enc = "enc" + std::to_string(level);
    const std::string dec = "dec" + std::to_string(level);
    std::vector<Tensor> out;
    for (const auto& [name, t] : student_.params.entries())
        if (name.rfind(enc, 0) == 0 || name.rfind(dec, 0) == 0) out.push_back(t);
    return out;
}

void Distiller::derive_bases() {
    for (auto& level : teacher_fbars_)
        for (auto& slot : level) slot = Tensor(); // decentered caches track the means
    for (int level = 1; level <= 4; ++level) {
        // Frozen global decentering means over the training set.
        const auto c = static_cast<std::size_t>(
            VggEncoder::kChannels[static_cast<std::size_t>(level - 1)]);
        std::vector<double> mean(c, 0.0);
        double count = 0.0;
        for (std::size_t k = 0; k < images_.size(); ++k) {
            const Tensor tap = teacher_feature(k, level);
            const auto hw = tap.dim(1) * tap.dim(2);
            auto d = tap.data();
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::int64_t i = 0; i < hw; ++i)
                    mean[ch] += d[ch * static_cast<std::size_t>(hw) + static_cast<std::size_t>(i)];
            count += static_cast<double>(hw);
        }
        for (auto& v : mean) v /= count;
        basis_[static_cast<std::size_t>(level - 1)].mean = std::move(mean);

        std::vector<Tensor> fbars;
        for (std::size_t k = 0; k < images_.size(); ++k)
            fbars.push_back(teacher_decentered(k, level));
        Tensor w = derive_eigenbasis(
            fbars, cfg_.channels[static_cast<std::size_t>(level - 1)], cfg_.batch_size,
            cfg_.epochs, cfg_.basis_lr, derive_seed(seed_, 100 + static_cast<std::uint64_t>(level)));
        w.set_requires_grad(false);
        basis_[static_cast<std::size_t>(level - 1)].w = w;
    }
    bases_ready_ = true;
}

Tensor Distiller::encoder_distill_loss(std::size_t image, int level) const {
    check_sequencing(level);
    const Tensor x = student_input(image, level);
    Tensor fe = level == 1 ? relu(student_.enc1(x))
                           : (level == 2   ? relu(student_.enc2(avgpool2(x)))
                              : level == 3 ? relu(student_.enc3(avgpool2(x)))
                                           : relu(student_.enc4(avgpool2(x))));
    Tensor fbar_e = center_features(as_feature_matrix(fe));
    const Tensor& w = basis_[static_cast<std::size_t>(level - 1)].w;
    const Tensor fbar_t = teacher_decentered(image, level);
    if (cfg_.encoder_loss_form == EncoderLossForm::Printed)
        return sum_all(square(sub(matmul(transpose2(w), fbar_e), fbar_t)));
    return sum_all(square(sub(fbar_e, matmul(w, fbar_t))));
}

Tensor Distiller::decoder_loss(std::size_t image, int level) const {
    check_sequencing(level);
    const Tensor x = student_input(image, level);
    Tensor fe = level == 1 ? relu(student_.enc1(x))
                           : (level == 2   ? relu(student_.enc2(avgpool2(x)))
                              : level == 3 ? relu(student_.enc3(avgpool2(x)))
                                           : relu(student_.enc4(avgpool2(x))));
    const Tensor& img = images_[image];
    Tensor loss;
    Tensor rec;
    if (level == 1) {
        rec = student_.dec_step(fe, 1);
    } else {
        Tensor fd_prev = student_.dec_step(fe, level);
        // Feature-reproduction term against the frozen level-(N-1) features.
        loss = sum_all(square(sub(fd_prev, student_input(image, level))));
        rec = student_.decode_from(fd_prev, level - 1);
    }
    Tensor img_term = sum_all(square(sub(rec, img)));
    loss = loss.defined() ? add(loss, img_term) : img_term;
    // Perceptual term through the frozen teacher at the same tap.
    Tensor perceptual =
        sum_all(square(sub(teacher_.tap(rec, level), teacher_feature(image, level))));
    return add(loss, perceptual);
}

std::vector<double> Distiller::train_block_pair(int level, int steps, double lr) {
    check_sequencing(level);
    if (steps < 1 || lr <= 0.0)
        throw std::invalid_argument("train_block_pair: bad steps or lr");

    // Deeper-level caches go stale once this pair moves.
    for (int l = level + 1; l <= 4; ++l)
        for (auto& slot : frozen_inputs_[static_cast<std::size_t>(l - 1)]) slot = Tensor();

    auto params = pair_params(level);
    for (auto& p : params) p.set_requires_grad(true);

    Prng pick(derive_seed(seed_, 200 + static_cast<std::uint64_t>(level)), "pair.pick");
    std::vector<double> history;
    history.reserve(static_cast<std::size_t>(steps));
    for (int step = 0; step < steps; ++step) {
        const std::size_t k = pick.below(images_.size());
        Tensor loss = add(encoder_distill_loss(k, level), decoder_loss(k, level));
        history.push_back(loss.item());
        backward(loss);
        sgd_step(params, lr);
        student_.params.zero_grad();
    }
    for (auto& p : params) p.set_requires_grad(false);
    trained_until_ = std::max(trained_until_, level);
    return history;
}

void Distiller::run() {
    derive_bases();
    for (int level = 1; level <= 4; ++level)
        train_block_pair(level, cfg_.pair_steps, cfg_.pair_lr);
}

} // namespace iidm
