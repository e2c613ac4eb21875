#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "iidm/tensor.hpp"
#include "iidm/vgg.hpp"

namespace iidm {

/// Subtracts each channel row's mean across spatial positions; f is (C, HW).
Tensor center_features(const Tensor& f);

/// Subtracts frozen per-channel means (the "global and image independent"
/// decentering used on teacher features).
Tensor decenter_with(const Tensor& f, const std::vector<double>& mean);

/// || W^T W F_bar - F_bar ||_2^2, the orthonormality-free reformulation the
/// eigenbasis is trained on. w is (c_e, C), fbar is (C, HW).
Tensor reconstruction_loss(const Tensor& w, const Tensor& fbar);

/// Descending eigenvalues of the per-image feature covariance (population,
/// divided by HW), clamped at zero. Uses the Gram-matrix route when the
/// spatial extent is smaller than the channel count.
std::vector<double> covariance_spectrum(const Tensor& fbar);

/// Per-image eigenvalue lists for each of the four teacher taps.
struct SpectrumStats {
    std::array<std::vector<std::vector<double>>, 4> per_layer;
};

SpectrumStats collect_spectra(const VggEncoder& teacher, const std::vector<Tensor>& images);

/// Mean cumulative explained variance over a layer's spectra at c_prime
/// components. Monotone nondecreasing in c_prime; exactly 1 at full rank.
double mcev(const std::vector<std::vector<double>>& layer_spectra, int c_prime);

/// Smallest c with mcev(c) >= target per layer, then the first layer's count
/// is doubled (capped at the teacher width).
std::array<int, 4> select_channel_lengths(const SpectrumStats& spectra, double target = 0.85);

struct EigenbasisTrainInfo {
    double final_loss = 0.0;      // mean per-image reconstruction loss, full dataset
    double orthonormality_inf = 0.0; // ||W W^T - I||_inf after training
};

/// Mini-batch SGD on the reconstruction reformulation over decentered feature
/// matrices; returns the trained (c_e, C) basis.
Tensor derive_eigenbasis(const std::vector<Tensor>& fbars, int c_e, int batch_size, int epochs,
                         double lr, std::uint64_t seed,
                         EigenbasisTrainInfo* info = nullptr);

struct EigenBasisLayer {
    Tensor w;                 // (c_e, C_N)
    std::vector<double> mean; // frozen per-channel decentering mean (C_N)
};

enum class EncoderLossForm { Printed, Prose };

struct DistillConfig {
    std::array<int, 4> channels{10, 20, 58, 64};
    bool auto_select_channels = false;
    double mcev_target = 0.85;
    int batch_size = 8;
    int epochs = 5;
    double basis_lr = 1e-3;
    int pair_steps = 60;
    double pair_lr = 1e-3;
    int teacher_steps = 30;
    double teacher_lr = 1e-3;
    EncoderLossForm encoder_loss_form = EncoderLossForm::Printed;
};

/// Blockwise PCA knowledge distillation: derives one eigenbasis per tap of a
/// frozen teacher, then trains slim encoder/decoder block pairs in order
/// N = 1..4. Losses are exposed per image for testing; out-of-order training
/// or loss evaluation is a sequencing error.
class Distiller {
public:
    Distiller(VggEncoder teacher, const std::vector<Tensor>& images, const DistillConfig& cfg,
              std::uint64_t seed);

    void derive_bases();
    Tensor encoder_distill_loss(std::size_t image, int level) const;
    Tensor decoder_loss(std::size_t image, int level) const;
    /// Trains pair N; returns the per-step joint loss history.
    std::vector<double> train_block_pair(int level, int steps, double lr);
    /// Full run: bases then pairs 1..4 with the config's step counts.
    void run();

    const VggEncoder& teacher() const { return teacher_; }
    const SlimCoder& student() const { return student_; }
    SlimCoder& student() { return student_; }
    const std::array<EigenBasisLayer, 4>& basis() const { return basis_; }
    int trained_until() const { return trained_until_; }
    const DistillConfig& config() const { return cfg_; }

private:
    Tensor teacher_feature(std::size_t image, int level) const;      // raw tap, cached
    Tensor teacher_decentered(std::size_t image, int level) const;   // frozen-mean F_bar
    Tensor student_input(std::size_t image, int level) const;        // frozen prefix output
    void check_sequencing(int level) const;
    std::vector<Tensor> pair_params(int level) const;

    VggEncoder teacher_;
    SlimCoder student_;
    DistillConfig cfg_;
    std::uint64_t seed_;
    std::vector<Tensor> images_;
    std::array<EigenBasisLayer, 4> basis_;
    bool bases_ready_ = false;
    int trained_until_ = 0;
    // level-major caches of frozen forward passes (no-grad constants)
    mutable std::array<std::vector<Tensor>, 4> teacher_taps_;
    mutable std::array<std::vector<Tensor>, 4> teacher_fbars_;
    mutable std::array<std::vector<Tensor>, 4> frozen_inputs_; // student input per level
};

/// Flattens a (C,H,W) feature tensor to the (C, HW) matrix the distillation
/// math works on.
Tensor as_feature_matrix(const Tensor& chw);

} // namespace iidm
