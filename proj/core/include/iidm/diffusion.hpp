#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "iidm/checkpoint.hpp"
#include "iidm/raster.hpp"
#include "iidm/rng.hpp"
#include "iidm/schedule.hpp"
#include "iidm/tensor.hpp"
#include "iidm/unet.hpp"
#include "iidm/vgg.hpp"

namespace iidm {

/// One forward (noising) step: x_t = sqrt(1-beta_t) x_{t-1} + sqrt(beta_t) noise.
Tensor forward_step(const Tensor& x_prev, int t, const VarianceSchedule& sched,
                    const Tensor& noise);

/// Closed-form jump to step t: x_t = sqrt(abar_t) x0 + sqrt(1-abar_t) noise.
Tensor forward_jump(const Tensor& x0, int t, const VarianceSchedule& sched, const Tensor& noise);

struct DiffusionState {
    Tensor y_t;
    int t = 0;
    std::vector<Tensor> cond; // conditional feature pyramid
};

using NoisePredictor =
    std::function<Tensor(const Tensor& y_t, const std::vector<Tensor>& cond, int t)>;

/// One reverse step under the epsilon parameterization: the predictor gives
/// eps_hat, the new state samples the posterior with variance beta_tilde_t;
/// no noise is added at t == 1. t == 0 is a contract error.
DiffusionState denoise_step(const DiffusionState& state, const NoisePredictor& predict,
                            const VarianceSchedule& sched, Prng& rng);

/// Conditional feature source for the denoiser: raw imagery, the teacher's
/// relu1_1 tap, or the distilled student's slim tap.
struct FeatureExtractor {
    std::string kind = "raw"; // raw | vgg | kd_vgg
    int channels = 0;
    std::shared_ptr<VggEncoder> teacher;
    std::shared_ptr<SlimCoder> student;

    Tensor features(const Tensor& imagery) const;

    static FeatureExtractor raw(int image_channels);
    static FeatureExtractor vgg(std::shared_ptr<VggEncoder> teacher);
    static FeatureExtractor kd(std::shared_ptr<SlimCoder> student);

    void save_into(Checkpoint& ck) const;
    static FeatureExtractor from_checkpoint(const Checkpoint& ck);
};

struct IidmTrainConfig {
    int steps = 2000;
    double lr = 1e-3;
    int timesteps = 50;
    double beta_start = 1e-4;
    double beta_end = 0.05;
    std::array<int, 3> widths{16, 32, 64};
    int temb_dim = 32;
    bool attention = true;
    bool use_mask = true; // restrict the training loss to forest pixels

    void validate() const;
};

struct TrainScene {
    Tensor imagery;             // (C,H,W)
    Tensor density;             // (1,H,W), Mg/pixel
    std::vector<std::uint8_t> mask; // H*W entries of {0,255}
};

struct IidmTrainResult {
    Checkpoint checkpoint;
    std::vector<std::pair<int, double>> loss_curve; // (step, loss)
};

/// Trains the noise-prediction net with the L1 objective on (noisy target,
/// conditional features, t) triples. Deterministic for a fixed seed; aborts
/// with a diagnostic (step, lr, grad norm) if the loss goes non-finite.
IidmTrainResult train_iidm(const std::vector<TrainScene>& scenes, const FeatureExtractor& ext,
                           const IidmTrainConfig& cfg, std::uint64_t seed);

void write_loss_csv(const std::vector<std::pair<int, double>>& curve, const std::string& path);

/// Full reverse chain from pure noise conditioned on the imagery; the output
/// density raster is zeroed outside the forest mask when one is given.
Raster estimate(const Raster& imagery, const Raster* mask, const Checkpoint& ckpt,
                std::uint64_t seed);

/// Converts scene rasters into training tensors.
TrainScene make_train_scene(const Raster& imagery, const Raster& truth_density,
                            const Raster& mask);

} // namespace iidm
