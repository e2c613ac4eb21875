#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "iidm/nn.hpp"
#include "iidm/tensor.hpp"

namespace iidm {

/// Teacher: VGG-19-shaped encoder prefix up to relu4_1 with taps at every
/// reluN_1 layer. Channel lengths per tap are (64,128,256,512) and the
/// spatial extent halves between consecutive taps (average pooling stands in
/// for max pooling).
struct VggEncoder {
    static constexpr std::array<int, 4> kChannels{64, 128, 256, 512};

    ParamRegistry params;
    int in_channels = 0;
    Conv2d conv1_1, conv1_2;
    Conv2d conv2_1, conv2_2;
    Conv2d conv3_1, conv3_2, conv3_3, conv3_4;
    Conv2d conv4_1;

    static VggEncoder make(int in_channels, std::uint64_t seed);

    /// Features at taps relu1_1..reluN_1 for N = upto (1..4).
    std::vector<Tensor> taps(const Tensor& image, int upto = 4) const;
    Tensor tap(const Tensor& image, int level) const;

    void freeze();
};

/// Student: one slim conv block per level with mirrored decoder blocks.
/// Channel lengths default to (10,20,58,64); each must stay below the
/// teacher's width at the same level.
struct SlimCoder {
    ParamRegistry params;
    int in_channels = 0;
    std::array<int, 4> channels{10, 20, 58, 64};
    Conv2d enc1, enc2, enc3, enc4;
    Conv2d dec4, dec3, dec2, dec1;

    static SlimCoder make(int in_channels, const std::array<int, 4>& channels,
                          std::uint64_t seed);

    std::vector<Tensor> enc_taps(const Tensor& image, int upto = 4) const;
    Tensor enc_tap(const Tensor& image, int level) const;

    /// One decoder block: level-N features to level-(N-1) features, or to the
    /// reconstructed image for N == 1.
    Tensor dec_step(const Tensor& feat, int level) const;
    /// Full decode from level-N features down to the image.
    Tensor decode_from(const Tensor& feat, int level) const;

    std::vector<Tensor> encoder_params() const; // the deployable extractor
};

/// Brief autoencoding pretrain for the teacher (a throwaway upsampling head
/// is trained alongside and discarded). Returns the final reconstruction loss.
double train_teacher(VggEncoder& teacher, const std::vector<Tensor>& images, int steps,
                     double lr, std::uint64_t seed);

std::size_t param_count(const ParamRegistry& reg);
std::size_t param_count(const std::vector<Tensor>& params);
double compression_ratio(double teacher_count, double student_count);

} // namespace iidm
