#include "iidm/vgg.hpp"

#include <stdexcept>

namespace iidm {

VggEncoder VggEncoder::make(int in_channels, std::uint64_t seed) {
    if (in_channels <= 0) throw std::invalid_argument("VggEncoder: in_channels must be > 0");
    Prng rng(seed, "init.teacher");
    VggEncoder e;
    e.in_channels = in_channels;
    auto& p = e.params;
    e.conv1_1 = Conv2d::make(p, "conv1_1", in_channels, 64, 3, 1, rng);
    e.conv1_2 = Conv2d::make(p, "conv1_2", 64, 64, 3, 1, rng);
    e.conv2_1 = Conv2d::make(p, "conv2_1", 64, 128, 3, 1, rng);
    e.conv2_2 = Conv2d::make(p, "conv2_2", 128, 128, 3, 1, rng);
    e.conv3_1 = Conv2d::make(p, "conv3_1", 128, 256, 3, 1, rng);
    e.conv3_2 = Conv2d::make(p, "conv3_2", 256, 256, 3, 1, rng);
    e.conv3_3 = Conv2d::make(p, "conv3_3", 256, 256, 3, 1, rng);
    e.conv3_4 = Conv2d::make(p, "conv3_4", 256, 256, 3, 1, rng);
    e.conv4_1 = Conv2d::make(p, "conv4_1", 256, 512, 3, 1, rng);
    return e;
}

std::vector<Tensor> VggEncoder::taps(const Tensor& image, int upto) const {
    if (upto < 1 || upto > 4) throw std::invalid_argument("VggEncoder: tap level out of range");
    std::vector<Tensor> out;
    Tensor t1 = relu(conv1_1(image));
    out.push_back(t1);
    if (upto == 1) return out;
    Tensor h = avgpool2(relu(conv1_2(t1)));
    Tensor t2 = relu(conv2_1(h));
    out.push_back(t2);
    if (upto == 2) return out;
    h = avgpool2(relu(conv2_2(t2)));
    Tensor t3 = relu(conv3_1(h));
    out.push_back(t3);
    if (upto == 3) return out;
    h = relu(conv3_2(t3));
    h = relu(conv3_3(h));
    h = avgpool2(relu(conv3_4(h)));
    out.push_back(relu(conv4_1(h)));
    return out;
}

Tensor VggEncoder::tap(const Tensor& image, int level) const {
    return taps(image, level).back();
}

void VggEncoder::freeze() {
    for (const auto& [name, t] : params.entries()) {
        Tensor handle = t;
        handle.set_requires_grad(false);
    }
}

SlimCoder SlimCoder::make(int in_channels, const std::array<int, 4>& channels,
                          std::uint64_t seed) {
    if (in_channels <= 0) throw std::invalid_argument("SlimCoder: in_channels must be > 0");
    for (int i = 0; i < 4; ++i) {
        if (channels[static_cast<std::size_t>(i)] <= 0)
            throw std::invalid_argument("SlimCoder: channel lengths must be > 0");
        if (channels[static_cast<std::size_t>(i)] >= VggEncoder::kChannels[static_cast<std::size_t>(i)])
            throw std::invalid_argument("SlimCoder: channel lengths must stay below the teacher's");
    }
    Prng rng(seed, "init.student");
    SlimCoder s;
    s.in_channels = in_channels;
    s.channels = channels;
    auto& p = s.params;
    s.enc1 = Conv2d::make(p, "enc1", in_channels, channels[0], 3, 1, rng);
    s.enc2 = Conv2d::make(p, "enc2", channels[0], channels[1], 3, 1, rng);
    s.enc3 = Conv2d::make(p, "enc3", channels[1], channels[2], 3, 1, rng);
    s.enc4 = Conv2d::make(p, "enc4", channels[2], channels[3], 3, 1, rng);
    s.dec4 = Conv2d::make(p, "dec4", channels[3], channels[2], 3, 1, rng);
    s.dec3 = Conv2d::make(p, "dec3", channels[2], channels[1], 3, 1, rng);
    s.dec2 = Conv2d::make(p, "dec2", channels[1], channels[0], 3, 1, rng);
    s.dec1 = Conv2d::make(p, "dec1", channels[0], in_channels, 3, 1, rng);
    return s;
}

std::vector<Tensor> SlimCoder::enc_taps(const Tensor& image, int upto) const {
    if (upto < 1 || upto > 4) throw std::invalid_argument("SlimCoder: tap level out of range");
    std::vector<Tensor> out;
    Tensor h = relu(enc1(image));
    out.push_back(h);
    if (upto >= 2) {
        h = relu(enc2(avgpool2(h)));
        out.push_back(h);
    }
    if (upto >= 3) {
        h = relu(enc3(avgpool2(h)));
        out.push_back(h);
    }
    if (upto >= 4) {
        h = relu(enc4(avgpool2(h)));
        out.push_back(h);
    }
    return out;
}

Tensor SlimCoder::enc_tap(const Tensor& image, int level) const {
    return enc_taps(image, level).back();
}

Tensor SlimCoder::dec_step(const Tensor& feat, int level) const {
    switch (level) {
        case 4: return relu(dec4(nearest_upsample2(feat)));
        case 3: return relu(dec3(nearest_upsample2(feat)));
        case 2: return relu(dec2(nearest_upsample2(feat)));
        case 1: return dec1(feat); // linear image head, no upsample at full res
        default: throw std::invalid_argument("SlimCoder: decoder level out of range");
    }
}

Tensor SlimCoder::decode_from(const Tensor& feat, int level) const {
    Tensor h = feat;
    for (int n = level; n >= 1; --n) h = dec_step(h, n);
    return h;
}

std::vector<Tensor> SlimCoder::encoder_params() const {
    std::vector<Tensor> out;
    for (const auto& [name, t] : params.entries())
        if (name.rfind("enc", 0) == 0) out.push_back(t);
    return out;
}

namespace {

// Throwaway reconstruction head for teacher pretraining: relu4_1 back to the
// image at full resolution.
struct TeacherDecoder {
    ParamRegistry params;
    Conv2d c1, c2, c3, c4;

    static TeacherDecoder make(int out_channels, std::uint64_t seed) {
        Prng rng(seed, "init.teacher_dec");
        TeacherDecoder d;
        d.c1 = Conv2d::make(d.params, "c1", 512, 64, 3, 1, rng);
        d.c2 = Conv2d::make(d.params, "c2", 64, 32, 3, 1, rng);
        d.c3 = Conv2d::make(d.params, "c3", 32, 16, 3, 1, rng);
        d.c4 = Conv2d::make(d.params, "c4", 16, out_channels, 3, 1, rng);
        return d;
    }

    Tensor operator()(const Tensor& relu4_1) const {
        Tensor h = relu(c1(nearest_upsample2(relu4_1)));
        h = relu(c2(nearest_upsample2(h)));
        h = relu(c3(nearest_upsample2(h)));
        return c4(h);
    }
};

} // namespace

double train_teacher(VggEncoder& teacher, const std::vector<Tensor>& images, int steps,
                     double lr, std::uint64_t seed) {
    if (images.empty()) throw std::invalid_argument("train_teacher: empty dataset");
    TeacherDecoder dec = TeacherDecoder::make(teacher.in_channels, seed);
    std::vector<Tensor> all = teacher.params.tensors();
    for (const auto& t : dec.params.tensors()) all.push_back(t);

    Prng pick(seed, "teacher.pick");
    double last = 0.0;
    for (int step = 0; step < steps; ++step) {
        const Tensor& img = images[pick.below(images.size())];
        Tensor loss = mean_all(square(sub(dec(teacher.tap(img, 4)), img)));
        last = loss.item();
        backward(loss);
        sgd_step(all, lr);
    }
    return last;
}

std::size_t param_count(const ParamRegistry& reg) {
    std::size_t n = 0;
    for (const auto& [name, t] : reg.entries()) n += static_cast<std::size_t>(t.numel());
    return n;
}

std::size_t param_count(const std::vector<Tensor>& params) {
    std::size_t n = 0;
    for (const auto& t : params) n += static_cast<std::size_t>(t.numel());
    return n;
}

double compression_ratio(double teacher_count, double student_count) {
    if (teacher_count <= 0.0 || student_count <= 0.0)
        throw std::invalid_argument("compression_ratio: counts must be > 0");
    return teacher_count / student_count;
}

} // namespace iidm
