#include "profact/feedback.hpp"

#include "profact/error.hpp"

#include <cmath>
#include <string>

namespace profact {

HamConfig HamConfig::desk() { return HamConfig{}; }

HamConfig HamConfig::full() {
    HamConfig c;
    c.gaussian_kernel_size = 31;
    c.gaussian_sigma = 4.0;
    return c;
}

void HamConfig::validate() const {
    if (down_kernel <= 0 || down_stride <= 0 || down_padding < 0) {
        throw ConfigError("ham: invalid downsample geometry");
    }
    if (gaussian_kernel_size <= 0 || gaussian_kernel_size % 2 == 0) {
        throw ConfigError("ham: gaussian_kernel_size must be odd and positive");
    }
    if (!(gaussian_sigma > 0.0)) {
        throw ConfigError("ham: gaussian_sigma must be positive");
    }
}

void to_json(nlohmann::json& j, const HamConfig& c) {
    j = {{"down_kernel", c.down_kernel},
         {"down_stride", c.down_stride},
         {"down_padding", c.down_padding},
         {"gaussian_kernel_size", c.gaussian_kernel_size},
         {"gaussian_sigma", c.gaussian_sigma}};
}

void from_json(const nlohmann::json& j, HamConfig& c) {
    c.down_kernel = j.at("down_kernel").get<int>();
    c.down_stride = j.at("down_stride").get<int>();
    c.down_padding = j.at("down_padding").get<int>();
    c.gaussian_kernel_size = j.at("gaussian_kernel_size").get<int>();
    c.gaussian_sigma = j.at("gaussian_sigma").get<double>();
}

std::vector<double> gaussian_kernel(int size, double sigma) {
    std::vector<double> k(static_cast<size_t>(size * size));
    const int half = size / 2;
    double total = 0.0;
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const double dy = y - half, dx = x - half;
            const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
            k[static_cast<size_t>(y * size + x)] = v;
            total += v;
        }
    }
    for (double& v : k) {
        v /= total;
    }
    return k;
}

namespace {

const HamConfig& validated(const HamConfig& cfg) {
    cfg.validate();
    return cfg;
}

} // namespace

Ham::Ham(const HamConfig& cfg, nn::Rng& rng)
    : down(1, 1, validated(cfg).down_kernel,
           ops::Conv2dOptions{cfg.down_stride, cfg.down_padding, 1, 1}, rng),
      cfg_(cfg) {
    // Start as a box filter so a map in [0,1] stays in [0,1].
    const double box = 1.0 / (cfg.down_kernel * cfg.down_kernel);
    for (double& v : down.weight.mutable_data()) {
        v = box;
    }
    register_module("down", down);
    const int g = cfg.gaussian_kernel_size;
    blur_ = Tensor::from_data({1, 1, g, g}, gaussian_kernel(g, cfg.gaussian_sigma));
}

HamTrace Ham::trace(const Tensor& coarse) const {
    if (coarse.rank() != 4 || coarse.dim(1) != 1) {
        throw ShapeMismatch("ham expects [N,1,H,W], got " + shape_str(coarse.shape()));
    }
    HamTrace t;
    t.downsampled = down.forward(coarse);
    t.blurred = ops::conv2d(t.downsampled, blur_, Tensor{},
                            ops::Conv2dOptions{1, cfg_.gaussian_kernel_size / 2, 1, 1});
    t.normalized = ops::normalize_by_max(t.blurred);
    t.output = ops::maximum(t.normalized, t.downsampled);
    return t;
}

Tensor Ham::forward(const Tensor& coarse) const { return trace(coarse).output; }

Tensor feedback_fuse(const Tensor& attention, const Tensor& features) {
    if (attention.rank() != 4 || attention.dim(1) != 1 || features.rank() != 4 ||
        attention.dim(0) != features.dim(0)) {
        throw ShapeMismatch("feedback fuse: attention " + shape_str(attention.shape()) +
                            " vs features " + shape_str(features.shape()));
    }
    Tensor resized = ops::resize_bilinear(attention, features.dim(2), features.dim(3));
    return ops::mul_channel_broadcast(features, resized);
}

FeedbackBranch::FeedbackBranch(const EncoderConfig& enc, const CspmConfig& cspm,
                               int decoder_channels, nn::Rng& rng) {
    stage3_ = std::make_unique<EncoderStage>(2, enc.channels[1], enc, rng);
    stage4_ = std::make_unique<EncoderStage>(3, enc.channels[2], enc, rng);
    register_module("stage3", *stage3_);
    register_module("stage4", *stage4_);
    for (size_t i = 0; i < 3; ++i) {
        cspm_[i] = std::make_unique<Cspm>(enc.channels[i + 1], cspm, rng);
        register_module("cspm" + std::to_string(i + 2), *cspm_[i]);
    }
    decoder_ = std::make_unique<MlpDecoder>(
        std::vector<int>{enc.channels[1], enc.channels[2], enc.channels[3]}, decoder_channels, rng);
    register_module("decoder", *decoder_);
}

FebOutput FeedbackBranch::forward(const Tensor& x2) const {
    FebOutput out;
    out.x3 = stage3_->forward(x2);
    out.x4 = stage4_->forward(out.x3);
    std::vector<Tensor> levels{cspm_[0]->forward(x2), cspm_[1]->forward(out.x3),
                               cspm_[2]->forward(out.x4)};
    out.logits = decoder_->forward(levels, 2 * x2.dim(2), 2 * x2.dim(3));
    return out;
}

} // namespace profact
