#include "profact/encoder.hpp"

#include "profact/error.hpp"

#include <cmath>
#include <string>

namespace profact {

EncoderConfig EncoderConfig::desk() { return EncoderConfig{}; }

EncoderConfig EncoderConfig::mit_b3() {
    EncoderConfig c;
    c.channels = {64, 128, 320, 512};
    c.depths = {3, 4, 18, 3};
    c.heads = {1, 2, 5, 8};
    c.sr_ratios = {8, 4, 2, 1};
    c.ffn_expansion = 4;
    return c;
}

EncoderConfig EncoderConfig::tiny() {
    EncoderConfig c;
    c.channels = {16, 32, 48, 64};
    c.depths = {1, 1, 1, 1};
    c.heads = {1, 2, 2, 4};
    c.sr_ratios = {8, 4, 2, 1};
    c.ffn_expansion = 2;
    return c;
}

void EncoderConfig::validate() const {
    for (int i = 0; i < 4; ++i) {
        if (channels[i] <= 0 || depths[i] <= 0 || heads[i] <= 0 || sr_ratios[i] <= 0) {
            throw ConfigError("encoder stage " + std::to_string(i + 1) + " has a non-positive setting");
        }
        if (channels[i] % heads[i] != 0) {
            throw ConfigError("encoder stage " + std::to_string(i + 1) + ": " +
                              std::to_string(channels[i]) + " channels not divisible by " +
                              std::to_string(heads[i]) + " heads");
        }
        if (i > 0 && channels[i] < channels[i - 1]) {
            throw ConfigError("encoder channels must be nondecreasing across stages");
        }
    }
    if (ffn_expansion <= 0) {
        throw ConfigError("ffn_expansion must be positive");
    }
}

void to_json(nlohmann::json& j, const EncoderConfig& c) {
    j = {{"stage_channels", c.channels},
         {"stage_depths", c.depths},
         {"attention_heads", c.heads},
         {"spatial_reduction_ratios", c.sr_ratios},
         {"ffn_expansion", c.ffn_expansion}};
}

void from_json(const nlohmann::json& j, EncoderConfig& c) {
    c.channels = j.at("stage_channels").get<std::array<int, 4>>();
    c.depths = j.at("stage_depths").get<std::array<int, 4>>();
    c.heads = j.at("attention_heads").get<std::array<int, 4>>();
    c.sr_ratios = j.at("spatial_reduction_ratios").get<std::array<int, 4>>();
    c.ffn_expansion = j.at("ffn_expansion").get<int>();
}

StageGeometry stage_geometry(int index) {
    if (index == 0) {
        return {7, 4, 3};
    }
    return {3, 2, 1};
}

PatchEmbed::PatchEmbed(int in_channels, int out_channels, StageGeometry geometry, nn::Rng& rng)
    : geometry_(geometry),
      proj_(in_channels, out_channels, geometry.patch, {geometry.stride, geometry.padding, 1, 1}, rng),
      norm_(out_channels) {
    register_module("proj", proj_);
    register_module("norm", norm_);
}

Tensor PatchEmbed::forward(const Tensor& x) const {
    if (x.rank() != 4 || x.dim(2) % geometry_.stride != 0 || x.dim(3) % geometry_.stride != 0) {
        throw ShapeMismatch("patch embedding with stride " + std::to_string(geometry_.stride) +
                            " cannot take input " + shape_str(x.shape()));
    }
    return norm_.forward_channels(proj_.forward(x));
}

EfficientSelfAttention::EfficientSelfAttention(int channels, int heads, int sr_ratio, nn::Rng& rng)
    : channels_(channels), heads_(heads), sr_ratio_(sr_ratio), q_(channels, channels, rng),
      k_(channels, channels, rng), v_(channels, channels, rng), proj_(channels, channels, rng) {
    if (heads <= 0 || channels % heads != 0) {
        throw ShapeMismatch("attention: " + std::to_string(channels) +
                            " channels not divisible by " + std::to_string(heads) + " heads");
    }
    register_module("q", q_);
    register_module("k", k_);
    register_module("v", v_);
    register_module("proj", proj_);
    if (sr_ratio > 1) {
        sr_ = std::make_unique<nn::Conv2d>(channels, channels, sr_ratio,
                                           ops::Conv2dOptions{sr_ratio, 0, 1, 1}, rng);
        sr_norm_ = std::make_unique<nn::LayerNorm>(channels);
        register_module("sr", *sr_);
        register_module("sr_norm", *sr_norm_);
    }
}

Tensor EfficientSelfAttention::forward(const Tensor& tokens, int64_t h, int64_t w,
                                       Tensor* attention) const {
    if (tokens.rank() != 3 || tokens.dim(2) != channels_ || tokens.dim(1) != h * w) {
        throw ShapeMismatch("attention input " + shape_str(tokens.shape()) + " for " +
                            std::to_string(h) + "x" + std::to_string(w) + "x" +
                            std::to_string(channels_));
    }
    Tensor kv_source = tokens;
    if (sr_) {
        if (h < sr_ratio_ || w < sr_ratio_) {
            throw ShapeMismatch("attention: feature map smaller than reduction ratio");
        }
        Tensor reduced = sr_->forward(ops::from_tokens(tokens, h, w));
        kv_source = sr_norm_->forward(ops::to_tokens(reduced));
    }
    const double head_dim = static_cast<double>(channels_ / heads_);
    Tensor q = ops::split_heads(q_.forward(tokens), heads_);
    Tensor k = ops::split_heads(k_.forward(kv_source), heads_);
    Tensor v = ops::split_heads(v_.forward(kv_source), heads_);
    Tensor weights = ops::softmax(ops::scale(ops::bmm_nt(q, k), 1.0 / std::sqrt(head_dim)));
    if (attention) {
        *attention = weights;
    }
    return proj_.forward(ops::merge_heads(ops::bmm(weights, v), heads_));
}

MixFfn::MixFfn(int channels, int expansion, nn::Rng& rng)
    : norm(channels), fc1(channels, channels * expansion, rng),
      dwconv(channels * expansion, channels * expansion, 3,
             ops::Conv2dOptions{1, 1, 1, channels * expansion}, rng),
      fc2(channels * expansion, channels, rng) {
    register_module("norm", norm);
    register_module("fc1", fc1);
    register_module("dwconv", dwconv);
    register_module("fc2", fc2);
}

Tensor MixFfn::forward(const Tensor& tokens, int64_t h, int64_t w) const {
    Tensor hidden = fc1.forward(norm.forward(tokens));
    hidden = ops::to_tokens(dwconv.forward(ops::from_tokens(hidden, h, w)));
    return ops::add(tokens, fc2.forward(ops::gelu(hidden)));
}

TransformerBlock::TransformerBlock(int channels, int heads, int sr_ratio, int expansion, nn::Rng& rng)
    : norm1_(channels), attn_(channels, heads, sr_ratio, rng), ffn_(channels, expansion, rng) {
    register_module("norm1", norm1_);
    register_module("attn", attn_);
    register_module("ffn", ffn_);
}

Tensor TransformerBlock::forward(const Tensor& tokens, int64_t h, int64_t w) const {
    Tensor x = ops::add(tokens, attn_.forward(norm1_.forward(tokens), h, w));
    return ffn_.forward(x, h, w);
}

EncoderStage::EncoderStage(int index, int in_channels, const EncoderConfig& cfg, nn::Rng& rng)
    : channels_(cfg.channels[index]),
      embed_(in_channels, cfg.channels[index], stage_geometry(index), rng),
      norm_(cfg.channels[index]) {
    register_module("patch_embed", embed_);
    for (int d = 0; d < cfg.depths[index]; ++d) {
        blocks_.push_back(std::make_unique<TransformerBlock>(
            cfg.channels[index], cfg.heads[index], cfg.sr_ratios[index], cfg.ffn_expansion, rng));
        register_module("block" + std::to_string(d), *blocks_.back());
    }
    register_module("norm", norm_);
}

Tensor EncoderStage::forward(const Tensor& x) const {
    Tensor embedded = embed_.forward(x);
    const int64_t h = embedded.dim(2), w = embedded.dim(3);
    Tensor tokens = ops::to_tokens(embedded);
    for (const auto& block : blocks_) {
        tokens = block->forward(tokens, h, w);
    }
    return ops::from_tokens(norm_.forward(tokens), h, w);
}

Tensor normalize_input(const Tensor& images) {
    if (images.rank() != 4 || images.dim(1) != 3) {
        throw ShapeMismatch("expected [N,3,H,W] images, got " + shape_str(images.shape()));
    }
    static constexpr double mean[3] = {0.485, 0.456, 0.406};
    static constexpr double stdev[3] = {0.229, 0.224, 0.225};
    const int64_t n = images.dim(0), hw = images.dim(2) * images.dim(3);
    std::vector<double> scale_v(static_cast<size_t>(n * 3 * hw));
    std::vector<double> shift_v(scale_v.size());
    for (int64_t b = 0; b < n; ++b) {
        for (int c = 0; c < 3; ++c) {
            for (int64_t i = 0; i < hw; ++i) {
                const size_t idx = static_cast<size_t>((b * 3 + c) * hw + i);
                scale_v[idx] = 1.0 / stdev[c];
                shift_v[idx] = -mean[c] / stdev[c];
            }
        }
    }
    Tensor s = Tensor::from_data(images.shape(), std::move(scale_v));
    Tensor t = Tensor::from_data(images.shape(), std::move(shift_v));
    return ops::add(ops::mul(images, s), t);
}

MitEncoder::MitEncoder(const EncoderConfig& cfg, nn::Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    int in_channels = 3;
    for (int i = 0; i < 4; ++i) {
        stages_[static_cast<size_t>(i)] = std::make_unique<EncoderStage>(i, in_channels, cfg_, rng);
        register_module("stage" + std::to_string(i + 1), *stages_[static_cast<size_t>(i)]);
        in_channels = cfg_.channels[i];
    }
}

FeaturePyramid MitEncoder::forward(const Tensor& images) const {
    if (images.rank() != 4 || images.dim(2) % 32 != 0 || images.dim(3) % 32 != 0 ||
        images.dim(2) == 0 || images.dim(3) == 0) {
        throw ShapeMismatch("encoder input must be [N,3,H,W] with H, W multiples of 32, got " +
                            shape_str(images.shape()));
    }
    FeaturePyramid pyramid;
    Tensor x = normalize_input(images);
    for (size_t i = 0; i < 4; ++i) {
        x = stages_[i]->forward(x);
        pyramid.levels[i] = x;
    }
    return pyramid;
}

} // namespace profact
