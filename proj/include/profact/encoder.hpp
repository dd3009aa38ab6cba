#pragma once

#include "profact/datamodel.hpp"
#include "profact/nn.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <memory>
#include <vector>

namespace profact {

/// Hierarchical Mix-Transformer layout: four stages at strides 4, 8, 16, 32.
struct EncoderConfig {
    std::array<int, 4> channels{32, 64, 160, 256};
    std::array<int, 4> depths{2, 2, 2, 2};
    std::array<int, 4> heads{1, 2, 5, 8};
    std::array<int, 4> sr_ratios{8, 4, 2, 1};
    int ffn_expansion = 4;

    /// Default laptop-sized model.
    static EncoderConfig desk();
    /// MiT-B3 layout (depths 3, 4, 18, 3).
    static EncoderConfig mit_b3();
    /// Smallest layout used by tests and smoke runs.
    static EncoderConfig tiny();

    /// Throws ConfigError on non-positive values, decreasing channels or
    /// channels not divisible by their head count.
    void validate() const;
};

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);

/// Patch size / stride / padding of the embedding conv for stage `index` (0-based).
struct StageGeometry {
    int patch;
    int stride;
    int padding;
};
StageGeometry stage_geometry(int index);

/// Four feature maps at 1/4, 1/8, 1/16, 1/32 of the padded input.
struct FeaturePyramid {
    std::array<Tensor, 4> levels;
};

/// Overlapping patch embedding: strided conv followed by channel layer norm.
class PatchEmbed : public nn::Module {
public:
    PatchEmbed(int in_channels, int out_channels, StageGeometry geometry, nn::Rng& rng);
    /// [N,Cin,H,W] -> [N,C,H/stride,W/stride]; H and W must divide by the stride.
    Tensor forward(const Tensor& x) const;

private:
    StageGeometry geometry_;
    nn::Conv2d proj_;
    nn::LayerNorm norm_;
};

/// Multi-head self-attention whose keys/values come from a spatially reduced
/// copy of the input (reduction by a strided conv of size `sr_ratio`).
class EfficientSelfAttention : public nn::Module {
public:
    EfficientSelfAttention(int channels, int heads, int sr_ratio, nn::Rng& rng);
    /// tokens: [N, h*w, C] -> [N, h*w, C]. If `attention` is given it receives
    /// the softmax weights [N*heads, h*w, keys].
    Tensor forward(const Tensor& tokens, int64_t h, int64_t w, Tensor* attention = nullptr) const;

    int heads() const { return heads_; }
    int sr_ratio() const { return sr_ratio_; }

private:
    int channels_;
    int heads_;
    int sr_ratio_;
    nn::Linear q_;
    nn::Linear k_;
    nn::Linear v_;
    nn::Linear proj_;
    std::unique_ptr<nn::Conv2d> sr_;
    std::unique_ptr<nn::LayerNorm> sr_norm_;
};

/// Feed-forward block with a 3x3 depth-wise conv between the two linears,
/// which supplies positional information. Includes pre-norm and residual:
/// out = x + fc2(gelu(dwconv(fc1(norm(x))))).
class MixFfn : public nn::Module {
public:
    MixFfn(int channels, int expansion, nn::Rng& rng);
    Tensor forward(const Tensor& tokens, int64_t h, int64_t w) const;

    nn::LayerNorm norm;
    nn::Linear fc1;
    nn::Conv2d dwconv;
    nn::Linear fc2;
};

class TransformerBlock : public nn::Module {
public:
    TransformerBlock(int channels, int heads, int sr_ratio, int expansion, nn::Rng& rng);
    Tensor forward(const Tensor& tokens, int64_t h, int64_t w) const;

private:
    nn::LayerNorm norm1_;
    EfficientSelfAttention attn_;
    MixFfn ffn_;
};

/// Patch embedding, `depth` transformer blocks and a closing layer norm.
class EncoderStage : public nn::Module {
public:
    EncoderStage(int index, int in_channels, const EncoderConfig& cfg, nn::Rng& rng);
    /// [N,Cin,H,W] -> [N,C,H/s,W/s]
    Tensor forward(const Tensor& x) const;
    int out_channels() const { return channels_; }

private:
    int channels_;
    PatchEmbed embed_;
    std::vector<std::unique_ptr<TransformerBlock>> blocks_;
    nn::LayerNorm norm_;
};

/// Per-channel ImageNet mean/std normalization of [N,3,H,W] inputs in [0,1].
Tensor normalize_input(const Tensor& images);

class MitEncoder : public nn::Module {
public:
    MitEncoder(const EncoderConfig& cfg, nn::Rng& rng);

    /// images: [N,3,H,W] in [0,1] with H, W multiples of 32.
    FeaturePyramid forward(const Tensor& images) const;
    const EncoderConfig& config() const { return cfg_; }
    const EncoderStage& stage(int index) const { return *stages_[static_cast<size_t>(index)]; }

private:
    EncoderConfig cfg_;
    std::array<std::unique_ptr<EncoderStage>, 4> stages_;
};

} // namespace profact
