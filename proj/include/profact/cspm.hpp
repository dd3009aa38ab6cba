#pragma once

#include "profact/nn.hpp"

#include <nlohmann/json.hpp>

#include <memory>
#include <vector>

namespace profact {

struct CspmConfig {
    std::vector<int> dilation_rates{1, 2, 3};
    int cot_kernel = 3;
    /// Channel reduction of the hidden layer between the two attention 1x1 convs.
    int reduction = 4;
    /// Ablation: normalize the attention map with a softmax over channels.
    bool attention_softmax = false;
    /// Ablation: replace the dilated branches with max-pooling of the same extent.
    bool pooling_pyramid = false;

    /// Throws ConfigError for empty, non-positive or repeated rates, or an even kernel.
    void validate() const;
};

void to_json(nlohmann::json& j, const CspmConfig& c);
void from_json(const nlohmann::json& j, CspmConfig& c);

/// Largest divisor of `channels` not above 4.
int cot_groups(int channels);

/// Contextual attention block: static context S from a grouped kxk conv,
/// attention A from two 1x1 convs over [S, M], output S + A * phi(M).
class CotBlock : public nn::Module {
public:
    CotBlock(int channels, const CspmConfig& cfg, nn::Rng& rng);
    /// [N,C,H,W] -> [N,C,H,W]
    Tensor forward(const Tensor& m) const;
    /// The static-context path alone.
    Tensor static_context(const Tensor& m) const;

    int channels() const { return channels_; }

    nn::Conv2d key_conv;
    nn::Linear theta;
    nn::LayerNorm theta_norm;
    nn::Linear delta;
    nn::Linear value;

private:
    int channels_;
    bool softmax_;
};

/// Parallel 1x1 branch and 3x3 dilated branches (zero padding = rate),
/// concatenated and fused back to C channels by a 1x1 conv.
class DilatedPyramid : public nn::Module {
public:
    DilatedPyramid(int channels, const CspmConfig& cfg, nn::Rng& rng);
    Tensor forward(const Tensor& m) const;

    /// Output of branch `index` (0 = the 1x1 branch) before fusion.
    Tensor branch(const Tensor& m, size_t index) const;
    size_t branch_count() const { return rates_.size() + 1; }

    nn::Linear pointwise_branch;
    std::vector<std::unique_ptr<nn::Conv2d>> dilated;
    nn::Linear fuse;

private:
    int channels_;
    std::vector<int> rates_;
    bool pooling_;
};

class Cspm : public nn::Module {
public:
    Cspm(int channels, const CspmConfig& cfg, nn::Rng& rng);
    Tensor forward(const Tensor& m) const;

    CotBlock cot;
    DilatedPyramid pyramid;
};

} // namespace profact
