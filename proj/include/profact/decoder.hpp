#pragma once

#include "profact/nn.hpp"

#include <memory>
#include <vector>

namespace profact {

/// All-MLP fusion decoder: per-level channel projection to a shared width,
/// bilinear upsampling to a common grid, concatenation, then two per-pixel
/// linear layers (GELU between) down to one logit channel.
class MlpDecoder : public nn::Module {
public:
    MlpDecoder(const std::vector<int>& level_channels, int unified_channels, nn::Rng& rng);

    /// Projects level `index` to the unified width and resizes it to (h, w).
    Tensor unify_level(size_t index, const Tensor& x, int64_t h, int64_t w) const;
    /// Concatenated unified levels -> [N,1,h,w] logits.
    Tensor fuse(const std::vector<Tensor>& unified) const;
    /// unify_level on every level followed by fuse.
    Tensor forward(const std::vector<Tensor>& levels, int64_t h, int64_t w) const;

    size_t level_count() const { return projections_.size(); }
    int unified_channels() const { return unified_; }

private:
    int unified_;
    std::vector<int> level_channels_;
    std::vector<std::unique_ptr<nn::Linear>> projections_;
    std::unique_ptr<nn::Linear> fuse1_;
    std::unique_ptr<nn::Linear> fuse2_;
};

/// Bilinear upsampling of [N,1,h,w] logits to (out_h, out_w) followed by a sigmoid.
Tensor predict_map(const Tensor& logits, int64_t out_h, int64_t out_w);

} // namespace profact
