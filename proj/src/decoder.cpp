#include "profact/decoder.hpp"

#include "profact/error.hpp"

#include <string>

namespace profact {

MlpDecoder::MlpDecoder(const std::vector<int>& level_channels, int unified_channels, nn::Rng& rng)
    : unified_(unified_channels), level_channels_(level_channels) {
    if (level_channels.empty() || unified_channels <= 0) {
        throw ConfigError("decoder needs at least one level and a positive width");
    }
    for (size_t i = 0; i < level_channels.size(); ++i) {
        projections_.push_back(std::make_unique<nn::Linear>(level_channels[i], unified_channels, rng));
        register_module("proj" + std::to_string(i + 1), *projections_.back());
    }
    const auto k = static_cast<int64_t>(level_channels.size());
    fuse1_ = std::make_unique<nn::Linear>(k * unified_channels, unified_channels, rng);
    fuse2_ = std::make_unique<nn::Linear>(unified_channels, 1, rng);
    register_module("fuse1", *fuse1_);
    register_module("fuse2", *fuse2_);
}

Tensor MlpDecoder::unify_level(size_t index, const Tensor& x, int64_t h, int64_t w) const {
    if (index >= projections_.size() || x.rank() != 4 || x.dim(1) != level_channels_[index]) {
        throw ShapeMismatch("decoder level " + std::to_string(index + 1) + " got " +
                            shape_str(x.shape()));
    }
    return ops::resize_bilinear(projections_[index]->forward_channels(x), h, w);
}

Tensor MlpDecoder::fuse(const std::vector<Tensor>& unified) const {
    if (unified.size() != projections_.size()) {
        throw ShapeMismatch("decoder expects " + std::to_string(projections_.size()) +
                            " levels, got " + std::to_string(unified.size()));
    }
    for (const Tensor& t : unified) {
        if (t.shape() != unified.front().shape() || t.dim(1) != unified_) {
            throw ShapeMismatch("decoder levels differ in shape: " + shape_str(t.shape()) +
                                " vs " + shape_str(unified.front().shape()));
        }
    }
    Tensor hidden = ops::gelu(fuse1_->forward_channels(ops::concat_channels(unified)));
    return fuse2_->forward_channels(hidden);
}

Tensor MlpDecoder::forward(const std::vector<Tensor>& levels, int64_t h, int64_t w) const {
    if (levels.size() != projections_.size()) {
        throw ShapeMismatch("decoder expects " + std::to_string(projections_.size()) +
                            " levels, got " + std::to_string(levels.size()));
    }
    std::vector<Tensor> unified;
    unified.reserve(levels.size());
    for (size_t i = 0; i < levels.size(); ++i) {
        unified.push_back(unify_level(i, levels[i], h, w));
    }
    return fuse(unified);
}

Tensor predict_map(const Tensor& logits, int64_t out_h, int64_t out_w) {
    if (logits.rank() != 4 || logits.dim(1) != 1) {
        throw ShapeMismatch("predict_map expects [N,1,h,w] logits, got " + shape_str(logits.shape()));
    }
    return ops::sigmoid(ops::resize_bilinear(logits, out_h, out_w));
}

} // namespace profact
