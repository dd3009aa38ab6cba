#pragma once

#include "profact/cspm.hpp"
#include "profact/decoder.hpp"
#include "profact/encoder.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <memory>

namespace profact {

struct HamConfig {
    int down_kernel = 3;
    int down_stride = 2;
    int down_padding = 1;
    int gaussian_kernel_size = 7;
    double gaussian_sigma = 1.0;

    static HamConfig desk();
    /// Large blur for full-resolution inputs (31 px, sigma 4).
    static HamConfig full();
    /// Throws ConfigError for an even or non-positive kernel or sigma <= 0.
    void validate() const;
};

void to_json(nlohmann::json& j, const HamConfig& c);
void from_json(const nlohmann::json& j, HamConfig& c);

/// Normalized 2-D Gaussian kernel of odd `size`, row-major.
std::vector<double> gaussian_kernel(int size, double sigma);

/// Intermediate maps of one attention pass, all [N,1,h,w].
struct HamTrace {
    Tensor downsampled;
    Tensor blurred;
    Tensor normalized;
    Tensor output;
};

/// Holistic attention: learned strided downsample of the coarse map, a fixed
/// Gaussian blur rescaled to peak 1, and an element-wise max with the
/// downsampled map, which widens the region the coarse map covers.
class Ham : public nn::Module {
public:
    Ham(const HamConfig& cfg, nn::Rng& rng);
    /// coarse: [N,1,H,W] probabilities.
    Tensor forward(const Tensor& coarse) const;
    HamTrace trace(const Tensor& coarse) const;

    const HamConfig& config() const { return cfg_; }

    nn::Conv2d down;

private:
    HamConfig cfg_;
    Tensor blur_;
};

/// Resizes attention [N,1,h,w] to the spatial size of features [N,C,H,W] and
/// multiplies it into every channel.
Tensor feedback_fuse(const Tensor& attention, const Tensor& features);

struct FebOutput {
    Tensor x3;
    Tensor x4;
    /// [N,1,h/4,w/4] refined logits.
    Tensor logits;
};

/// Refinement branch: fresh stage-3/4 transformer stages on the attended
/// stage-2 features, a CSPM per level and a three-level MLP decoder.
class FeedbackBranch : public nn::Module {
public:
    FeedbackBranch(const EncoderConfig& enc, const CspmConfig& cspm, int decoder_channels,
                   nn::Rng& rng);
    /// x2: [N,C2,H/8,W/8] attended features.
    FebOutput forward(const Tensor& x2) const;

private:
    std::unique_ptr<EncoderStage> stage3_;
    std::unique_ptr<EncoderStage> stage4_;
    std::array<std::unique_ptr<Cspm>, 3> cspm_;
    std::unique_ptr<MlpDecoder> decoder_;
};

} // namespace profact
