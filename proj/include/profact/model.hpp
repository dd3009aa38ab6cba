#pragma once

#include "profact/cspm.hpp"
#include "profact/datamodel.hpp"
#include "profact/decoder.hpp"
#include "profact/encoder.hpp"
#include "profact/feedback.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>

namespace profact {

struct ModelConfig {
    EncoderConfig encoder;
    CspmConfig cspm;
    HamConfig ham;
    int decoder_channels = 64;

    static ModelConfig tiny();
    static ModelConfig desk();
    /// MiT-B3 backbone, 256-wide decoders, full-resolution blur.
    static ModelConfig full();
    /// Preset by name: tiny, desk or full. Throws ConfigError otherwise.
    static ModelConfig preset(const std::string& name);

    void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Coarse branch: encoder, a CSPM per level, four-level MLP decoder.
class CoarseBranch : public nn::Module {
public:
    CoarseBranch(const ModelConfig& cfg, nn::Rng& rng);

    MitEncoder encoder;
    std::array<std::unique_ptr<Cspm>, 4> cspm;
    MlpDecoder decoder;
};

struct ForwardResult {
    FeaturePyramid pyramid;
    /// CSPM-enhanced encoder levels.
    std::array<Tensor, 4> enhanced;
    Tensor coarse_logits;
    /// [N,1,H,W] coarse probabilities.
    Tensor coarse;
    /// HAM output at half resolution.
    Tensor attention;
    /// Attended stage-2 features fed to the refinement branch.
    Tensor attended;
    FebOutput feb;
    /// [N,1,H,W] refined probabilities.
    Tensor refined;
};

struct Prediction {
    ProbMap coarse;
    ProbMap refined;
};

/// Coarse-to-fine localization network with one feedback refinement pass.
class ProFact : public nn::Module {
public:
    ProFact(const ModelConfig& cfg, uint64_t seed);

    /// images: [N,3,H,W] in [0,1], H and W multiples of 32.
    ForwardResult forward(const Tensor& images) const;

    /// Pads, runs without gradient tracking and crops both maps back.
    Prediction predict(const Image& image) const;

    const ModelConfig& config() const { return cfg_; }

    CoarseBranch clb;
    Ham ham;
    FeedbackBranch feb;

private:
    ModelConfig cfg_;
};

} // namespace profact
