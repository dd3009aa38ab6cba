#include "profact/model.hpp"

#include "profact/error.hpp"

namespace profact {

ModelConfig ModelConfig::tiny() {
    ModelConfig c;
    c.encoder = EncoderConfig::tiny();
    c.decoder_channels = 32;
    return c;
}

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::full() {
    ModelConfig c;
    c.encoder = EncoderConfig::mit_b3();
    c.ham = HamConfig::full();
    c.decoder_channels = 256;
    return c;
}

ModelConfig ModelConfig::preset(const std::string& name) {
    if (name == "tiny") {
        return tiny();
    }
    if (name == "desk") {
        return desk();
    }
    if (name == "full") {
        return full();
    }
    throw ConfigError("unknown model preset '" + name + "'");
}

void ModelConfig::validate() const {
    encoder.validate();
    cspm.validate();
    ham.validate();
    if (decoder_channels <= 0) {
        throw ConfigError("decoder_channels must be positive");
    }
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = {{"encoder", c.encoder},
         {"cspm", c.cspm},
         {"ham", c.ham},
         {"decoder_channels", c.decoder_channels}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    c.encoder = j.at("encoder").get<EncoderConfig>();
    c.cspm = j.at("cspm").get<CspmConfig>();
    c.ham = j.at("ham").get<HamConfig>();
    c.decoder_channels = j.at("decoder_channels").get<int>();
}

namespace {

const ModelConfig& validated(const ModelConfig& cfg) {
    cfg.validate();
    return cfg;
}

std::vector<int> channel_list(const EncoderConfig& enc) {
    return {enc.channels.begin(), enc.channels.end()};
}

std::array<std::unique_ptr<Cspm>, 4> make_cspms(const ModelConfig& cfg, nn::Rng& rng) {
    std::array<std::unique_ptr<Cspm>, 4> out;
    for (size_t i = 0; i < 4; ++i) {
        out[i] = std::make_unique<Cspm>(cfg.encoder.channels[i], cfg.cspm, rng);
    }
    return out;
}

} // namespace

CoarseBranch::CoarseBranch(const ModelConfig& cfg, nn::Rng& rng)
    : encoder(cfg.encoder, rng),
      cspm(make_cspms(cfg, rng)),
      decoder(channel_list(cfg.encoder), cfg.decoder_channels, rng) {
    register_module("encoder", encoder);
    for (size_t i = 0; i < 4; ++i) {
        register_module("cspm" + std::to_string(i + 1), *cspm[i]);
    }
    register_module("decoder", decoder);
}

namespace {

nn::Rng& seeded(nn::Rng& rng, uint64_t seed) {
    rng.seed(seed);
    return rng;
}

thread_local nn::Rng init_rng;

} // namespace

ProFact::ProFact(const ModelConfig& cfg, uint64_t seed)
    : clb(validated(cfg), seeded(init_rng, seed)),
      ham(cfg.ham, init_rng),
      feb(cfg.encoder, cfg.cspm, cfg.decoder_channels, init_rng),
      cfg_(cfg) {
    register_module("clb", clb);
    register_module("feedback.ham", ham);
    register_module("feb", feb);
}

ForwardResult ProFact::forward(const Tensor& images) const {
    ForwardResult r;
    r.pyramid = clb.encoder.forward(images);
    for (size_t i = 0; i < 4; ++i) {
        r.enhanced[i] = clb.cspm[i]->forward(r.pyramid.levels[i]);
    }
    const int64_t h = images.dim(2), w = images.dim(3);
    r.coarse_logits = clb.decoder.forward({r.enhanced.begin(), r.enhanced.end()},
                                          r.enhanced[0].dim(2), r.enhanced[0].dim(3));
    r.coarse = predict_map(r.coarse_logits, h, w);
    r.attention = ham.forward(r.coarse);
    r.attended = feedback_fuse(r.attention, r.enhanced[1]);
    r.feb = feb.forward(r.attended);
    r.refined = predict_map(r.feb.logits, h, w);
    return r;
}

Prediction ProFact::predict(const Image& image) const {
    image.validate();
    PaddedImage padded = pad_to_multiple(image, 32);
    NoGradGuard guard;
    ForwardResult r = forward(image_to_tensor(padded.image));
    Prediction p;
    p.coarse = crop_probmap(probmap_from_tensor(r.coarse), padded.original_height, padded.original_width);
    p.refined = crop_probmap(probmap_from_tensor(r.refined), padded.original_height, padded.original_width);
    return p;
}

} // namespace profact
