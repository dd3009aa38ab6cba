#include "profact/cspm.hpp"

#include "profact/error.hpp"

#include <algorithm>
#include <set>
#include <string>

namespace profact {

void CspmConfig::validate() const {
    if (dilation_rates.empty()) {
        throw ConfigError("cspm: at least one dilation rate required");
    }
    std::set<int> seen;
    for (int r : dilation_rates) {
        if (r <= 0) {
            throw ConfigError("cspm: dilation rate " + std::to_string(r) + " is not positive");
        }
        if (!seen.insert(r).second) {
            throw ConfigError("cspm: dilation rate " + std::to_string(r) + " repeated");
        }
    }
    if (cot_kernel <= 0 || cot_kernel % 2 == 0) {
        throw ConfigError("cspm: cot_kernel must be odd and positive");
    }
    if (reduction <= 0) {
        throw ConfigError("cspm: reduction must be positive");
    }
}

void to_json(nlohmann::json& j, const CspmConfig& c) {
    j = {{"dilation_rates", c.dilation_rates},
         {"cot_kernel", c.cot_kernel},
         {"reduction", c.reduction},
         {"attention_softmax", c.attention_softmax},
         {"pooling_pyramid", c.pooling_pyramid}};
}

void from_json(const nlohmann::json& j, CspmConfig& c) {
    c.dilation_rates = j.at("dilation_rates").get<std::vector<int>>();
    c.cot_kernel = j.at("cot_kernel").get<int>();
    c.reduction = j.at("reduction").get<int>();
    c.attention_softmax = j.value("attention_softmax", false);
    c.pooling_pyramid = j.value("pooling_pyramid", false);
}

int cot_groups(int channels) {
    for (int g = std::min(channels, 4); g > 1; --g) {
        if (channels % g == 0) {
            return g;
        }
    }
    return 1;
}

namespace {

void check_input(const Tensor& m, int channels, const char* who) {
    if (m.rank() != 4 || m.dim(1) != channels) {
        throw ShapeMismatch(std::string(who) + ": expected [N," + std::to_string(channels) +
                            ",H,W], got " + shape_str(m.shape()));
    }
}

// A single hidden channel would make the layer norm output constant.
int hidden_width(int channels, int reduction) { return std::max(2, channels / reduction); }

const CspmConfig& validated(const CspmConfig& cfg) {
    cfg.validate();
    return cfg;
}

} // namespace

CotBlock::CotBlock(int channels, const CspmConfig& cfg, nn::Rng& rng)
    : key_conv(channels, channels, cfg.cot_kernel,
               ops::Conv2dOptions{1, cfg.cot_kernel / 2, 1, cot_groups(channels)}, rng),
      theta(2 * channels, hidden_width(channels, cfg.reduction), rng),
      theta_norm(hidden_width(channels, cfg.reduction)),
      delta(hidden_width(channels, cfg.reduction), channels, rng),
      value(channels, channels, rng),
      channels_(channels),
      softmax_(cfg.attention_softmax) {
    register_module("key_conv", key_conv);
    register_module("theta", theta);
    register_module("theta_norm", theta_norm);
    register_module("delta", delta);
    register_module("value", value);
}

Tensor CotBlock::static_context(const Tensor& m) const {
    check_input(m, channels_, "cot block");
    return key_conv.forward(m);
}

Tensor CotBlock::forward(const Tensor& m) const {
    Tensor s = static_context(m);
    Tensor hidden = ops::gelu(theta_norm.forward_channels(theta.forward_channels(ops::concat_channels({s, m}))));
    Tensor attention = delta.forward_channels(hidden);
    if (softmax_) {
        attention = ops::from_tokens(ops::softmax(ops::to_tokens(attention)), m.dim(2), m.dim(3));
    }
    return ops::add(s, ops::mul(attention, value.forward_channels(m)));
}

DilatedPyramid::DilatedPyramid(int channels, const CspmConfig& cfg, nn::Rng& rng)
    : pointwise_branch(channels, channels, rng),
      fuse(static_cast<int64_t>(cfg.dilation_rates.size() + 1) * channels, channels, rng),
      channels_(channels),
      rates_(cfg.dilation_rates),
      pooling_(cfg.pooling_pyramid) {
    register_module("branch0", pointwise_branch);
    if (!pooling_) {
        for (size_t i = 0; i < rates_.size(); ++i) {
            const int r = rates_[i];
            dilated.push_back(std::make_unique<nn::Conv2d>(channels, channels, 3,
                                                           ops::Conv2dOptions{1, r, r, 1}, rng));
            register_module("branch" + std::to_string(i + 1), *dilated.back());
        }
    }
    register_module("fuse", fuse);
}

Tensor DilatedPyramid::branch(const Tensor& m, size_t index) const {
    check_input(m, channels_, "dilated pyramid");
    if (index == 0) {
        return pointwise_branch.forward_channels(m);
    }
    const int r = rates_.at(index - 1);
    if (pooling_) {
        return ops::max_pool2d(m, 2 * r + 1, r);
    }
    return dilated[index - 1]->forward(m);
}

Tensor DilatedPyramid::forward(const Tensor& m) const {
    std::vector<Tensor> outs;
    outs.reserve(branch_count());
    for (size_t i = 0; i < branch_count(); ++i) {
        outs.push_back(branch(m, i));
    }
    return fuse.forward_channels(ops::concat_channels(outs));
}

Cspm::Cspm(int channels, const CspmConfig& cfg, nn::Rng& rng)
    : cot(channels, validated(cfg), rng), pyramid(channels, cfg, rng) {
    register_module("cot", cot);
    register_module("pyramid", pyramid);
}

Tensor Cspm::forward(const Tensor& m) const { return pyramid.forward(cot.forward(m)); }

} // namespace profact
