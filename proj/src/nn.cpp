#include "profact/nn.hpp"

#include <cmath>

namespace profact::nn {

std::vector<std::pair<std::string, Tensor>> Module::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    collect("", out);
    return out;
}

std::vector<Tensor> Module::parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) {
        out.push_back(t);
    }
    return out;
}

int64_t Module::parameter_count() const {
    int64_t total = 0;
    for (const Tensor& t : parameters()) {
        total += t.numel();
    }
    return total;
}

void Module::zero_grad() {
    for (Tensor& t : parameters()) {
        t.zero_grad();
    }
}

Tensor& Module::register_parameter(std::string name, Tensor& slot, Tensor value) {
    value.set_requires_grad(true);
    slot = std::move(value);
    params_.emplace_back(std::move(name), &slot);
    return slot;
}

void Module::register_module(std::string name, Module& child) {
    children_.emplace_back(std::move(name), &child);
}

void Module::collect(const std::string& prefix,
                     std::vector<std::pair<std::string, Tensor>>& out) const {
    for (const auto& [name, slot] : params_) {
        if (slot->defined()) {
            out.emplace_back(prefix + name, *slot);
        }
    }
    for (const auto& [name, child] : children_) {
        child->collect(prefix + name + ".", out);
    }
}

std::vector<double> trunc_normal(int64_t count, double std, Rng& rng) {
    std::normal_distribution<double> dist(0.0, std);
    std::vector<double> out(static_cast<size_t>(count));
    for (double& v : out) {
        do {
            v = dist(rng);
        } while (std::abs(v) > 2.0 * std);
    }
    return out;
}

Linear::Linear(int64_t in, int64_t out, Rng& rng, bool with_bias) {
    register_parameter("weight", weight, Tensor::from_data({out, in}, trunc_normal(out * in, 0.02, rng)));
    if (with_bias) {
        register_parameter("bias", bias, Tensor::zeros({out}));
    }
}

Tensor Linear::forward(const Tensor& x) const { return ops::linear(x, weight, bias); }

Tensor Linear::forward_channels(const Tensor& x) const { return ops::pointwise(x, weight, bias); }

Conv2d::Conv2d(int64_t in, int64_t out, int kernel, const ops::Conv2dOptions& opt, Rng& rng,
               bool with_bias)
    : opt_(opt) {
    const int64_t per_group = in / opt.groups;
    const double fan_out = static_cast<double>(kernel * kernel * out) / opt.groups;
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_out));
    std::vector<double> w(static_cast<size_t>(out * per_group * kernel * kernel));
    for (double& v : w) {
        v = dist(rng);
    }
    register_parameter("weight", weight, Tensor::from_data({out, per_group, kernel, kernel}, std::move(w)));
    if (with_bias) {
        register_parameter("bias", bias, Tensor::zeros({out}));
    }
}

Tensor Conv2d::forward(const Tensor& x) const { return ops::conv2d(x, weight, bias, opt_); }

LayerNorm::LayerNorm(int64_t channels, double eps) : eps_(eps) {
    register_parameter("weight", gamma, Tensor::full({channels}, 1.0));
    register_parameter("bias", beta, Tensor::zeros({channels}));
}

Tensor LayerNorm::forward(const Tensor& x) const { return ops::layer_norm(x, gamma, beta, eps_); }

Tensor LayerNorm::forward_channels(const Tensor& x) const {
    return ops::layer_norm_channels(x, gamma, beta, eps_);
}

} // namespace profact::nn
