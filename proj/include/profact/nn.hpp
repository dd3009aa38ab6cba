#pragma once

#include "profact/ops.hpp"
#include "profact/tensor.hpp"

#include <random>
#include <string>
#include <utility>
#include <vector>

namespace profact::nn {

using Rng = std::mt19937_64;

/// Owner of named parameters and child modules.
///
/// Modules are neither copyable nor movable: children register themselves by
/// address, so the tree must stay put once built. Hold models by unique_ptr.
class Module {
public:
    Module() = default;
    Module(const Module&) = delete;
    Module& operator=(const Module&) = delete;
    virtual ~Module() = default;

    /// Parameters of this module and all descendants, as "child.sub.name".
    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
    std::vector<Tensor> parameters() const;
    int64_t parameter_count() const;
    void zero_grad();

protected:
    Tensor& register_parameter(std::string name, Tensor& slot, Tensor value);
    void register_module(std::string name, Module& child);

private:
    void collect(const std::string& prefix,
                 std::vector<std::pair<std::string, Tensor>>& out) const;

    std::vector<std::pair<std::string, Tensor*>> params_;
    std::vector<std::pair<std::string, Module*>> children_;
};

/// Truncated normal N(0, std) clipped at two standard deviations.
std::vector<double> trunc_normal(int64_t count, double std, Rng& rng);

/// Dense layer over the last axis; weight initialized trunc-normal(0.02), bias zero.
class Linear : public Module {
public:
    Linear(int64_t in, int64_t out, Rng& rng, bool bias = true);
    Tensor forward(const Tensor& x) const;
    /// Same weights applied per pixel to x[N,C,H,W].
    Tensor forward_channels(const Tensor& x) const;

    Tensor weight;
    Tensor bias;
};

/// 2-D convolution; weight ~ N(0, sqrt(2 / fan_out)), bias zero.
class Conv2d : public Module {
public:
    Conv2d(int64_t in, int64_t out, int kernel, const ops::Conv2dOptions& opt, Rng& rng,
           bool bias = true);
    Tensor forward(const Tensor& x) const;
    const ops::Conv2dOptions& options() const { return opt_; }

    Tensor weight;
    Tensor bias;

private:
    ops::Conv2dOptions opt_;
};

class LayerNorm : public Module {
public:
    explicit LayerNorm(int64_t channels, double eps = 1e-6);
    /// Normalizes the last axis of a token tensor.
    Tensor forward(const Tensor& x) const;
    /// Normalizes the channel axis of x[N,C,H,W] per pixel.
    Tensor forward_channels(const Tensor& x) const;

    Tensor gamma;
    Tensor beta;

private:
    double eps_;
};

} // namespace profact::nn
