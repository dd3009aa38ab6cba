#pragma once

#include "profact/datamodel.hpp"
#include "profact/mbh.hpp"
#include "profact/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

namespace testing_support {

using profact::Tensor;

struct GradSample {
    std::string where;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
};

inline double rel_error(double a, double n) {
    // Gradients below 1e-6 in magnitude are compared absolutely.
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6});
}

/// Central differences on `samples` randomly chosen scalar entries of
/// `params`, against one backward pass of `loss`.
inline std::vector<GradSample> check_gradients(const std::function<Tensor()>& loss, std::vector<Tensor> params,
                                               int samples, uint64_t seed, double h = 1e-5) {
    for (Tensor& p : params) {
        p.zero_grad();
    }
    Tensor l = loss();
    l.backward();
    int64_t total = 0;
    for (const Tensor& p : params) {
        total += p.numel();
    }
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int64_t> pick(0, total - 1);
    std::vector<GradSample> out;
    for (int s = 0; s < samples; ++s) {
        int64_t flat = pick(rng);
        size_t pi = 0;
        while (flat >= params[pi].numel()) {
            flat -= params[pi].numel();
            ++pi;
        }
        Tensor& p = params[pi];
        const auto k = static_cast<size_t>(flat);
        const double analytic = p.grad().empty() ? 0.0 : p.grad()[k];
        const double orig = p.data()[k];
        double up, down;
        {
            profact::NoGradGuard guard;
            p.mutable_data()[k] = orig + h;
            up = loss().item();
            p.mutable_data()[k] = orig - h;
            down = loss().item();
            p.mutable_data()[k] = orig;
        }
        const double numeric = (up - down) / (2 * h);
        out.push_back({"param " + std::to_string(pi) + "[" + std::to_string(k) + "]", analytic, numeric,
                       rel_error(analytic, numeric)});
    }
    return out;
}

inline Tensor random_tensor(profact::Shape shape, uint64_t seed, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = false) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(static_cast<size_t>(profact::shape_numel(shape)));
    for (double& x : v) {
        x = u(rng);
    }
    return Tensor::from_data(std::move(shape), std::move(v), requires_grad);
}

inline profact::Image random_image(int h, int w, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    std::vector<float> px(static_cast<size_t>(h) * w * 3);
    for (float& v : px) {
        v = u(rng);
    }
    return profact::Image(h, w, std::move(px));
}

inline profact::BinaryMask rect_mask(int h, int w, int y0, int x0, int y1, int x1) {
    std::vector<uint8_t> labels(static_cast<size_t>(h) * w, 0);
    for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
            labels[static_cast<size_t>(y) * w + x] = 1;
        }
    }
    return profact::BinaryMask(h, w, std::move(labels));
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("profact_test_" + std::to_string(::getpid()) + "_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

struct Batch {
    std::vector<profact::Image> images;
    std::vector<profact::BinaryMask> masks;
};

/// Four 128x128 spliced samples used for overfitting checks.
inline Batch overfit_batch() {
    const profact::SourcePool pool = profact::make_synthetic_pool(8, 128, 128, 11);
    Batch b;
    for (size_t i = 0; i < 4; ++i) {
        const profact::ForgerySample s =
            profact::generate_sample(pool.image(i), pool.object_mask(i), pool.image((i + 1) % 8),
                                     profact::ForgeryMode::splice, 100 + i);
        b.images.push_back(s.image);
        b.masks.push_back(s.mask);
    }
    return b;
}

} // namespace testing_support
