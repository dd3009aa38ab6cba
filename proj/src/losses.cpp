#include "profact/losses.hpp"

#include "profact/error.hpp"
#include "profact/ops.hpp"

#include <algorithm>
#include <cmath>

namespace profact {

void LossConfig::validate() const {
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
        throw ConfigError("loss lambda must lie in [0,1]");
    }
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        throw ConfigError("loss alpha must lie in [0,1]");
    }
    if (!(gamma >= 0.0)) {
        throw ConfigError("loss gamma must be non-negative");
    }
    if (!(epsilon > 0.0)) {
        throw ConfigError("loss epsilon must be positive");
    }
}

namespace {

void check_pair(const Tensor& pred, const Tensor& gt, const char* who) {
    if (pred.shape() != gt.shape() || pred.rank() < 1 || pred.numel() == 0) {
        throw ShapeMismatch(std::string(who) + ": prediction " + shape_str(pred.shape()) +
                            " vs ground truth " + shape_str(gt.shape()));
    }
}

// x^e with 0^0 = 1 and the e = 0 derivative factor handled by the caller.
double power(double x, double e) { return e == 0.0 ? 1.0 : std::pow(x, e); }

} // namespace

Tensor focal_loss(const Tensor& pred, const Tensor& gt, double alpha, double gamma, double epsilon) {
    check_pair(pred, gt, "focal loss");
    auto p = pred.data();
    auto y = gt.data();
    const size_t n = p.size();
    std::vector<double> dloss(n);
    double total = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const bool clamped = p[i] < epsilon || p[i] > 1.0 - epsilon;
        const double q = std::clamp(p[i], epsilon, 1.0 - epsilon);
        double value, slope;
        if (y[i] > 0.5) {
            value = -alpha * power(1.0 - q, gamma) * std::log(q);
            slope = alpha * ((gamma == 0.0 ? 0.0 : gamma * power(1.0 - q, gamma - 1.0) * std::log(q)) -
                             power(1.0 - q, gamma) / q);
        } else {
            value = -(1.0 - alpha) * power(q, gamma) * std::log(1.0 - q);
            slope = -(1.0 - alpha) *
                    ((gamma == 0.0 ? 0.0 : gamma * power(q, gamma - 1.0) * std::log(1.0 - q)) -
                     power(q, gamma) / (1.0 - q));
        }
        total += value;
        dloss[i] = clamped ? 0.0 : slope / static_cast<double>(n);
    }
    return detail::make_result({}, {total / static_cast<double>(n)}, {pred},
                               [pn = pred.node(), dloss = std::move(dloss)](detail::Node& out) {
                                   double* g = detail::grad_target(pn);
                                   if (!g) {
                                       return;
                                   }
                                   const double up = out.grad[0];
                                   for (size_t i = 0; i < dloss.size(); ++i) {
                                       g[i] += up * dloss[i];
                                   }
                               });
}

Tensor dice_loss(const Tensor& pred, const Tensor& gt, double epsilon) {
    check_pair(pred, gt, "dice loss");
    auto p = pred.data();
    auto y = gt.data();
    const int64_t batch = pred.dim(0);
    const size_t per = p.size() / static_cast<size_t>(batch);
    std::vector<double> dloss(p.size());
    double total = 0.0;
    for (int64_t b = 0; b < batch; ++b) {
        const size_t off = static_cast<size_t>(b) * per;
        double inter = 0.0, sum = 0.0;
        for (size_t i = off; i < off + per; ++i) {
            inter += y[i] * p[i];
            sum += y[i] + p[i];
        }
        const double num = 2.0 * inter + epsilon;
        const double den = sum + epsilon;
        total += 1.0 - num / den;
        for (size_t i = off; i < off + per; ++i) {
            dloss[i] = -(2.0 * y[i] * den - num) / (den * den) / static_cast<double>(batch);
        }
    }
    return detail::make_result({}, {total / static_cast<double>(batch)}, {pred},
                               [pn = pred.node(), dloss = std::move(dloss)](detail::Node& out) {
                                   double* g = detail::grad_target(pn);
                                   if (!g) {
                                       return;
                                   }
                                   const double up = out.grad[0];
                                   for (size_t i = 0; i < dloss.size(); ++i) {
                                       g[i] += up * dloss[i];
                                   }
                               });
}

Tensor combined_loss(const Tensor& pred, const Tensor& gt, const LossConfig& cfg) {
    cfg.validate();
    Tensor focal = focal_loss(pred, gt, cfg.alpha, cfg.gamma, cfg.epsilon);
    Tensor dice = dice_loss(pred, gt, cfg.epsilon);
    return ops::add(ops::scale(focal, cfg.lambda), ops::scale(dice, 1.0 - cfg.lambda));
}

LossTerms total_loss(const Tensor& coarse, const Tensor& refined, const Tensor& gt,
                     const LossConfig& cfg) {
    LossTerms t;
    t.coarse = combined_loss(coarse, gt, cfg);
    t.refined = combined_loss(refined, gt, cfg);
    t.total = ops::add(t.coarse, t.refined);
    return t;
}

double focal_loss(const ProbMap& pred, const BinaryMask& gt, double alpha, double gamma,
                  double epsilon) {
    NoGradGuard guard;
    return focal_loss(probmap_to_tensor(pred), masks_to_tensor(std::span(&gt, 1)), alpha, gamma, epsilon)
        .item();
}

double dice_loss(const ProbMap& pred, const BinaryMask& gt, double epsilon) {
    NoGradGuard guard;
    return dice_loss(probmap_to_tensor(pred), masks_to_tensor(std::span(&gt, 1)), epsilon).item();
}

double combined_loss(const ProbMap& pred, const BinaryMask& gt, const LossConfig& cfg) {
    NoGradGuard guard;
    return combined_loss(probmap_to_tensor(pred), masks_to_tensor(std::span(&gt, 1)), cfg).item();
}

} // namespace profact
