#pragma once

#include "profact/datamodel.hpp"
#include "profact/tensor.hpp"

namespace profact {

struct LossConfig {
    /// Weight of focal against dice.
    double lambda = 0.5;
    double alpha = 0.5;
    double gamma = 2.0;
    double epsilon = 1e-6;

    /// Throws ConfigError when a field leaves its range.
    void validate() const;
};

/// Mean over pixels of the two-sided focal term. pred and gt share a shape;
/// gt holds 0/1. Predictions are clamped to [eps, 1-eps].
Tensor focal_loss(const Tensor& pred, const Tensor& gt, double alpha, double gamma,
                  double epsilon = 1e-6);
/// 1 - (2 sum(y p) + eps) / (sum(y + p) + eps) per sample, averaged over the batch.
Tensor dice_loss(const Tensor& pred, const Tensor& gt, double epsilon = 1e-6);
/// lambda * focal + (1 - lambda) * dice.
Tensor combined_loss(const Tensor& pred, const Tensor& gt, const LossConfig& cfg);

struct LossTerms {
    Tensor total;
    Tensor coarse;
    Tensor refined;
};

/// Sum of the combined loss over the coarse and refined maps.
LossTerms total_loss(const Tensor& coarse, const Tensor& refined, const Tensor& gt,
                     const LossConfig& cfg);

double focal_loss(const ProbMap& pred, const BinaryMask& gt, double alpha, double gamma,
                  double epsilon = 1e-6);
double dice_loss(const ProbMap& pred, const BinaryMask& gt, double epsilon = 1e-6);
double combined_loss(const ProbMap& pred, const BinaryMask& gt, const LossConfig& cfg);

} // namespace profact
