#include "profact/error.hpp"
#include "profact/losses.hpp"
#include "profact/ops.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

using namespace profact;
using testing_support::check_gradients;
using testing_support::random_tensor;

namespace {
Tensor scalar_map(double v) { return Tensor::full({1, 1, 1, 1}, v); }
} // namespace

TEST(LossConfig, Validation) {
    EXPECT_NO_THROW(LossConfig{}.validate());
    LossConfig c;
    c.lambda = 1.5;
    EXPECT_THROW(c.validate(), ConfigError);
    c = LossConfig{};
    c.gamma = -1;
    EXPECT_THROW(c.validate(), ConfigError);
    c = LossConfig{};
    c.epsilon = 0;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(FocalLoss, SinglePixelValue) {
    // alpha * (1-p)^gamma * -log(p) = 0.5 * 0.25 * ln 2
    EXPECT_NEAR(focal_loss(scalar_map(0.5), scalar_map(1), 0.5, 2).item(), 0.125 * std::log(2.0), 1e-12);
    EXPECT_NEAR(focal_loss(scalar_map(0.5), scalar_map(1), 0.5, 2).item(), 0.08664, 1e-4);
    EXPECT_NEAR(focal_loss(scalar_map(0.2), scalar_map(0), 0.25, 0).item(), -0.75 * std::log(0.8), 1e-12);
}

TEST(FocalLoss, MonotoneInPrediction) {
    double prev1 = 1e9, prev0 = -1;
    for (int i = 1; i < 100; ++i) {
        const double p = i / 100.0;
        const double l1 = focal_loss(scalar_map(p), scalar_map(1), 0.5, 2).item();
        const double l0 = focal_loss(scalar_map(p), scalar_map(0), 0.5, 2).item();
        EXPECT_LT(l1, prev1);
        EXPECT_GT(l0, prev0);
        EXPECT_GE(l1, 0.0);
        EXPECT_GE(l0, 0.0);
        prev1 = l1;
        prev0 = l0;
    }
}

TEST(DiceLoss, HalfPredictionOnFullMask) {
    const Tensor pred = Tensor::full({1, 1, 4, 4}, 0.5);
    const Tensor gt = Tensor::full({1, 1, 4, 4}, 1.0);
    EXPECT_NEAR(dice_loss(pred, gt).item(), 1.0 / 3.0, 1e-6);
    EXPECT_NEAR(dice_loss(Tensor::zeros({1, 1, 4, 4}), Tensor::zeros({1, 1, 4, 4})).item(), 0.0, 1e-12);
}

TEST(DiceLoss, PermutationInvariant) {
    const Tensor pred = random_tensor({1, 1, 6, 6}, 1, 0, 1);
    std::vector<double> g(36);
    for (int i = 0; i < 36; ++i) g[i] = (i * 7) % 3 == 0;
    const Tensor gt = Tensor::from_data({1, 1, 6, 6}, g);
    std::vector<size_t> perm(36);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), std::mt19937_64(2));
    std::vector<double> pp(36), gp(36);
    for (size_t i = 0; i < 36; ++i) {
        pp[i] = pred.data()[perm[i]];
        gp[i] = g[perm[i]];
    }
    EXPECT_NEAR(dice_loss(pred, gt).item(),
                dice_loss(Tensor::from_data({1, 1, 6, 6}, pp), Tensor::from_data({1, 1, 6, 6}, gp)).item(), 1e-12);
}

TEST(TotalLoss, IsSumOfBranchLosses) {
    const Tensor c = random_tensor({2, 1, 5, 5}, 3, 0.01, 0.99);
    const Tensor r = random_tensor({2, 1, 5, 5}, 4, 0.01, 0.99);
    const Tensor gt = Tensor::from_data({2, 1, 5, 5}, std::vector<double>(50, 1.0));
    const LossConfig cfg;
    const LossTerms t = total_loss(c, r, gt, cfg);
    EXPECT_EQ(t.total.item(), t.coarse.item() + t.refined.item());
    EXPECT_EQ(t.coarse.item(), combined_loss(c, gt, cfg).item());
    const double expect = cfg.lambda * focal_loss(r, gt, cfg.alpha, cfg.gamma).item() +
                          (1 - cfg.lambda) * dice_loss(r, gt).item();
    EXPECT_NEAR(t.refined.item(), expect, 1e-15);
}

TEST(TotalLoss, GradientsMatchFiniteDifferences) {
    Tensor c = random_tensor({1, 1, 6, 6}, 5, 0.05, 0.95, true);
    Tensor r = random_tensor({1, 1, 6, 6}, 6, 0.05, 0.95, true);
    std::vector<double> g(36);
    for (int i = 0; i < 36; ++i) g[i] = i % 4 == 0;
    const Tensor gt = Tensor::from_data({1, 1, 6, 6}, g);
    auto loss = [&] { return total_loss(c, r, gt, LossConfig{}).total; };
    for (const auto& s : check_gradients(loss, {c, r}, 20, 7)) EXPECT_LT(s.rel_error, 1e-4) << s.where;
    // Through the logits.
    Tensor logits = random_tensor({1, 1, 6, 6}, 8, -3, 3, true);
    auto via_logits = [&] { return combined_loss(ops::sigmoid(logits), gt, LossConfig{}); };
    for (const auto& s : check_gradients(via_logits, {logits}, 20, 9)) EXPECT_LT(s.rel_error, 1e-4) << s.where;
}

TEST(Losses, MapOverloadsMatchTensorForms) {
    ProbMap p(2, 2, {0.1f, 0.6f, 0.8f, 0.3f});
    BinaryMask m(2, 2, {0, 1, 1, 0});
    const Tensor pt = Tensor::from_data({1, 1, 2, 2}, {0.1f, 0.6f, 0.8f, 0.3f});
    const Tensor mt = Tensor::from_data({1, 1, 2, 2}, {0, 1, 1, 0});
    EXPECT_NEAR(focal_loss(p, m, 0.5, 2), focal_loss(pt, mt, 0.5, 2).item(), 1e-12);
    EXPECT_NEAR(dice_loss(p, m), dice_loss(pt, mt).item(), 1e-12);
    EXPECT_NEAR(combined_loss(p, m, LossConfig{}), combined_loss(pt, mt, LossConfig{}).item(), 1e-12);
}

TEST(Losses, ShapeMismatchThrows) {
    EXPECT_THROW(focal_loss(Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1, 1, 2, 3}), 0.5, 2), ShapeMismatch);
}
