#include "profact/checkpoint.hpp"
#include "profact/error.hpp"
#include "profact/mbh.hpp"
#include "profact/trainer.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numbers>

using namespace profact;
using testing_support::temp_dir;

namespace {

StageConfig small_stage(const std::filesystem::path& data, const std::filesystem::path& out) {
    StageConfig c = StageConfig::stage1();
    c.dataset = data;
    c.model = ModelConfig::tiny();
    c.batch_size = 2;
    c.epochs = 3;
    c.crop = 64;
    c.augment.crop = 64;
    c.lr_initial = 5e-4;
    c.validation_ratio = 4;
    c.out_dir = out;
    c.seed = 3;
    return c;
}

std::filesystem::path small_dataset(const std::string& name, size_t n = 8) {
    const auto dir = temp_dir(name);
    generate_dataset(make_synthetic_pool(4, 96, 96, 5), dir, n, 0.5, 21);
    return dir;
}

} // namespace

TEST(Schedule, CosineEndpointsAndMidpoint) {
    EXPECT_DOUBLE_EQ(cosine_lr(0, 11, 1e-4), 1e-4);
    EXPECT_NEAR(cosine_lr(10, 11, 1e-4), 0.0, 1e-20);
    EXPECT_NEAR(cosine_lr(5, 11, 1e-4), 0.5e-4, 1e-18);
    EXPECT_NEAR(cosine_lr(3, 11, 2.0), 0.5 * 2.0 * (1 + std::cos(std::numbers::pi * 0.3)), 1e-15);
    EXPECT_EQ(cosine_lr(0, 1, 3.0), 3.0);
    double prev = 1e9;
    for (int s = 0; s < 20; ++s) {
        EXPECT_LE(cosine_lr(s, 20, 1.0), prev);
        prev = cosine_lr(s, 20, 1.0);
    }
}

TEST(AdamW, FirstStepMatchesClosedForm) {
    Tensor w = Tensor::from_data({2, 2}, {0.5, -1.0, 2.0, 0.0}, true);
    Tensor b = Tensor::from_data({2}, {1.0, -2.0}, true);
    ops::add(ops::sum(ops::mul(w, Tensor::from_data({2, 2}, {3, -4, 0.5, 2}))), ops::scale(ops::sum(ops::mul(b, b)), 0.5))
        .backward();
    const std::vector<double> gw(w.grad().begin(), w.grad().end()), gb(b.grad().begin(), b.grad().end());
    const std::vector<double> w0(w.data().begin(), w.data().end()), b0(b.data().begin(), b.data().end());
    AdamWConfig cfg;
    cfg.weight_decay = 0.1;
    AdamW opt({{"w", w}, {"b", b}}, cfg);
    const double lr = 0.01;
    opt.step(lr);
    // After bias correction the first update is g / (|g| + eps).
    for (int i = 0; i < 4; ++i) {
        const double expect = w0[i] - lr * cfg.weight_decay * w0[i] - lr * gw[i] / (std::abs(gw[i]) + cfg.eps);
        EXPECT_NEAR(w.data()[i], expect, 1e-12);
    }
    for (int i = 0; i < 2; ++i) {
        EXPECT_NEAR(b.data()[i], b0[i] - lr * gb[i] / (std::abs(gb[i]) + cfg.eps), 1e-12);
    }
    EXPECT_EQ(opt.steps(), 1);
}

TEST(AdamW, SkipsParametersWithoutGradient) {
    Tensor w = Tensor::from_data({1, 2}, {1.0, 2.0}, true);
    AdamW opt({{"w", w}});
    opt.step(0.1);
    EXPECT_EQ(w.data()[0], 1.0);
}

TEST(ClipGradNorm, RescalesAboveLimit) {
    Tensor a = Tensor::from_data({2}, {0, 0}, true);
    Tensor b = Tensor::from_data({1}, {0}, true);
    ops::sum(a).backward();
    ops::sum(ops::scale(b, 2.0)).backward();
    // Gradients (1, 1) and (2): norm sqrt(6).
    EXPECT_NEAR(clip_grad_norm({a, b}, 1.0), std::sqrt(6.0), 1e-12);
    double n = 0;
    for (double g : a.grad()) n += g * g;
    for (double g : b.grad()) n += g * g;
    EXPECT_NEAR(std::sqrt(n), 1.0, 1e-12);
    EXPECT_NEAR(clip_grad_norm({a, b}, 5.0), 1.0, 1e-12);
}

TEST(StageConfig, PresetsAndParsing) {
    const StageConfig s1 = StageConfig::stage1(), s2 = StageConfig::stage2();
    EXPECT_EQ(s1.batch_size, 16);
    EXPECT_EQ(s1.lr_initial, 1e-4);
    EXPECT_EQ(s1.epochs, 50);
    EXPECT_EQ(s1.crop, 512);
    EXPECT_EQ(s2.batch_size, 4);
    EXPECT_EQ(s2.lr_initial, 1e-5);
    EXPECT_EQ(s2.epochs, 5);
    EXPECT_EQ(s2.crop, 1024);
    EXPECT_EQ(s2.init, StageInit::from_checkpoint);
    const StageConfig c = stage_config_from_json(
        {{"epochs", 2}, {"model", "tiny"}, {"loss", {{"gamma", 1.5}}}, {"crop", 64}}, StageConfig::stage1());
    EXPECT_EQ(c.epochs, 2);
    EXPECT_EQ(c.model.decoder_channels, ModelConfig::tiny().decoder_channels);
    EXPECT_EQ(c.loss.gamma, 1.5);
    EXPECT_EQ(c.batch_size, 16);
    EXPECT_THROW(stage_config_from_json({{"epoch", 2}}, s1), ConfigError);
    EXPECT_THROW(stage_config_from_json({{"crop", 100}}, s1), ConfigError);
    const StageConfig back = stage_config_from_json(stage_config_to_json(c), StageConfig::stage2());
    EXPECT_EQ(stage_config_to_json(back), stage_config_to_json(c));
}

TEST(StageConfig, LoadsTomlFiles) {
    const auto dir = temp_dir("stage_toml");
    std::ofstream(dir / "s.toml") << "epochs = 3\nmodel = \"tiny\"\n[loss]\nlambda = 0.25\n";
    const StageConfig c = load_stage_config(dir / "s.toml", 2);
    EXPECT_EQ(c.epochs, 3);
    EXPECT_EQ(c.loss.lambda, 0.25);
    EXPECT_EQ(c.lr_initial, 1e-5);
}

TEST(TrainStage, KeepsBestValidationEpoch) {
    const auto data = small_dataset("train_data");
    const auto out = temp_dir("train_out");
    ProFact model(ModelConfig::tiny(), 1);
    const StageConfig cfg = small_stage(data, out);
    const StageResult r = train_stage(model, cfg);
    ASSERT_EQ(r.epochs.size(), 3u);
    double best = -1;
    int best_epoch = -1;
    for (const auto& e : r.epochs) {
        EXPECT_TRUE(std::isfinite(e.mean_loss));
        if (e.val_iou > best) {
            best = e.val_iou;
            best_epoch = e.epoch;
        }
    }
    EXPECT_EQ(r.best_iou, best);
    EXPECT_EQ(r.best_epoch, best_epoch);
    EXPECT_TRUE(std::filesystem::exists(r.best_checkpoint));
    EXPECT_TRUE(std::filesystem::exists(r.last_checkpoint));
    EXPECT_EQ(weights_hash(model), r.best_hash);
    EXPECT_EQ(weights_hash(*load_checkpoint(r.best_checkpoint).model), r.best_hash);
    std::ifstream log(r.log_path);
    std::string line;
    int steps = 0;
    while (std::getline(log, line)) steps += nlohmann::json::parse(line).contains("step");
    EXPECT_EQ(steps, r.steps);
}

TEST(TrainStage, NonFiniteWeightsAbort) {
    const auto data = small_dataset("nan_data", 4);
    ProFact model(ModelConfig::tiny(), 2);
    model.clb.decoder.named_parameters()[0].second.mutable_data()[0] = std::nan("");
    EXPECT_THROW(train_stage(model, small_stage(data, temp_dir("nan_out"))), NonFiniteLoss);
}

TEST(TrainStage, TwoStageHandoff) {
    const auto data = small_dataset("two_data", 6);
    const auto out = temp_dir("two_out");
    StageConfig s1 = small_stage(data, out / "stage1");
    s1.epochs = 1;
    StageConfig s2 = StageConfig::stage2();
    s2 = stage_config_from_json(stage_config_to_json(s1), s2);
    s2.init = StageInit::from_checkpoint;
    s2.init_checkpoint.clear();
    s2.lr_initial = 1e-5;
    s2.out_dir = out / "stage2";
    const TwoStageResult r = two_stage_train(s1, s2);
    ASSERT_TRUE(r.stage2.has_value());
    EXPECT_EQ(r.stage2_initial_hash, r.stage1.best_hash);
    EXPECT_EQ(r.stage2->initial_hash, r.stage1.best_hash);
    EXPECT_TRUE(std::filesystem::exists(r.final_checkpoint));
}

TEST(Overfit, LossTraceIsDeterministic) {
    const auto batch = testing_support::overfit_batch();
    OverfitConfig cfg;
    cfg.max_steps = 4;
    cfg.target_f1 = 2.0;
    ProFact a(ModelConfig::tiny(), 1), b(ModelConfig::tiny(), 1);
    const OverfitReport ra = overfit_sanity(a, batch.images, batch.masks, cfg);
    const OverfitReport rb = overfit_sanity(b, batch.images, batch.masks, cfg);
    ASSERT_EQ(ra.losses.size(), 4u);
    EXPECT_EQ(ra.losses, rb.losses);
    EXPECT_FALSE(ra.reached);
    EXPECT_EQ(ra.steps_to_target, -1);
}

TEST(Overfit, LossDecreasesOnMostEarlySteps) {
    const auto batch = testing_support::overfit_batch();
    OverfitConfig cfg;
    cfg.max_steps = 101;
    cfg.target_f1 = 2.0;
    ProFact model(ModelConfig::tiny(), 1);
    const OverfitReport r = overfit_sanity(model, batch.images, batch.masks, cfg);
    ASSERT_EQ(r.losses.size(), 101u);
    int decreases = 0;
    for (size_t i = 1; i < r.losses.size(); ++i) decreases += r.losses[i] < r.losses[i - 1];
    EXPECT_GE(decreases, 80);
}
