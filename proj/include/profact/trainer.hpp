#pragma once

#include "profact/augment.hpp"
#include "profact/losses.hpp"
#include "profact/model.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace profact {

/// Adam with decoupled weight decay. Decay applies only to tensors of rank > 1
/// (weights), never to biases or normalization gains.
struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

class AdamW {
public:
    AdamW(std::vector<std::pair<std::string, Tensor>> params, AdamWConfig cfg = {});
    void step(double lr);
    void zero_grad();
    int64_t steps() const { return t_; }

private:
    std::vector<std::pair<std::string, Tensor>> params_;
    std::vector<std::vector<double>> m_, v_;
    AdamWConfig cfg_;
    int64_t t_ = 0;
};

/// Global L2 norm of all gradients before clipping; rescales them to
/// `max_norm` when larger. Parameters without a gradient are skipped.
double clip_grad_norm(const std::vector<Tensor>& params, double max_norm);

/// Half-cosine from lr0 at step 0 to 0 at step total_steps - 1.
double cosine_lr(int64_t step, int64_t total_steps, double lr0);

enum class StageInit { fresh, from_checkpoint };

struct StageConfig {
    /// Dataset root holding index.jsonl.
    std::filesystem::path dataset;
    int batch_size = 16;
    double lr_initial = 1e-4;
    int epochs = 50;
    int crop = 512;
    StageInit init = StageInit::fresh;
    /// Weights for init = from_checkpoint. Empty in stage 2 of a two-stage run
    /// means "the stage-1 best".
    std::filesystem::path init_checkpoint;
    /// Optional pretrained encoder archive for fresh starts.
    std::filesystem::path backbone;
    std::filesystem::path backbone_key_map;
    ModelConfig model = ModelConfig::desk();
    LossConfig loss;
    AugmentConfig augment;
    AdamWConfig optimizer;
    double grad_clip = 1.0;
    uint64_t seed = 0;
    int workers = 1;
    /// One entry in `validation_ratio` goes to validation.
    int validation_ratio = 10;
    double threshold = 0.5;
    /// 0 = every batch of the epoch.
    int max_steps_per_epoch = 0;
    /// Checkpoints and train_log.jsonl.
    std::filesystem::path out_dir = "runs/stage";

    static StageConfig stage1();
    static StageConfig stage2();
    void validate() const;
};

/// Keys absent from `j` keep the preset's value. Unknown keys throw ConfigError.
StageConfig stage_config_from_json(const nlohmann::json& j, StageConfig base);
/// TOML or JSON file on top of the stage preset (1 or 2).
StageConfig load_stage_config(const std::filesystem::path& path, int stage);
nlohmann::json stage_config_to_json(const StageConfig& c);

struct EpochRecord {
    int epoch = 0;
    double mean_loss = 0.0;
    double val_iou = 0.0;
    double val_f1 = 0.0;
};

struct StageResult {
    std::filesystem::path best_checkpoint;
    std::filesystem::path last_checkpoint;
    std::filesystem::path log_path;
    int best_epoch = -1;
    double best_iou = -1.0;
    std::vector<EpochRecord> epochs;
    std::string initial_hash;
    std::string best_hash;
    int64_t steps = 0;
};

/// Trains on the hash-split training part of the index and keeps the
/// checkpoint with the highest validation IoU of the refined map. On return
/// the model holds the best weights. Throws DataUnavailable or NonFiniteLoss.
StageResult train_stage(ProFact& model, const StageConfig& cfg);

/// Builds the stage's starting model: from a checkpoint, or fresh with the
/// configured seed and an optional backbone import.
std::unique_ptr<ProFact> initial_model(const StageConfig& cfg);

struct TwoStageResult {
    StageResult stage1;
    std::optional<StageResult> stage2;
    /// Weights hash of the model when stage 2 started.
    std::string stage2_initial_hash;
    std::filesystem::path final_checkpoint;
};

/// Stage 1 from scratch, then (if given) stage 2 from the stage-1 best.
TwoStageResult two_stage_train(const StageConfig& stage1, const std::optional<StageConfig>& stage2);

struct OverfitConfig {
    int max_steps = 600;
    double lr = 2e-4;
    double target_f1 = 0.95;
    double threshold = 0.5;
    double grad_clip = 1.0;
    AdamWConfig optimizer;
    LossConfig loss;
};

struct OverfitReport {
    bool reached = false;
    /// Updates applied before the forward pass that first met the target; -1 if never.
    int steps_to_target = -1;
    std::vector<double> losses;
    /// Mean per-image F1 after the final step.
    double refined_f1 = 0.0;
    double coarse_f1 = 0.0;
};

/// Fits one fixed batch without augmentation until the refined map's mean
/// per-image F1 reaches the target or the step budget runs out.
OverfitReport overfit_sanity(ProFact& model, const std::vector<Image>& images, const std::vector<BinaryMask>& masks,
                             const OverfitConfig& cfg = {});

} // namespace profact
