#include "profact/trainer.hpp"

#include "profact/checkpoint.hpp"
#include "profact/config.hpp"
#include "profact/dataset.hpp"
#include "profact/error.hpp"
#include "profact/mbh.hpp"
#include "profact/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iostream>
#include <mutex>
#include <numbers>
#include <numeric>
#include <sstream>
#include <thread>

namespace profact {

AdamW::AdamW(std::vector<std::pair<std::string, Tensor>> params, AdamWConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    for (const auto& [name, p] : params_) {
        m_.emplace_back(static_cast<size_t>(p.numel()), 0.0);
        v_.emplace_back(static_cast<size_t>(p.numel()), 0.0);
    }
}

void AdamW::step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i].second;
        const auto g = p.grad();
        if (g.empty()) {
            continue;
        }
        auto w = p.mutable_data();
        auto& m = m_[i];
        auto& v = v_[i];
        const double decay = p.rank() > 1 ? cfg_.weight_decay : 0.0;
        for (size_t k = 0; k < w.size(); ++k) {
            m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
            v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
            const double mhat = m[k] / bc1;
            const double vhat = v[k] / bc2;
            w[k] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + decay * w[k]);
        }
    }
}

void AdamW::zero_grad() {
    for (auto& [name, p] : params_) {
        p.zero_grad();
    }
}

double clip_grad_norm(const std::vector<Tensor>& params, double max_norm) {
    double sq = 0.0;
    for (const Tensor& p : params) {
        for (double g : p.grad()) {
            sq += g * g;
        }
    }
    const double norm = std::sqrt(sq);
    if (std::isfinite(norm) && norm > max_norm && norm > 0.0) {
        const double f = max_norm / norm;
        for (Tensor p : params) {
            for (double& g : p.mutable_grad()) {
                g *= f;
            }
        }
    }
    return norm;
}

double cosine_lr(int64_t step, int64_t total_steps, double lr0) {
    if (total_steps <= 1) {
        return lr0;
    }
    const double progress = std::clamp(static_cast<double>(step) / static_cast<double>(total_steps - 1), 0.0, 1.0);
    return 0.5 * lr0 * (1.0 + std::cos(std::numbers::pi * progress));
}

StageConfig StageConfig::stage1() {
    StageConfig c;
    c.batch_size = 16;
    c.lr_initial = 1e-4;
    c.epochs = 50;
    c.crop = 512;
    c.init = StageInit::fresh;
    c.augment = AugmentConfig::for_stage(1);
    c.augment.require_feasible = false;
    c.out_dir = "runs/stage1";
    return c;
}

StageConfig StageConfig::stage2() {
    StageConfig c;
    c.batch_size = 4;
    c.lr_initial = 1e-5;
    c.epochs = 5;
    c.crop = 1024;
    c.init = StageInit::from_checkpoint;
    c.augment = AugmentConfig::for_stage(2);
    c.augment.require_feasible = false;
    c.out_dir = "runs/stage2";
    return c;
}

void StageConfig::validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (!(lr_initial > 0.0) || !std::isfinite(lr_initial)) throw ConfigError("lr_initial must be positive");
    if (epochs < 1) throw ConfigError("epochs must be positive");
    if (crop < 32 || crop % 32 != 0) throw ConfigError("crop must be a positive multiple of 32");
    if (!(grad_clip > 0.0)) throw ConfigError("grad_clip must be positive");
    if (optimizer.weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
    if (workers < 1) throw ConfigError("workers must be positive");
    if (validation_ratio < 2) throw ConfigError("validation_ratio must be at least 2");
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw ConfigError("threshold must lie in [0,1]");
    if (max_steps_per_epoch < 0) throw ConfigError("max_steps_per_epoch must be non-negative");
    model.validate();
    loss.validate();
    augment.validate();
}

StageConfig stage_config_from_json(const nlohmann::json& j, StageConfig c) {
    reject_unknown_keys(j,
                        {"dataset", "batch_size", "lr_initial", "epochs", "crop", "init", "init_checkpoint",
                         "backbone", "backbone_key_map", "model", "loss", "augment", "weight_decay",
                         "grad_clip", "seed", "workers", "validation_ratio", "threshold",
                         "max_steps_per_epoch", "out"},
                        "stage config");
    try {
        if (j.contains("dataset")) c.dataset = j.at("dataset").get<std::string>();
        c.batch_size = j.value("batch_size", c.batch_size);
        c.lr_initial = j.value("lr_initial", c.lr_initial);
        c.epochs = j.value("epochs", c.epochs);
        if (j.contains("crop")) {
            c.crop = j.at("crop").get<int>();
            c.augment.crop = c.crop;
        }
        if (j.contains("init")) {
            const auto s = j.at("init").get<std::string>();
            if (s == "fresh") c.init = StageInit::fresh;
            else if (s == "from_checkpoint") c.init = StageInit::from_checkpoint;
            else throw ConfigError("init must be fresh or from_checkpoint, got '" + s + "'");
        }
        if (j.contains("init_checkpoint")) c.init_checkpoint = j.at("init_checkpoint").get<std::string>();
        if (j.contains("backbone")) c.backbone = j.at("backbone").get<std::string>();
        if (j.contains("backbone_key_map")) c.backbone_key_map = j.at("backbone_key_map").get<std::string>();
        if (j.contains("model")) {
            const auto& m = j.at("model");
            c.model = m.is_string() ? ModelConfig::preset(m.get<std::string>()) : m.get<ModelConfig>();
        }
        if (j.contains("loss")) {
            const auto& l = j.at("loss");
            reject_unknown_keys(l, {"lambda", "alpha", "gamma", "epsilon"}, "loss");
            c.loss.lambda = l.value("lambda", c.loss.lambda);
            c.loss.alpha = l.value("alpha", c.loss.alpha);
            c.loss.gamma = l.value("gamma", c.loss.gamma);
            c.loss.epsilon = l.value("epsilon", c.loss.epsilon);
        }
        if (j.contains("augment")) {
            nlohmann::json a = c.augment;
            a.update(j.at("augment"));
            reject_unknown_keys(j.at("augment"), {"crop", "min_resize", "max_resize", "min_forged", "max_forged",
                                                  "crop_tries", "require_feasible", "flip_probability",
                                                  "min_quality", "max_quality"},
                                "augment");
            c.augment = a.get<AugmentConfig>();
            c.crop = c.augment.crop;
        }
        c.optimizer.weight_decay = j.value("weight_decay", c.optimizer.weight_decay);
        c.grad_clip = j.value("grad_clip", c.grad_clip);
        c.seed = j.value("seed", c.seed);
        c.workers = j.value("workers", c.workers);
        c.validation_ratio = j.value("validation_ratio", c.validation_ratio);
        c.threshold = j.value("threshold", c.threshold);
        c.max_steps_per_epoch = j.value("max_steps_per_epoch", c.max_steps_per_epoch);
        if (j.contains("out")) c.out_dir = j.at("out").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("stage config: ") + e.what());
    }
    c.validate();
    return c;
}

StageConfig load_stage_config(const std::filesystem::path& path, int stage) {
    const StageConfig base = stage == 2 ? StageConfig::stage2() : StageConfig::stage1();
    try {
        return stage_config_from_json(read_config_file(path), base);
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

nlohmann::json stage_config_to_json(const StageConfig& c) {
    return {{"dataset", c.dataset.string()},
            {"batch_size", c.batch_size},
            {"lr_initial", c.lr_initial},
            {"epochs", c.epochs},
            {"crop", c.crop},
            {"init", c.init == StageInit::fresh ? "fresh" : "from_checkpoint"},
            {"init_checkpoint", c.init_checkpoint.string()},
            {"backbone", c.backbone.string()},
            {"backbone_key_map", c.backbone_key_map.string()},
            {"model", c.model},
            {"loss", {{"lambda", c.loss.lambda}, {"alpha", c.loss.alpha}, {"gamma", c.loss.gamma},
                      {"epsilon", c.loss.epsilon}}},
            {"augment", c.augment},
            {"weight_decay", c.optimizer.weight_decay},
            {"grad_clip", c.grad_clip},
            {"seed", c.seed},
            {"workers", c.workers},
            {"validation_ratio", c.validation_ratio},
            {"threshold", c.threshold},
            {"max_steps_per_epoch", c.max_steps_per_epoch},
            {"out", c.out_dir.string()}};
}

namespace {

bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

// Runs f(i) for i in [0, n) on up to `workers` threads; the first exception wins.
template <typename F>
void parallel_for(size_t n, int workers, F&& f) {
    const size_t threads = std::min<size_t>(n, static_cast<size_t>(std::max(1, workers)));
    if (threads <= 1) {
        for (size_t i = 0; i < n; ++i) f(i);
        return;
    }
    std::atomic<size_t> next{0};
    std::exception_ptr failure;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            for (size_t i = next++; i < n; i = next++) {
                try {
                    f(i);
                } catch (...) {
                    std::lock_guard lock(mu);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
}

std::string loss_diagnostics(const LossTerms& l, int64_t step, int epoch) {
    std::ostringstream ss;
    ss << "non-finite loss at epoch " << epoch << " step " << step << " (total " << l.total.item() << ", coarse "
       << l.coarse.item() << ", refined " << l.refined.item() << ")";
    return ss.str();
}

double mean_f1(const Tensor& probs, const std::vector<BinaryMask>& masks, double threshold) {
    double sum = 0.0;
    for (size_t i = 0; i < masks.size(); ++i) {
        sum += f1_score(confusion(binarize(probmap_from_tensor(probs, static_cast<int64_t>(i)), threshold), masks[i]));
    }
    return masks.empty() ? 0.0 : sum / static_cast<double>(masks.size());
}

} // namespace

std::unique_ptr<ProFact> initial_model(const StageConfig& cfg) {
    if (cfg.init == StageInit::from_checkpoint) {
        if (cfg.init_checkpoint.empty()) {
            throw ConfigError("init = from_checkpoint needs init_checkpoint");
        }
        return load_checkpoint(cfg.init_checkpoint).model;
    }
    auto model = std::make_unique<ProFact>(cfg.model, cfg.seed);
    if (!cfg.backbone.empty()) {
        const KeyMap map =
            cfg.backbone_key_map.empty() ? mit_key_map(cfg.model.encoder) : read_key_map(cfg.backbone_key_map);
        ImportReport r = import_backbone(*model, cfg.backbone, map);
        if (!r.file_present) {
            std::cerr << "warning: backbone weights " << cfg.backbone << " not found; starting from random init\n";
        } else {
            std::cerr << "imported " << r.loaded.size() << " backbone tensors (" << r.unmapped.size()
                      << " unmapped)\n";
        }
    }
    return model;
}

StageResult train_stage(ProFact& model, const StageConfig& cfg) {
    cfg.validate();
    const std::vector<IndexEntry> index = read_index(cfg.dataset);
    const Split split = split_index(index, cfg.validation_ratio);
    if (split.train.empty()) {
        throw DataUnavailable("no training samples in " + cfg.dataset.string());
    }
    std::filesystem::create_directories(cfg.out_dir);

    StageResult result;
    result.best_checkpoint = cfg.out_dir / "best.ckpt";
    result.last_checkpoint = cfg.out_dir / "last.ckpt";
    result.log_path = cfg.out_dir / "train_log.jsonl";
    result.initial_hash = weights_hash(model);
    std::ofstream log(result.log_path, std::ios::trunc);

    std::vector<EvalItem> validation(split.validation.size());
    parallel_for(validation.size(), cfg.workers, [&](size_t i) {
        LabeledImage li = load_entry(cfg.dataset, split.validation[i]);
        validation[i] = {li.id, std::move(li.image), std::move(li.mask)};
    });

    AugmentConfig aug = cfg.augment;
    aug.crop = cfg.crop;
    AdamW opt(model.named_parameters(), cfg.optimizer);
    const std::vector<Tensor> params = model.parameters();

    const size_t n_train = split.train.size();
    const size_t batch = std::min<size_t>(static_cast<size_t>(cfg.batch_size), n_train);
    int64_t steps_per_epoch = static_cast<int64_t>(n_train / batch);
    if (cfg.max_steps_per_epoch > 0) {
        steps_per_epoch = std::min<int64_t>(steps_per_epoch, cfg.max_steps_per_epoch);
    }
    const int64_t total_steps = steps_per_epoch * cfg.epochs;
    int64_t step = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<size_t> order(n_train);
        std::iota(order.begin(), order.end(), size_t{0});
        AugRng shuffle_rng(sample_seed(cfg.seed, 0x5348554646ULL + static_cast<uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double loss_sum = 0.0;
        for (int64_t b = 0; b < steps_per_epoch; ++b, ++step) {
            std::vector<Image> images(batch);
            std::vector<BinaryMask> masks(batch);
            parallel_for(batch, cfg.workers, [&](size_t k) {
                const size_t pos = static_cast<size_t>(b) * batch + k;
                const IndexEntry& e = split.train[order[pos]];
                LabeledImage li = load_entry(cfg.dataset, e);
                AugRng rng(sample_seed(cfg.seed ^ 0xA5A5A5A5ULL, static_cast<uint64_t>(epoch) * n_train + pos));
                AugmentedPair p = train_augment(li.image, li.mask, aug, rng);
                images[k] = std::move(p.image);
                masks[k] = std::move(p.mask);
            });

            const double lr = cosine_lr(step, total_steps, cfg.lr_initial);
            opt.zero_grad();
            ForwardResult fr = model.forward(images_to_tensor(images));
            LossTerms loss = total_loss(fr.coarse, fr.refined, masks_to_tensor(masks), cfg.loss);
            if (!std::isfinite(loss.total.item())) {
                throw NonFiniteLoss(loss_diagnostics(loss, step, epoch));
            }
            loss.total.backward();
            for (const auto& [name, p] : model.named_parameters()) {
                if (!all_finite(p.grad())) {
                    throw NonFiniteLoss("non-finite gradient in " + name + " at epoch " + std::to_string(epoch) +
                                        " step " + std::to_string(step));
                }
            }
            const double grad_norm = clip_grad_norm(params, cfg.grad_clip);
            opt.step(lr);
            loss_sum += loss.total.item();
            log << nlohmann::json{{"step", step},
                                  {"epoch", epoch},
                                  {"lr", lr},
                                  {"loss", loss.total.item()},
                                  {"coarse_loss", loss.coarse.item()},
                                  {"refined_loss", loss.refined.item()},
                                  {"grad_norm", grad_norm}}
                       .dump()
                << '\n';
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.mean_loss = steps_per_epoch > 0 ? loss_sum / static_cast<double>(steps_per_epoch) : 0.0;
        const EvalReport val = evaluate_dataset([&](const Image& img) { return model.predict(img).refined; },
                                                validation, cfg.threshold, cfg.workers, "validation");
        rec.val_iou = val.mean_iou;
        rec.val_f1 = val.mean_f1;
        result.epochs.push_back(rec);
        const bool improved = rec.val_iou > result.best_iou;
        nlohmann::json meta = {{"epoch", epoch}, {"val_iou", rec.val_iou}, {"val_f1", rec.val_f1},
                               {"stage_config", stage_config_to_json(cfg)}};
        if (improved) {
            result.best_iou = rec.val_iou;
            result.best_epoch = epoch;
            save_checkpoint(model, result.best_checkpoint, meta);
            result.best_hash = weights_hash(model);
        }
        log << nlohmann::json{{"epoch", epoch},
                              {"mean_loss", rec.mean_loss},
                              {"val_iou", rec.val_iou},
                              {"val_f1", rec.val_f1},
                              {"best_iou", result.best_iou},
                              {"improved", improved}}
                   .dump()
            << '\n';
        log.flush();
        if (epoch + 1 == cfg.epochs) {
            save_checkpoint(model, result.last_checkpoint, meta);
        }
    }
    result.steps = step;
    if (result.best_epoch + 1 != cfg.epochs) {
        load_weights(model, result.best_checkpoint);
    }
    return result;
}

TwoStageResult two_stage_train(const StageConfig& stage1, const std::optional<StageConfig>& stage2) {
    TwoStageResult out;
    std::unique_ptr<ProFact> model = initial_model(stage1);
    out.stage1 = train_stage(*model, stage1);
    out.final_checkpoint = out.stage1.best_checkpoint;
    if (!stage2) {
        return out;
    }
    StageConfig cfg2 = *stage2;
    cfg2.init = StageInit::from_checkpoint;
    if (cfg2.init_checkpoint.empty()) {
        cfg2.init_checkpoint = out.stage1.best_checkpoint;
    }
    std::unique_ptr<ProFact> fine = initial_model(cfg2);
    out.stage2_initial_hash = weights_hash(*fine);
    out.stage2 = train_stage(*fine, cfg2);
    out.final_checkpoint = out.stage2->best_checkpoint;
    return out;
}

OverfitReport overfit_sanity(ProFact& model, const std::vector<Image>& images, const std::vector<BinaryMask>& masks,
                             const OverfitConfig& cfg) {
    if (images.empty() || images.size() != masks.size()) {
        throw ShapeMismatch("overfit batch needs matching, nonempty image and mask lists");
    }
    const Tensor x = images_to_tensor(images);
    const Tensor y = masks_to_tensor(masks);
    AdamW opt(model.named_parameters(), cfg.optimizer);
    const std::vector<Tensor> params = model.parameters();
    OverfitReport report;
    for (int step = 0; step <= cfg.max_steps; ++step) {
        opt.zero_grad();
        ForwardResult fr = model.forward(x);
        if (mean_f1(fr.refined, masks, cfg.threshold) >= cfg.target_f1) {
            report.reached = true;
            report.steps_to_target = step;
            break;
        }
        if (step == cfg.max_steps) {
            break;
        }
        LossTerms loss = total_loss(fr.coarse, fr.refined, y, cfg.loss);
        if (!std::isfinite(loss.total.item())) {
            throw NonFiniteLoss(loss_diagnostics(loss, step, 0));
        }
        report.losses.push_back(loss.total.item());
        loss.total.backward();
        clip_grad_norm(params, cfg.grad_clip);
        opt.step(cfg.lr);
    }
    NoGradGuard guard;
    ForwardResult fr = model.forward(x);
    report.refined_f1 = mean_f1(fr.refined, masks, cfg.threshold);
    report.coarse_f1 = mean_f1(fr.coarse, masks, cfg.threshold);
    return report;
}

} // namespace profact
