// Runs acceptance criteria 1-10 and prints one PASS/FAIL line per criterion.
// Usage: acceptance [criterion numbers...]  (default: all)

#include "profact/checkpoint.hpp"
#include "profact/error.hpp"
#include "profact/feedback.hpp"
#include "profact/image_io.hpp"
#include "profact/losses.hpp"
#include "profact/mbh.hpp"
#include "profact/metrics.hpp"
#include "profact/model.hpp"
#include "profact/trainer.hpp"
#include "test_support.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <sstream>

using namespace profact;
using testing_support::check_gradients;
using testing_support::random_image;
using testing_support::random_tensor;
using testing_support::rect_mask;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    // Records a failed check; details of every check are kept for the log line.
    void check(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail << "[failed: " << what << "] ";
        }
    }
};

// Overfit run shared by criteria 7, 8 and 10.
constexpr double kPinnedOverfitSteps = 190.0;
constexpr double kOverfitTolerance = 0.25;

struct OverfitState {
    std::unique_ptr<ProFact> model;
    testing_support::Batch batch;
    OverfitReport report;
};

OverfitState& overfit_state() {
    static std::unique_ptr<OverfitState> state;
    if (!state) {
        state = std::make_unique<OverfitState>();
        state->batch = testing_support::overfit_batch();
        state->model = std::make_unique<ProFact>(ModelConfig::tiny(), 1);
        state->report = overfit_sanity(*state->model, state->batch.images, state->batch.masks, OverfitConfig{});
    }
    return *state;
}

// 1. Shape pipeline at the desk config.
void shape_pipeline(Outcome& o) {
    const auto t0 = Clock::now();
    ProFact model(ModelConfig::desk(), 0);
    for (int side : {256, 512}) {
        {
            NoGradGuard guard;
            const ForwardResult r = model.forward(random_tensor({1, 3, side, side}, side, 0, 1));
            for (int i = 0; i < 4; ++i) {
                const int64_t expect = side / (4 << i);
                o.check(r.pyramid.levels[i].dim(2) == expect && r.pyramid.levels[i].dim(3) == expect,
                        "level " + std::to_string(i) + " at " + std::to_string(side));
            }
            o.check(r.coarse.dim(2) == side && r.refined.dim(3) == side, "map size at " + std::to_string(side));
        }
        // Off-grid size exercises padding and crop-back.
        const int h = side - 13, w = side - 50;
        const Prediction p = model.predict(random_image(h, w, static_cast<uint64_t>(side)));
        o.check(p.coarse.height() == h && p.coarse.width() == w && p.refined.height() == h && p.refined.width() == w,
                "crop-back at " + std::to_string(h) + "x" + std::to_string(w));
    }
    const double secs = seconds_since(t0);
    o.check(secs < 60.0, "runtime under 1 min");
    o.detail << "levels 1/4..1/32 exact at 256 and 512, maps cropped back, " << secs << " s";
}

// 2. Loss oracles.
void loss_oracles(Outcome& o) {
    const double focal = focal_loss(Tensor::full({1, 1, 1, 1}, 0.5), Tensor::full({1, 1, 1, 1}, 1.0), 0.5, 2).item();
    o.check(std::abs(focal - 0.08664) <= 1e-4, "focal value");
    const double dice = dice_loss(Tensor::full({1, 1, 8, 8}, 0.5), Tensor::full({1, 1, 8, 8}, 1.0)).item();
    o.check(std::abs(dice - 1.0 / 3.0) <= 1e-6, "dice value");
    const Tensor gt = masks_to_tensor(std::vector<BinaryMask>{rect_mask(16, 16, 2, 3, 9, 12)});
    const LossTerms t = total_loss(random_tensor({1, 1, 16, 16}, 1, 0.01, 0.99),
                                   random_tensor({1, 1, 16, 16}, 2, 0.01, 0.99), gt, LossConfig{});
    o.check(t.total.item() == t.coarse.item() + t.refined.item(), "total equals branch sum");
    char buf[160];
    std::snprintf(buf, sizeof buf, "focal %.6f, dice %.9f, total %.12g = %.12g + %.12g", focal, dice, t.total.item(),
                  t.coarse.item(), t.refined.item());
    o.detail << buf;
}

// 3. Finite-difference gradient checks on 32x32 inputs.
void gradient_checks(Outcome& o) {
    const auto t0 = Clock::now();
    auto worst_of = [&](const std::vector<testing_support::GradSample>& samples, const std::string& name) {
        double worst = 0;
        for (const auto& s : samples) worst = std::max(worst, s.rel_error);
        o.check(worst < 1e-3, name);
        o.detail << name << " max rel err " << worst << ", ";
    };

    nn::Rng rng(3);
    CotBlock cot(16, CspmConfig{}, rng);
    const Tensor m = random_tensor({1, 16, 32, 32}, 4);
    const Tensor probe = random_tensor({1, 16, 32, 32}, 5);
    worst_of(check_gradients([&] { return ops::sum(ops::mul(cot.forward(m), probe)); }, cot.parameters(), 10, 6),
             "cot block");

    ProFact model(ModelConfig::tiny(), 7);
    const Tensor x = random_tensor({1, 3, 32, 32}, 8, 0, 1);
    const Tensor y = masks_to_tensor(std::vector<BinaryMask>{rect_mask(32, 32, 6, 4, 22, 19)});
    auto loss = [&] {
        const ForwardResult r = model.forward(x);
        return total_loss(r.coarse, r.refined, y, LossConfig{}).total;
    };
    worst_of(check_gradients(loss, model.ham.parameters(), 10, 9), "ham path");
    worst_of(check_gradients(loss, model.parameters(), 10, 10), "total loss");
    const double secs = seconds_since(t0);
    o.check(secs < 300.0, "runtime under 5 min");
    o.detail << secs << " s";
}

// 4. Metric oracles.
void metric_oracles(Outcome& o) {
    const ConfusionCounts c = confusion(BinaryMask(2, 2, {1, 1, 0, 0}), BinaryMask(2, 2, {1, 0, 1, 0}));
    o.check(f1_score(c) == 0.5, "pinned F1");
    o.check(std::abs(iou_score(c) - 1.0 / 3.0) < 1e-15, "pinned IoU");
    GenRng rng(11);
    std::uniform_int_distribution<int64_t> u(0, 100000);
    double worst = 0;
    for (int i = 0; i < 1000; ++i) {
        const ConfusionCounts k{u(rng), u(rng), u(rng), u(rng)};
        const double f = f1_score(k), j = iou_score(k);
        o.check(f >= j, "F1 >= IoU");
        worst = std::max(worst, std::abs(f - 2 * j / (1 + j)));
    }
    o.check(worst < 1e-12, "F1 = 2 IoU / (1 + IoU)");
    o.detail << "pinned F1 " << f1_score(c) << " IoU " << iou_score(c) << ", identity max err " << worst
             << " over 1000 tuples";
}

// 5. HAM dominance and coverage growth.
void ham_properties(Outcome& o) {
    nn::Rng rng(12);
    Ham ham(HamConfig::desk(), rng);
    NoGradGuard guard;
    int violations = 0;
    for (int i = 0; i < 100; ++i) {
        const HamTrace t = ham.trace(random_tensor({1, 1, 64, 64}, 1000 + i, 0, 1));
        for (size_t k = 0; k < t.output.data().size(); ++k) violations += t.output.data()[k] < t.downsampled.data()[k];
    }
    o.check(violations == 0, "output >= downsampled");
    Tensor single = Tensor::zeros({1, 1, 64, 64});
    single.mutable_data()[31 * 64 + 40] = 1.0;
    const HamTrace t = ham.trace(single);
    auto support = [](const Tensor& v) {
        return std::count_if(v.data().begin(), v.data().end(), [](double a) { return a > 0; });
    };
    const auto before = support(t.downsampled), after = support(t.output);
    o.check(after > before, "single-pixel support grows");
    o.detail << violations << " dominance violations on 100 maps, single-pixel support " << before << " -> " << after;
}

bool near_mask(const BinaryMask& m, int y, int x, int r) {
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (dx * dx + dy * dy <= r * r && yy >= 0 && yy < m.height() && xx >= 0 && xx < m.width() &&
                m.at(yy, xx))
                return true;
        }
    return false;
}

// 6. MBH generator invariants over 1000 seeds.
void generator_invariants(Outcome& o) {
    const auto t0 = Clock::now();
    const SourcePool pool = make_synthetic_pool(16, 128, 128, 13);
    std::vector<Image> images;
    for (size_t i = 0; i < 16; ++i) images.push_back(pool.image(i));
    int area_bad = 0, leak = 0, repeat_bad = 0, harmonize_bad = 0, harmonized = 0;
    double min_area = 1, max_area = 0;
    for (uint64_t k = 0; k < 1000; ++k) {
        const size_t i = k % 16, j = (k / 16 + i + 1) % 16 == i ? (i + 1) % 16 : (k / 16 + i + 1) % 16;
        const ForgeryMode mode = is_splice(k, 0.5) ? ForgeryMode::splice : ForgeryMode::copymove;
        const uint64_t seed = sample_seed(2024, k);
        const ForgerySample s = generate_sample(images[i], pool.object_mask(i), images[j], mode, seed);
        const double area = s.mask.area_ratio();
        min_area = std::min(min_area, area);
        max_area = std::max(max_area, area);
        area_bad += area < 0.005 || area > 0.5 || s.mask.count() == 0;
        harmonized += s.harmonized;

        const Image base = quantize_8bit(mode == ForgeryMode::copymove ? images[i] : images[j]);
        for (int y = 0; y < 128; ++y)
            for (int x = 0; x < 128; ++x) {
                if (s.mask.at(y, x)) continue;
                const bool changed = s.image.at(y, x, 0) != base.at(y, x, 0) ||
                                     s.image.at(y, x, 1) != base.at(y, x, 1) || s.image.at(y, x, 2) != base.at(y, x, 2);
                if (changed && !near_mask(s.mask, y, x, s.feather_radius)) ++leak;
            }

        const ForgerySample again = generate_sample(images[i], pool.object_mask(i), images[j], mode, seed);
        repeat_bad += !std::ranges::equal(s.image.pixels(), again.image.pixels()) ||
                      !std::ranges::equal(s.mask.labels(), again.mask.labels());

        const Image h = harmonize(s.image, s.mask, base, 1.0);
        for (int y = 0; y < 128; ++y)
            for (int x = 0; x < 128; ++x)
                for (int c = 0; c < 3; ++c)
                    if (!s.mask.at(y, x) && h.at(y, x, c) != s.image.at(y, x, c)) {
                        ++harmonize_bad;
                    }
    }
    o.check(area_bad == 0, "area range");
    o.check(leak == 0, "changes confined to dilated mask");
    o.check(repeat_bad == 0, "bit-identical reruns");
    o.check(harmonize_bad == 0, "harmonization outside mask");
    o.detail << "1000 samples, area in [" << min_area << ", " << max_area << "], " << leak << " leaked px, "
             << repeat_bad << " nondeterministic, " << harmonize_bad << " harmonize violations (" << harmonized
             << " harmonized in-pipeline), " << seconds_since(t0) << " s";
}

// 7. Overfit sanity within the pinned step budget.
void overfit_budget(Outcome& o) {
    const auto t0 = Clock::now();
    const OverfitReport& r = overfit_state().report;
    const double lo = kPinnedOverfitSteps * (1 - kOverfitTolerance), hi = kPinnedOverfitSteps * (1 + kOverfitTolerance);
    o.check(r.reached, "reached F1 0.95");
    o.check(r.steps_to_target >= lo && r.steps_to_target <= hi, "steps within pinned budget");
    o.detail << "F1 >= 0.95 after " << r.steps_to_target << " steps (pinned " << kPinnedOverfitSteps << " +/- 25%: ["
             << lo << ", " << hi << "]), " << seconds_since(t0) << " s";
}

// 8. Refined map no worse than coarse after overfitting.
void feedback_direction(Outcome& o) {
    const OverfitReport& r = overfit_state().report;
    o.check(r.refined_f1 >= r.coarse_f1 - 0.02, "refined >= coarse - 0.02");
    o.detail << "refined F1 " << r.refined_f1 << ", coarse F1 " << r.coarse_f1;
}

// 9. Two-stage handoff on a 50-sample corpus at the desk config.
void two_stage_handoff(Outcome& o) {
    const auto t0 = Clock::now();
    const auto root = testing_support::temp_dir("acceptance_two_stage");
    const GenerateReport gen = generate_dataset(make_synthetic_pool(12, 256, 256, 17), root / "data", 50, 0.5, 19);
    o.check(gen.entries.size() == 50, "50 generated samples");

    StageConfig s1 = StageConfig::stage1();
    s1.dataset = root / "data";
    s1.model = ModelConfig::desk();
    s1.batch_size = 4;
    s1.epochs = 2;
    s1.crop = 128;
    s1.augment.crop = 128;
    s1.out_dir = root / "stage1";
    s1.seed = 5;
    StageConfig s2 = StageConfig::stage2();
    s2.dataset = s1.dataset;
    s2.model = s1.model;
    s2.batch_size = 2;
    s2.epochs = 1;
    s2.crop = 256;
    s2.augment.crop = 256;
    s2.out_dir = root / "stage2";
    s2.seed = 6;

    const TwoStageResult r = two_stage_train(s1, s2);
    o.check(r.stage2.has_value(), "stage 2 ran");
    o.check(r.stage2_initial_hash == r.stage1.best_hash, "stage-2 init hash = stage-1 best hash");
    o.check(weights_hash(*load_checkpoint(r.stage1.best_checkpoint).model) == r.stage1.best_hash,
            "stage-1 best checkpoint hash");
    o.check(std::filesystem::exists(r.final_checkpoint), "final checkpoint");
    const double secs = seconds_since(t0);
    o.check(secs < 1800.0, "runtime under 30 min");
    o.detail << "stage-1 best " << r.stage1.best_hash << " (epoch " << r.stage1.best_epoch << "), stage-2 init "
             << r.stage2_initial_hash << ", " << r.stage1.steps << "+" << (r.stage2 ? r.stage2->steps : 0)
             << " steps, " << secs << " s";
}

// 10. Robustness sweep on a 5-image fixture.
void robustness_harness(Outcome& o) {
    OverfitState& st = overfit_state();
    std::vector<EvalItem> items;
    for (size_t i = 0; i < 4; ++i) items.push_back({"train" + std::to_string(i), st.batch.images[i], st.batch.masks[i]});
    const SourcePool pool = make_synthetic_pool(8, 128, 128, 11);
    const ForgerySample extra =
        generate_sample(pool.image(4), pool.object_mask(4), pool.image(5), ForgeryMode::splice, 104);
    items.push_back({"extra", extra.image, extra.mask});

    const ProFact& model = *st.model;
    const Predictor predict = [&](const Image& img) { return model.predict(img).refined; };
    const EvalReport clean = evaluate_dataset(predict, items);
    const PerturbGrids grids;
    const auto dir = testing_support::temp_dir("acceptance_sweep");
    double jpeg100 = -1;
    for (PerturbKind kind : {PerturbKind::jpeg, PerturbKind::blur, PerturbKind::noise, PerturbKind::resize}) {
        const auto& levels = grids.levels(kind);
        const auto reports = evaluate_perturbed(predict, items, kind, levels, 0.5, 1, 23);
        o.check(reports.size() == levels.size(), to_string(kind) + " grid size");
        nlohmann::json summaries = nlohmann::json::array();
        for (size_t k = 0; k < reports.size(); ++k) {
            nlohmann::json s = reports[k].summary();
            s["level_index"] = k;
            s["level"] = levels[k];
            summaries.push_back(s);
            o.check(reports[k].label == perturb_label(kind, levels[k]), to_string(kind) + " label order");
            o.check(reports[k].rows.size() == items.size(), to_string(kind) + " rows");
            if (kind == PerturbKind::jpeg && levels[k] == 100) jpeg100 = reports[k].mean_f1;
        }
        std::ofstream(dir / (to_string(kind) + ".json")) << summaries.dump(2);
        std::ifstream in(dir / (to_string(kind) + ".json"));
        const auto back = nlohmann::json::parse(in);
        for (size_t k = 0; k < back.size(); ++k) o.check(back[k]["level_index"] == k, "monotone level index");
        o.detail << to_string(kind) << " " << reports.size() << " levels, ";
    }
    o.check(jpeg100 >= 0 && std::abs(jpeg100 - clean.mean_f1) < 0.02, "jpeg:100 within 0.02 of clean");
    o.detail << "clean F1 " << clean.mean_f1 << ", jpeg:100 F1 " << jpeg100;
}

} // namespace

int main(int argc, char** argv) {
    const std::map<int, std::pair<std::string, std::function<void(Outcome&)>>> criteria{
        {1, {"shape pipeline", shape_pipeline}},
        {2, {"loss oracles", loss_oracles}},
        {3, {"gradient checks", gradient_checks}},
        {4, {"metric oracles", metric_oracles}},
        {5, {"HAM properties", ham_properties}},
        {6, {"MBH generator", generator_invariants}},
        {7, {"overfit sanity", overfit_budget}},
        {8, {"feedback direction", feedback_direction}},
        {9, {"two-stage handoff", two_stage_handoff}},
        {10, {"robustness harness", robustness_harness}},
    };
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) selected.insert(std::stoi(argv[i]));
    int failures = 0;
    for (const auto& [id, entry] : criteria) {
        if (!selected.empty() && !selected.count(id)) continue;
        Outcome o;
        try {
            entry.second(o);
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail << "exception: " << e.what();
        }
        failures += !o.pass;
        std::cout << "AC" << id << ' ' << (o.pass ? "PASS" : "FAIL") << " (" << entry.first << ") " << o.detail.str()
                  << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
