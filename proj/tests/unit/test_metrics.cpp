#include "profact/metrics.hpp"
#include "profact/mbh.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

using namespace profact;
using testing_support::random_image;
using testing_support::rect_mask;
using testing_support::temp_dir;

TEST(Metrics, PinnedTwoByTwoCase) {
    // pred {1,1,0,0} vs gt {1,0,1,0}: tp 1, fp 1, fn 1, tn 1.
    const ConfusionCounts c = confusion(BinaryMask(2, 2, {1, 1, 0, 0}), BinaryMask(2, 2, {1, 0, 1, 0}));
    EXPECT_EQ(c.tp, 1);
    EXPECT_EQ(c.fp, 1);
    EXPECT_EQ(c.fn, 1);
    EXPECT_EQ(c.tn, 1);
    EXPECT_DOUBLE_EQ(f1_score(c), 0.5);
    EXPECT_DOUBLE_EQ(iou_score(c), 1.0 / 3.0);
}

TEST(Metrics, F1IouIdentityOnRandomCounts) {
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<int64_t> u(0, 1000);
    for (int i = 0; i < 1000; ++i) {
        ConfusionCounts c{u(rng), u(rng), u(rng), u(rng)};
        const double f = f1_score(c), j = iou_score(c);
        EXPECT_GE(f, j);
        EXPECT_NEAR(f, 2 * j / (1 + j), 1e-12);
    }
}

TEST(Metrics, EmptyConventionAndTies) {
    const ConfusionCounts none = confusion(BinaryMask::zeros(3, 3), BinaryMask::zeros(3, 3));
    EXPECT_EQ(f1_score(none), 1.0);
    EXPECT_EQ(iou_score(none), 1.0);
    const BinaryMask b = binarize(ProbMap(1, 3, {0.5f, 0.50001f, 0.2f}), 0.5);
    EXPECT_EQ(b.at(0, 0), 0);
    EXPECT_EQ(b.at(0, 1), 1);
    EXPECT_EQ(b.at(0, 2), 0);
}

TEST(Metrics, InvariantToJointPermutation) {
    std::mt19937_64 rng(2);
    std::vector<uint8_t> p(64), g(64);
    for (int i = 0; i < 64; ++i) {
        p[i] = rng() % 2;
        g[i] = rng() % 3 == 0;
    }
    std::vector<size_t> perm(64);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<uint8_t> pp(64), gp(64);
    for (size_t i = 0; i < 64; ++i) {
        pp[i] = p[perm[i]];
        gp[i] = g[perm[i]];
    }
    const ConfusionCounts a = confusion(BinaryMask(8, 8, p), BinaryMask(8, 8, g));
    const ConfusionCounts b = confusion(BinaryMask(8, 8, pp), BinaryMask(8, 8, gp));
    EXPECT_EQ(f1_score(a), f1_score(b));
    EXPECT_EQ(iou_score(a), iou_score(b));
    EXPECT_EQ(a.total(), 64);
}

TEST(Report, MeansAndCsvRoundTrip) {
    const EvalReport r = summarize({{"a", 1.0, 1.0}, {"b", 0.0, 0.0}}, 0.5);
    EXPECT_DOUBLE_EQ(r.mean_f1, 0.5);
    const auto dir = temp_dir("metrics_csv");
    write_report_csv(r, dir / "r.csv");
    const auto rows = read_report_csv(dir / "r.csv");
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[1].image_id, "b");
    double mean = 0;
    for (const auto& row : rows) mean += row.f1;
    EXPECT_DOUBLE_EQ(mean / rows.size(), r.mean_f1);
    write_summary_json(r, dir / "s.json");
    EXPECT_EQ(r.summary()["label"], "clean");
}

namespace {
std::vector<EvalItem> fixture(int n) {
    std::vector<EvalItem> items;
    for (int i = 0; i < n; ++i) {
        items.push_back({"img" + std::to_string(i), random_image(16, 16, 10 + i), rect_mask(16, 16, i, 2, 10, 12)});
    }
    return items;
}

// Predicts "forged" where the red channel is bright, so scores vary per image.
ProbMap red_predictor(const Image& img) {
    std::vector<float> v(static_cast<size_t>(img.height()) * img.width());
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x) v[y * img.width() + x] = img.at(y, x, 0);
    return ProbMap(img.height(), img.width(), v);
}
} // namespace

TEST(Evaluate, RowsKeepItemOrderAcrossWorkers) {
    const auto items = fixture(7);
    const EvalReport one = evaluate_dataset(red_predictor, items, 0.5, 1);
    const EvalReport many = evaluate_dataset(red_predictor, items, 0.5, 3);
    ASSERT_EQ(one.rows.size(), 7u);
    for (size_t i = 0; i < 7; ++i) {
        EXPECT_EQ(one.rows[i].image_id, items[i].image_id);
        EXPECT_EQ(many.rows[i].image_id, items[i].image_id);
        EXPECT_EQ(one.rows[i].f1, many.rows[i].f1);
    }
}

TEST(Evaluate, PerturbedReportsFollowGrid) {
    const auto items = fixture(4);
    const auto levels = PerturbGrids{}.levels(PerturbKind::noise);
    const auto a = evaluate_perturbed(red_predictor, items, PerturbKind::noise, levels, 0.5, 1, 9);
    const auto b = evaluate_perturbed(red_predictor, items, PerturbKind::noise, levels, 0.5, 2, 9);
    ASSERT_EQ(a.size(), levels.size());
    EXPECT_EQ(a[0].label, "noise:0");
    for (size_t k = 0; k < a.size(); ++k) {
        EXPECT_EQ(a[k].mean_f1, b[k].mean_f1);
    }
    const EvalReport clean = evaluate_dataset(red_predictor, items);
    EXPECT_EQ(a[0].mean_f1, clean.mean_f1);
}
