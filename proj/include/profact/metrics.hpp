#pragma once

#include "profact/augment.hpp"
#include "profact/datamodel.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace profact {

struct ConfusionCounts {
    int64_t tp = 0;
    int64_t fp = 0;
    int64_t fn = 0;
    int64_t tn = 0;

    int64_t total() const { return tp + fp + fn + tn; }
    ConfusionCounts& operator+=(const ConfusionCounts& o);
};

/// 1 where prob > threshold (ties go to 0).
BinaryMask binarize(const ProbMap& pred, double threshold = 0.5);
ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& gt);

/// 2TP / (2TP + FP + FN); 1.0 when the denominator is 0.
double f1_score(const ConfusionCounts& c);
/// TP / (TP + FP + FN); 1.0 when the denominator is 0.
double iou_score(const ConfusionCounts& c);

struct ImageScore {
    std::string image_id;
    double f1 = 0.0;
    double iou = 0.0;
};

struct EvalReport {
    std::vector<ImageScore> rows;
    double mean_f1 = 0.0;
    double mean_iou = 0.0;
    double threshold = 0.5;
    /// Free-form tag, e.g. "clean" or "jpeg:90".
    std::string label = "clean";

    nlohmann::json summary() const;
};

/// Unweighted means over rows, rows kept in the given order.
EvalReport summarize(std::vector<ImageScore> rows, double threshold, std::string label = "clean");

struct EvalItem {
    std::string image_id;
    Image image;
    BinaryMask mask;
};

using Predictor = std::function<ProbMap(const Image&)>;

/// Scores every item; rows follow item order regardless of `workers`.
EvalReport evaluate_dataset(const Predictor& predict, const std::vector<EvalItem>& items,
                            double threshold = 0.5, int workers = 1, std::string label = "clean");

/// One report per level, in grid order, labelled "kind:level". Image i is
/// perturbed with noise seed sample_seed(seed, i), so results do not depend
/// on `workers`.
std::vector<EvalReport> evaluate_perturbed(const Predictor& predict, const std::vector<EvalItem>& items,
                                           PerturbKind kind, const std::vector<double>& levels,
                                           double threshold = 0.5, int workers = 1, uint64_t seed = 0);

/// CSV with header image_id,f1,iou.
void write_report_csv(const EvalReport& report, const std::filesystem::path& path);
std::vector<ImageScore> read_report_csv(const std::filesystem::path& path);
void write_summary_json(const EvalReport& report, const std::filesystem::path& path);

} // namespace profact
