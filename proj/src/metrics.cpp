#include "profact/metrics.hpp"

#include "profact/error.hpp"
#include "profact/mbh.hpp"

#include <atomic>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

namespace profact {

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
}

BinaryMask binarize(const ProbMap& pred, double threshold) {
    std::vector<uint8_t> labels(pred.probs().size());
    for (size_t i = 0; i < labels.size(); ++i) {
        labels[i] = pred.probs()[i] > threshold ? 1 : 0;
    }
    return BinaryMask(pred.height(), pred.width(), std::move(labels));
}

ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& gt) {
    if (pred.height() != gt.height() || pred.width() != gt.width()) {
        throw ShapeMismatch("confusion: prediction " + std::to_string(pred.height()) + "x" +
                            std::to_string(pred.width()) + " vs ground truth " +
                            std::to_string(gt.height()) + "x" + std::to_string(gt.width()));
    }
    ConfusionCounts c;
    auto p = pred.labels();
    auto g = gt.labels();
    for (size_t i = 0; i < p.size(); ++i) {
        if (p[i]) {
            (g[i] ? c.tp : c.fp)++;
        } else {
            (g[i] ? c.fn : c.tn)++;
        }
    }
    return c;
}

double f1_score(const ConfusionCounts& c) {
    const int64_t den = 2 * c.tp + c.fp + c.fn;
    return den == 0 ? 1.0 : 2.0 * static_cast<double>(c.tp) / static_cast<double>(den);
}

double iou_score(const ConfusionCounts& c) {
    const int64_t den = c.tp + c.fp + c.fn;
    return den == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(den);
}

nlohmann::json EvalReport::summary() const {
    return {{"label", label},
            {"count", rows.size()},
            {"threshold", threshold},
            {"mean_f1", mean_f1},
            {"mean_iou", mean_iou}};
}

EvalReport summarize(std::vector<ImageScore> rows, double threshold, std::string label) {
    EvalReport r;
    r.rows = std::move(rows);
    r.threshold = threshold;
    r.label = std::move(label);
    for (const ImageScore& s : r.rows) {
        r.mean_f1 += s.f1;
        r.mean_iou += s.iou;
    }
    if (!r.rows.empty()) {
        r.mean_f1 /= static_cast<double>(r.rows.size());
        r.mean_iou /= static_cast<double>(r.rows.size());
    }
    return r;
}

EvalReport evaluate_dataset(const Predictor& predict, const std::vector<EvalItem>& items,
                            double threshold, int workers, std::string label) {
    std::vector<ImageScore> rows(items.size());
    auto score = [&](size_t i) {
        const EvalItem& item = items[i];
        validate_pair(item.image, item.mask);
        ConfusionCounts c = confusion(binarize(predict(item.image), threshold), item.mask);
        rows[i] = {item.image_id, f1_score(c), iou_score(c)};
    };
    const size_t n_workers = std::max<size_t>(1, std::min<size_t>(static_cast<size_t>(std::max(workers, 1)), items.size()));
    if (n_workers == 1) {
        for (size_t i = 0; i < items.size(); ++i) {
            score(i);
        }
    } else {
        std::atomic<size_t> next{0};
        std::exception_ptr failure;
        std::mutex failure_mutex;
        std::vector<std::thread> pool;
        for (size_t w = 0; w < n_workers; ++w) {
            pool.emplace_back([&] {
                for (size_t i = next++; i < items.size(); i = next++) {
                    try {
                        score(i);
                    } catch (...) {
                        std::lock_guard lock(failure_mutex);
                        if (!failure) {
                            failure = std::current_exception();
                        }
                    }
                }
            });
        }
        for (auto& t : pool) {
            t.join();
        }
        if (failure) {
            std::rethrow_exception(failure);
        }
    }
    return summarize(std::move(rows), threshold, std::move(label));
}

std::vector<EvalReport> evaluate_perturbed(const Predictor& predict, const std::vector<EvalItem>& items,
                                           PerturbKind kind, const std::vector<double>& levels, double threshold,
                                           int workers, uint64_t seed) {
    std::vector<EvalReport> out;
    for (double level : levels) {
        std::vector<EvalItem> perturbed;
        perturbed.reserve(items.size());
        for (size_t i = 0; i < items.size(); ++i) {
            perturbed.push_back({items[i].image_id, perturb(items[i].image, kind, level, sample_seed(seed, i)),
                                 items[i].mask});
        }
        out.push_back(evaluate_dataset(predict, perturbed, threshold, workers, perturb_label(kind, level)));
    }
    return out;
}

void write_report_csv(const EvalReport& report, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    out << "image_id,f1,iou\n" << std::setprecision(17);
    for (const ImageScore& s : report.rows) {
        out << s.image_id << ',' << s.f1 << ',' << s.iou << '\n';
    }
}

std::vector<ImageScore> read_report_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw FileNotFound(path.string());
    }
    std::string line;
    std::getline(in, line);
    std::vector<ImageScore> rows;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        std::istringstream ss(line);
        ImageScore s;
        std::string f1, iou;
        std::getline(ss, s.image_id, ',');
        std::getline(ss, f1, ',');
        std::getline(ss, iou, ',');
        s.f1 = std::stod(f1);
        s.iou = std::stod(iou);
        rows.push_back(std::move(s));
    }
    return rows;
}

void write_summary_json(const EvalReport& report, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    out << report.summary().dump(2) << '\n';
}

} // namespace profact
