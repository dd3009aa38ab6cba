#include "profact/mbh.hpp"

#include "profact/config.hpp"
#include "profact/error.hpp"
#include "profact/image_io.hpp"
#include "cv_bridge.hpp"

#include <Eigen/Dense>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <mutex>
#include <numbers>
#include <thread>

namespace profact {

int64_t Trimap::count(TrimapLabel label) const {
    return std::count(labels.begin(), labels.end(), static_cast<uint8_t>(label));
}

BinaryMask AlphaMatte::above(double t) const {
    std::vector<uint8_t> labels(alpha.size());
    for (size_t i = 0; i < alpha.size(); ++i) {
        labels[i] = alpha[i] > t ? 1 : 0;
    }
    return BinaryMask(height, width, std::move(labels));
}

namespace {

cv::Mat disk_kernel(int radius) {
    cv::Mat k = cv::Mat::zeros(2 * radius + 1, 2 * radius + 1, CV_8UC1);
    for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
            if (dx * dx + dy * dy <= radius * radius) {
                k.at<uint8_t>(dy + radius, dx + radius) = 1;
            }
        }
    }
    return k;
}

} // namespace

BinaryMask erode_disk(const BinaryMask& mask, int radius) {
    if (radius <= 0) {
        return mask;
    }
    cv::Mat out;
    cv::erode(cvb::to_mat(mask), out, disk_kernel(radius), cv::Point(-1, -1), 1, cv::BORDER_CONSTANT,
              cv::Scalar(0));
    return cvb::mask_from_mat(out);
}

BinaryMask dilate_disk(const BinaryMask& mask, int radius) {
    if (radius <= 0) {
        return mask;
    }
    cv::Mat out;
    cv::dilate(cvb::to_mat(mask), out, disk_kernel(radius), cv::Point(-1, -1), 1, cv::BORDER_CONSTANT,
               cv::Scalar(0));
    return cvb::mask_from_mat(out);
}

Trimap build_trimap(const BinaryMask& mask, int radius) {
    if (radius < 1) {
        throw ParamOutOfRange("trimap radius must be at least 1, got " + std::to_string(radius));
    }
    if (mask.count() == 0) {
        throw EmptyMask("cannot build a trimap from an empty mask");
    }
    BinaryMask inner = erode_disk(mask, radius);
    BinaryMask outer = dilate_disk(mask, radius);
    Trimap t;
    t.height = mask.height();
    t.width = mask.width();
    t.radius = radius;
    t.labels.resize(mask.labels().size());
    for (size_t i = 0; i < t.labels.size(); ++i) {
        TrimapLabel l = inner.labels()[i]   ? TrimapLabel::foreground
                        : outer.labels()[i] ? TrimapLabel::unknown
                                            : TrimapLabel::background;
        t.labels[i] = static_cast<uint8_t>(l);
    }
    return t;
}

namespace {

// Euclidean distance of every pixel to the nearest pixel carrying `label`.
std::vector<float> distance_to(const Trimap& t, TrimapLabel label) {
    cv::Mat src(t.height, t.width, CV_8UC1);
    for (size_t i = 0; i < t.labels.size(); ++i) {
        src.data[i] = t.labels[i] == static_cast<uint8_t>(label) ? 0 : 1;
    }
    cv::Mat dist;
    cv::distanceTransform(src, dist, cv::DIST_L2, cv::DIST_MASK_PRECISE, CV_32F);
    return cvb::values_from_mat(dist);
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

} // namespace

AlphaMatte estimate_alpha(const Image& image, const Trimap& trimap) {
    if (image.height() != trimap.height || image.width() != trimap.width) {
        throw ShapeMismatch("matte: image and trimap sizes differ");
    }
    AlphaMatte a;
    a.height = trimap.height;
    a.width = trimap.width;
    a.alpha.assign(trimap.labels.size(), 0.0f);
    const bool has_fg = trimap.count(TrimapLabel::foreground) > 0;
    const bool has_bg = trimap.count(TrimapLabel::background) > 0;
    const std::vector<float> d_fg = has_fg ? distance_to(trimap, TrimapLabel::foreground) : std::vector<float>{};
    const std::vector<float> d_bg = has_bg ? distance_to(trimap, TrimapLabel::background) : std::vector<float>{};
    const double r = std::max(trimap.radius, 1);
    const double sigma = r / 2.0;
    for (size_t i = 0; i < a.alpha.size(); ++i) {
        switch (static_cast<TrimapLabel>(trimap.labels[i])) {
        case TrimapLabel::foreground: a.alpha[i] = 1.0f; break;
        case TrimapLabel::background: a.alpha[i] = 0.0f; break;
        case TrimapLabel::unknown: {
            // Signed distance to the middle of the unknown band, positive inwards.
            double s = 0.0;
            if (has_fg && has_bg) {
                s = (d_bg[i] - d_fg[i]) / 2.0;
            } else if (has_bg) {
                s = d_bg[i] - (r + 0.5);
            } else if (has_fg) {
                s = (r + 0.5) - d_fg[i];
            }
            a.alpha[i] = static_cast<float>(normal_cdf(s / sigma));
            break;
        }
        }
    }
    return a;
}

AlphaMatte FeatheredMatte::estimate(const Image& image, const Trimap& trimap, const std::string&) const {
    return estimate_alpha(image, trimap);
}

FileMatte::FileMatte(std::filesystem::path dir) : dir_(std::move(dir)) {}

AlphaMatte FileMatte::estimate(const Image& image, const Trimap& trimap, const std::string& key) const {
    const auto path = dir_ / (key + ".png");
    if (!std::filesystem::exists(path)) {
        throw FileNotFound(path.string());
    }
    ProbMap gray = read_gray(path);
    if (gray.height() != image.height() || gray.width() != image.width()) {
        throw ShapeMismatch("external matte " + path.string() + " does not match its image");
    }
    AlphaMatte a;
    a.height = gray.height();
    a.width = gray.width();
    a.alpha.assign(gray.probs().begin(), gray.probs().end());
    for (size_t i = 0; i < a.alpha.size(); ++i) {
        if (trimap.labels[i] == static_cast<uint8_t>(TrimapLabel::foreground)) {
            a.alpha[i] = 1.0f;
        } else if (trimap.labels[i] == static_cast<uint8_t>(TrimapLabel::background)) {
            a.alpha[i] = 0.0f;
        }
    }
    return a;
}

ManipulationParams sample_manipulation(GenRng& rng, double op_probability) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::uniform_real_distribution<double> factor(0.5, 2.0);
    std::uniform_real_distribution<double> angle(-180.0, 180.0);
    std::uniform_int_distribution<int> flip(1, 3);
    ManipulationParams p;
    p.apply_scale = u01(rng) < op_probability;
    p.apply_rotation = u01(rng) < op_probability;
    p.apply_flip = u01(rng) < op_probability;
    p.apply_deform = u01(rng) < op_probability;
    if (p.apply_scale) {
        p.scale = factor(rng);
    }
    if (p.apply_rotation) {
        p.rotation_deg = angle(rng);
    }
    if (p.apply_flip) {
        p.flip = static_cast<Flip>(flip(rng));
    }
    if (p.apply_deform) {
        p.deform_x = factor(rng);
        p.deform_y = factor(rng);
    }
    return p;
}

namespace {

AlphaMatte matte_from_mat(const cv::Mat& m) {
    AlphaMatte a;
    a.height = m.rows;
    a.width = m.cols;
    a.alpha = cvb::values_from_mat(m);
    for (float& v : a.alpha) {
        v = std::clamp(v, 0.0f, 1.0f);
    }
    return a;
}

void check_region(const Image& fg, const AlphaMatte& alpha) {
    if (fg.height() != alpha.height || fg.width() != alpha.width) {
        throw ShapeMismatch("foreground and alpha sizes differ");
    }
}

} // namespace

Region apply_manipulation_chain(const Image& fg, const AlphaMatte& alpha, const ManipulationParams& p) {
    p.validate();
    check_region(fg, alpha);
    if (p.is_identity()) {
        return {fg, alpha};
    }
    cv::Mat color = cvb::to_mat(fg);
    cv::Mat a = cvb::to_mat(alpha.alpha, alpha.height, alpha.width);

    const double sx = (p.apply_scale ? p.scale : 1.0) * (p.apply_deform ? p.deform_x : 1.0);
    const double sy = (p.apply_scale ? p.scale : 1.0) * (p.apply_deform ? p.deform_y : 1.0);
    if (sx != 1.0 || sy != 1.0) {
        const cv::Size size(std::max(1, static_cast<int>(std::lround(color.cols * sx))),
                            std::max(1, static_cast<int>(std::lround(color.rows * sy))));
        cv::resize(color, color, size, 0, 0, cv::INTER_CUBIC);
        cv::resize(a, a, size, 0, 0, cv::INTER_CUBIC);
    }
    if (p.apply_rotation && p.rotation_deg != 0.0) {
        const double w = color.cols, h = color.rows;
        const cv::Point2f center(static_cast<float>((w - 1) / 2), static_cast<float>((h - 1) / 2));
        cv::Mat m = cv::getRotationMatrix2D(center, p.rotation_deg, 1.0);
        const double c = std::abs(m.at<double>(0, 0)), s = std::abs(m.at<double>(0, 1));
        const int nw = static_cast<int>(std::ceil(h * s + w * c));
        const int nh = static_cast<int>(std::ceil(h * c + w * s));
        m.at<double>(0, 2) += (nw - 1) / 2.0 - center.x;
        m.at<double>(1, 2) += (nh - 1) / 2.0 - center.y;
        cv::warpAffine(color, color, m, cv::Size(nw, nh), cv::INTER_CUBIC, cv::BORDER_CONSTANT, cv::Scalar::all(0));
        cv::warpAffine(a, a, m, cv::Size(nw, nh), cv::INTER_CUBIC, cv::BORDER_CONSTANT, cv::Scalar::all(0));
    }
    if (p.apply_flip && p.flip != Flip::none) {
        const int code = p.flip == Flip::horizontal ? 1 : p.flip == Flip::vertical ? 0 : -1;
        cv::flip(color, color, code);
        cv::flip(a, a, code);
    }
    return {cvb::from_mat(color), matte_from_mat(a)};
}

Region rescale_region(const Region& region, double factor) {
    check_region(region.color, region.alpha);
    const cv::Size size(std::max(1, static_cast<int>(std::lround(region.color.width() * factor))),
                        std::max(1, static_cast<int>(std::lround(region.color.height() * factor))));
    cv::Mat color, a;
    cv::resize(cvb::to_mat(region.color), color, size, 0, 0, cv::INTER_CUBIC);
    cv::resize(cvb::to_mat(region.alpha.alpha, region.alpha.height, region.alpha.width), a, size, 0, 0,
               cv::INTER_CUBIC);
    return {cvb::from_mat(color), matte_from_mat(a)};
}

double placed_area_ratio(const AlphaMatte& alpha, int offset_x, int offset_y, int height, int width) {
    int64_t covered = 0;
    const int y0 = std::max(0, -offset_y), y1 = std::min(alpha.height, height - offset_y);
    const int x0 = std::max(0, -offset_x), x1 = std::min(alpha.width, width - offset_x);
    for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
            covered += alpha.at(y, x) > 0.5f;
        }
    }
    return static_cast<double>(covered) / (static_cast<double>(height) * width);
}

Placement place_region(Region& region, int height, int width, GenRng& rng, const PlacementConfig& cfg) {
    Placement out;
    for (int round = 0; round <= cfg.max_rescales; ++round) {
        const int rw = region.alpha.width, rh = region.alpha.height;
        const int hang_x = static_cast<int>(std::floor(cfg.overhang * rw));
        const int hang_y = static_cast<int>(std::floor(cfg.overhang * rh));
        const int x_lo = -hang_x, x_hi = width - rw + hang_x;
        const int y_lo = -hang_y, y_hi = height - rh + hang_y;
        if (x_lo <= x_hi && y_lo <= y_hi) {
            std::uniform_int_distribution<int> dx(x_lo, x_hi), dy(y_lo, y_hi);
            for (int t = 0; t < cfg.retries; ++t) {
                const int ox = dx(rng), oy = dy(rng);
                ++out.attempts;
                const double ratio = placed_area_ratio(region.alpha, ox, oy, height, width);
                if (ratio >= cfg.min_area && ratio <= cfg.max_area) {
                    out.offset_x = ox;
                    out.offset_y = oy;
                    out.area_ratio = ratio;
                    return out;
                }
            }
        }
        if (round == cfg.max_rescales) {
            break;
        }
        const double support =
            static_cast<double>(region.alpha.above(0.5).count()) / (static_cast<double>(height) * width);
        const bool too_big = x_lo > x_hi || y_lo > y_hi || support > cfg.max_area;
        const double factor = too_big ? cfg.shrink : cfg.grow;
        region = rescale_region(region, factor);
        out.scale *= factor;
    }
    throw PlacementFailed("no placement with area ratio in [" + std::to_string(cfg.min_area) + ", " +
                          std::to_string(cfg.max_area) + "] after " + std::to_string(out.attempts) +
                          " attempts");
}

Composite alpha_blend(const Image& fg, const AlphaMatte& alpha, const Image& bg, int offset_x,
                      int offset_y, int confine_radius) {
    check_region(fg, alpha);
    const int h = bg.height(), w = bg.width();
    std::vector<float> canvas(static_cast<size_t>(h) * w, 0.0f);
    const int y0 = std::max(0, -offset_y), y1 = std::min(alpha.height, h - offset_y);
    const int x0 = std::max(0, -offset_x), x1 = std::min(alpha.width, w - offset_x);
    for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
            canvas[static_cast<size_t>(y + offset_y) * w + (x + offset_x)] = alpha.at(y, x);
        }
    }
    std::vector<uint8_t> labels(canvas.size());
    for (size_t i = 0; i < canvas.size(); ++i) {
        labels[i] = canvas[i] > 0.5f ? 1 : 0;
    }
    Composite c;
    c.mask = BinaryMask(h, w, std::move(labels));
    if (confine_radius >= 0) {
        BinaryMask allowed = dilate_disk(c.mask, confine_radius);
        for (size_t i = 0; i < canvas.size(); ++i) {
            if (!allowed.labels()[i]) {
                canvas[i] = 0.0f;
            }
        }
    }
    std::vector<float> px(bg.pixels().begin(), bg.pixels().end());
    for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
            const size_t ci = static_cast<size_t>(y + offset_y) * w + (x + offset_x);
            const float a = canvas[ci];
            if (a <= 0.0f) {
                continue;
            }
            for (int k = 0; k < 3; ++k) {
                px[ci * 3 + k] = a * fg.at(y, x, k) + (1.0f - a) * px[ci * 3 + k];
            }
        }
    }
    c.image = Image(h, w, std::move(px));
    return c;
}

namespace {

constexpr double kLogOffset = 1.0 / 255.0;

const Eigen::Matrix3d& rgb_to_lms() {
    static const Eigen::Matrix3d m = (Eigen::Matrix3d() << 0.3811, 0.5783, 0.0402,  //
                                      0.1967, 0.7244, 0.0782,                      //
                                      0.0241, 0.1288, 0.8444)
                                         .finished();
    return m;
}

const Eigen::Matrix3d& lms_to_rgb() {
    static const Eigen::Matrix3d m = rgb_to_lms().inverse();
    return m;
}

const Eigen::Matrix3d& log_lms_to_lab() {
    static const Eigen::Matrix3d m = [] {
        Eigen::Matrix3d a;
        a << 1, 1, 1, 1, 1, -2, 1, -1, 0;
        Eigen::Vector3d s(1 / std::sqrt(3.0), 1 / std::sqrt(6.0), 1 / std::sqrt(2.0));
        return Eigen::Matrix3d(s.asDiagonal() * a);
    }();
    return m;
}

const Eigen::Matrix3d& lab_to_log_lms() {
    static const Eigen::Matrix3d m = log_lms_to_lab().inverse();
    return m;
}

} // namespace

std::array<double, 3> rgb_to_lab(const std::array<double, 3>& rgb) {
    Eigen::Vector3d lms = rgb_to_lms() * Eigen::Vector3d(rgb[0], rgb[1], rgb[2]);
    for (int k = 0; k < 3; ++k) {
        lms[k] = std::log10(std::max(lms[k], 0.0) + kLogOffset);
    }
    Eigen::Vector3d lab = log_lms_to_lab() * lms;
    return {lab[0], lab[1], lab[2]};
}

std::array<double, 3> lab_to_rgb(const std::array<double, 3>& lab) {
    Eigen::Vector3d lms = lab_to_log_lms() * Eigen::Vector3d(lab[0], lab[1], lab[2]);
    for (int k = 0; k < 3; ++k) {
        lms[k] = std::pow(10.0, lms[k]) - kLogOffset;
    }
    Eigen::Vector3d rgb = lms_to_rgb() * lms;
    return {rgb[0], rgb[1], rgb[2]};
}

ColorStats lab_stats(const Image& image, const BinaryMask& mask, bool inside) {
    std::array<double, 3> sum{}, sq{};
    int64_t n = 0;
    for (int y = 0; y < image.height(); ++y) {
        for (int x = 0; x < image.width(); ++x) {
            if ((mask.at(y, x) != 0) != inside) {
                continue;
            }
            auto lab = rgb_to_lab({image.at(y, x, 0), image.at(y, x, 1), image.at(y, x, 2)});
            for (int k = 0; k < 3; ++k) {
                sum[k] += lab[k];
                sq[k] += lab[k] * lab[k];
            }
            ++n;
        }
    }
    ColorStats s;
    if (n == 0) {
        return s;
    }
    for (int k = 0; k < 3; ++k) {
        s.mean[k] = sum[k] / n;
        s.stdev[k] = std::sqrt(std::max(0.0, sq[k] / n - s.mean[k] * s.mean[k]));
    }
    return s;
}

Image harmonize(const Image& composite, const BinaryMask& mask, const Image& bg, double strength) {
    if (mask.count() == 0) {
        throw EmptyMask("harmonization needs a nonempty mask");
    }
    if (composite.height() != mask.height() || composite.width() != mask.width() ||
        bg.height() != mask.height() || bg.width() != mask.width()) {
        throw ShapeMismatch("harmonize: composite, mask and background sizes differ");
    }
    if (!(strength >= 0.0 && strength <= 1.0)) {
        throw ParamOutOfRange("harmonization strength must lie in [0,1]");
    }
    if (strength == 0.0) {
        return composite;
    }
    const ColorStats in = lab_stats(composite, mask, true);
    const bool has_outside = mask.count() < static_cast<int64_t>(mask.labels().size());
    const ColorStats target = has_outside ? lab_stats(bg, mask, false)
                                          : lab_stats(bg, BinaryMask::zeros(mask.height(), mask.width()), false);
    std::array<double, 3> gain{}, mean{};
    for (int k = 0; k < 3; ++k) {
        mean[k] = in.mean[k] + strength * (target.mean[k] - in.mean[k]);
        const double sd = in.stdev[k] + strength * (target.stdev[k] - in.stdev[k]);
        gain[k] = in.stdev[k] > 1e-12 ? sd / in.stdev[k] : 1.0;
    }
    std::vector<float> px(composite.pixels().begin(), composite.pixels().end());
    for (int y = 0; y < composite.height(); ++y) {
        for (int x = 0; x < composite.width(); ++x) {
            if (!mask.at(y, x)) {
                continue;
            }
            const size_t i = (static_cast<size_t>(y) * composite.width() + x) * 3;
            auto lab = rgb_to_lab({px[i], px[i + 1], px[i + 2]});
            for (int k = 0; k < 3; ++k) {
                lab[k] = (lab[k] - in.mean[k]) * gain[k] + mean[k];
            }
            auto rgb = lab_to_rgb(lab);
            for (int k = 0; k < 3; ++k) {
                px[i + k] = static_cast<float>(std::clamp(rgb[k], 0.0, 1.0));
            }
        }
    }
    return Image(composite.height(), composite.width(), std::move(px));
}

void to_json(nlohmann::json& j, const GeneratorConfig& c) {
    j = {{"trimap_radius", c.trimap_radius},
         {"reference_diagonal", c.reference_diagonal},
         {"op_probability", c.op_probability},
         {"harmonize_probability", c.harmonize_probability},
         {"harmonize_strength_min", c.harmonize_strength_min},
         {"harmonize_strength_max", c.harmonize_strength_max},
         {"min_area", c.placement.min_area},
         {"max_area", c.placement.max_area},
         {"placement_retries", c.placement.retries},
         {"max_rescales", c.placement.max_rescales},
         {"shrink", c.placement.shrink},
         {"grow", c.placement.grow},
         {"overhang", c.placement.overhang},
         {"sample_retries", c.sample_retries}};
}

void from_json(const nlohmann::json& j, GeneratorConfig& c) {
    reject_unknown_keys(j,
                        {"trimap_radius", "reference_diagonal", "op_probability", "harmonize_probability",
                         "harmonize_strength_min", "harmonize_strength_max", "min_area", "max_area",
                         "placement_retries", "max_rescales", "shrink", "grow", "overhang", "sample_retries"},
                        "generator config");
    c.trimap_radius = j.value("trimap_radius", c.trimap_radius);
    c.reference_diagonal = j.value("reference_diagonal", c.reference_diagonal);
    c.op_probability = j.value("op_probability", c.op_probability);
    c.harmonize_probability = j.value("harmonize_probability", c.harmonize_probability);
    c.harmonize_strength_min = j.value("harmonize_strength_min", c.harmonize_strength_min);
    c.harmonize_strength_max = j.value("harmonize_strength_max", c.harmonize_strength_max);
    c.placement.min_area = j.value("min_area", c.placement.min_area);
    c.placement.max_area = j.value("max_area", c.placement.max_area);
    c.placement.retries = j.value("placement_retries", c.placement.retries);
    c.placement.max_rescales = j.value("max_rescales", c.placement.max_rescales);
    c.placement.shrink = j.value("shrink", c.placement.shrink);
    c.placement.grow = j.value("grow", c.placement.grow);
    c.placement.overhang = j.value("overhang", c.placement.overhang);
    c.sample_retries = j.value("sample_retries", c.sample_retries);
    auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (c.trimap_radius < 1 || !(c.reference_diagonal > 0) || !prob(c.op_probability) ||
        !prob(c.harmonize_probability) || !prob(c.harmonize_strength_min) || !prob(c.harmonize_strength_max) ||
        c.harmonize_strength_min > c.harmonize_strength_max || !(c.placement.min_area > 0) ||
        c.placement.min_area > c.placement.max_area || c.placement.max_area > 1 || c.placement.retries < 1 ||
        c.placement.max_rescales < 0 || !(c.placement.shrink > 0 && c.placement.shrink < 1) ||
        !(c.placement.grow > 1) || c.placement.overhang < 0 || c.sample_retries < 1) {
        throw ConfigError("generator config value out of range");
    }
}

int effective_trimap_radius(const GeneratorConfig& cfg, int height, int width) {
    const double diag = std::hypot(static_cast<double>(height), static_cast<double>(width));
    return std::max(1, static_cast<int>(std::lround(cfg.trimap_radius * diag / cfg.reference_diagonal)));
}

uint64_t splitmix64(uint64_t x) {
    uint64_t z = x + 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

uint64_t sample_seed(uint64_t global_seed, uint64_t index) { return splitmix64(global_seed ^ splitmix64(index)); }

bool is_splice(size_t index, double splice_fraction) {
    const double i = static_cast<double>(index);
    return std::floor((i + 1.0) * splice_fraction) > std::floor(i * splice_fraction);
}

namespace {

struct Box {
    int x0, y0, x1, y1;  // half-open
};

Box support_box(const AlphaMatte& a) {
    Box b{a.width, a.height, 0, 0};
    for (int y = 0; y < a.height; ++y) {
        for (int x = 0; x < a.width; ++x) {
            if (a.at(y, x) > 0.0f) {
                b.x0 = std::min(b.x0, x);
                b.y0 = std::min(b.y0, y);
                b.x1 = std::max(b.x1, x + 1);
                b.y1 = std::max(b.y1, y + 1);
            }
        }
    }
    return b;
}

Region crop_region(const Image& image, const AlphaMatte& alpha, const Box& b) {
    const int w = b.x1 - b.x0, h = b.y1 - b.y0;
    std::vector<float> px(static_cast<size_t>(w) * h * 3);
    AlphaMatte a;
    a.height = h;
    a.width = w;
    a.alpha.resize(static_cast<size_t>(w) * h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const size_t o = static_cast<size_t>(y) * w + x;
            a.alpha[o] = alpha.at(y + b.y0, x + b.x0);
            for (int k = 0; k < 3; ++k) {
                px[o * 3 + k] = image.at(y + b.y0, x + b.x0, k);
            }
        }
    }
    return {Image(h, w, std::move(px)), std::move(a)};
}

} // namespace

ForgerySample generate_sample(const Image& fg, const BinaryMask& fg_mask, const Image& bg, ForgeryMode mode,
                              uint64_t seed, const GeneratorConfig& cfg, const MatteSource* matte,
                              Provenance provenance) {
    validate_pair(fg, fg_mask);
    if (fg_mask.count() == 0) {
        throw EmptyMask("source annotation is empty");
    }
    if (mode == ForgeryMode::splice) {
        bg.validate();
    }
    GenRng rng(seed);
    const Image base = quantize_8bit(mode == ForgeryMode::copymove ? fg : bg);

    const int radius = effective_trimap_radius(cfg, fg.height(), fg.width());
    const Trimap trimap = build_trimap(fg_mask, radius);
    const AlphaMatte alpha =
        matte ? matte->estimate(fg, trimap, provenance.annotation_id) : estimate_alpha(fg, trimap);
    const Box box = support_box(alpha);
    if (box.x1 <= box.x0 || box.y1 <= box.y0) {
        throw EmptyMask("matte has no support");
    }
    const Region source = crop_region(fg, alpha, box);

    const ManipulationParams params = sample_manipulation(rng, cfg.op_probability);
    Region region = apply_manipulation_chain(source.color, source.alpha, params);
    const Placement placement = place_region(region, base.height(), base.width(), rng, cfg.placement);

    const double stretch = (params.apply_scale ? params.scale : 1.0) *
                           (params.apply_deform ? std::max(params.deform_x, params.deform_y) : 1.0) *
                           placement.scale;
    const int feather = static_cast<int>(std::ceil(radius * std::max(1.0, stretch))) + 2;
    Composite composite =
        alpha_blend(region.color, region.alpha, base, placement.offset_x, placement.offset_y, feather);

    std::uniform_real_distribution<double> u01(0.0, 1.0);
    ForgerySample s;
    s.harmonized = u01(rng) < cfg.harmonize_probability;
    if (s.harmonized) {
        s.harmonize_strength =
            cfg.harmonize_strength_min + (cfg.harmonize_strength_max - cfg.harmonize_strength_min) * u01(rng);
        composite.image = harmonize(composite.image, composite.mask, base, s.harmonize_strength);
    }
    s.image = quantize_8bit(composite.image);
    s.mask = std::move(composite.mask);
    s.mode = mode;
    s.seed = seed;
    s.params = params;
    if (mode == ForgeryMode::copymove) {
        provenance.background_id = provenance.foreground_id;
    }
    s.provenance = std::move(provenance);
    s.offset_x = placement.offset_x;
    s.offset_y = placement.offset_y;
    s.placement_scale = placement.scale;
    s.trimap_radius = radius;
    s.feather_radius = feather;
    const double ratio = s.mask.area_ratio();
    if (ratio < cfg.placement.min_area || ratio > cfg.placement.max_area) {
        throw PlacementFailed("composited mask area ratio " + std::to_string(ratio) + " out of range");
    }
    return s;
}

size_t SourcePool::add_image(std::string id, Image image) {
    images_.push_back({std::move(id), {}, std::move(image)});
    return images_.size() - 1;
}

size_t SourcePool::add_image_file(std::string id, std::filesystem::path path) {
    images_.push_back({std::move(id), std::move(path), std::nullopt});
    return images_.size() - 1;
}

void SourcePool::add_object(size_t image_index, std::string annotation_id, BinaryMask mask) {
    objects_.push_back({image_index, std::move(annotation_id), std::move(mask), {}, 0, 0});
}

void SourcePool::add_object(size_t image_index, std::string annotation_id, nlohmann::json segmentation,
                            int height, int width) {
    objects_.push_back({image_index, std::move(annotation_id), std::nullopt, std::move(segmentation), height, width});
}

Image SourcePool::image(size_t i) const {
    const ImageEntry& e = images_.at(i);
    return e.image ? *e.image : read_image(e.path);
}

BinaryMask SourcePool::object_mask(size_t i) const {
    const ObjectEntry& o = objects_.at(i);
    return o.mask ? *o.mask : annotation_mask(o.segmentation, o.height, o.width);
}

SourcePool pool_from_coco(const CocoManifest& manifest) {
    SourcePool pool;
    std::map<int64_t, size_t> by_id;
    for (const CocoImage& img : manifest.images) {
        by_id[img.id] = pool.add_image_file(std::to_string(img.id), manifest.image_root / img.file_name);
    }
    for (const CocoAnnotation& ann : manifest.annotations) {
        if (ann.iscrowd) {
            continue;
        }
        auto it = by_id.find(ann.image_id);
        if (it == by_id.end()) {
            continue;
        }
        const CocoImage& img = manifest.image(ann.image_id);
        pool.add_object(it->second, std::to_string(ann.id), ann.segmentation, img.height, img.width);
    }
    return pool;
}

SourcePool make_synthetic_pool(int count, int height, int width, uint64_t seed) {
    SourcePool pool;
    for (int i = 0; i < count; ++i) {
        GenRng rng(sample_seed(seed, static_cast<uint64_t>(i)));
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        std::normal_distribution<double> noise(0.0, 1.0);
        std::array<double, 3> c0{}, c1{}, obj{};
        for (int k = 0; k < 3; ++k) {
            c0[k] = 0.2 + 0.6 * u01(rng);
            c1[k] = 0.2 + 0.6 * u01(rng);
        }
        // Object hue roughly opposite the background's average.
        for (int k = 0; k < 3; ++k) {
            obj[k] = std::clamp(1.0 - 0.5 * (c0[k] + c1[k]) + 0.2 * (u01(rng) - 0.5), 0.1, 0.9);
        }
        const double theta = 2.0 * std::numbers::pi * u01(rng);
        const double fx = 0.5 + 1.5 * u01(rng), fy = 0.5 + 1.5 * u01(rng), phase = 2 * std::numbers::pi * u01(rng);
        const double cx = width * (0.3 + 0.4 * u01(rng)), cy = height * (0.3 + 0.4 * u01(rng));
        const double ax = width * (0.1 + 0.15 * u01(rng)), ay = height * (0.1 + 0.15 * u01(rng));
        const double rot = std::numbers::pi * u01(rng);
        const double cr = std::cos(rot), sr = std::sin(rot);

        std::vector<float> px(static_cast<size_t>(height) * width * 3);
        std::vector<uint8_t> labels(static_cast<size_t>(height) * width);
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                const double u = static_cast<double>(x) / width, v = static_cast<double>(y) / height;
                const double t = std::clamp(0.5 + 0.5 * ((u - 0.5) * std::cos(theta) + (v - 0.5) * std::sin(theta)) * 1.4, 0.0, 1.0);
                const double wave = 0.05 * std::sin(2 * std::numbers::pi * (fx * u + fy * v) + phase);
                const double ex = ((x - cx) * cr + (y - cy) * sr) / ax;
                const double ey = (-(x - cx) * sr + (y - cy) * cr) / ay;
                const bool inside = ex * ex + ey * ey <= 1.0;
                const size_t o = static_cast<size_t>(y) * width + x;
                labels[o] = inside ? 1 : 0;
                for (int k = 0; k < 3; ++k) {
                    const double value = inside ? obj[k] + 0.08 * noise(rng)
                                                : c0[k] + (c1[k] - c0[k]) * t + wave + 0.01 * noise(rng);
                    px[o * 3 + k] = static_cast<float>(std::clamp(value, 0.0, 1.0));
                }
            }
        }
        char id[32];
        std::snprintf(id, sizeof id, "synthetic_%04d", i);
        const size_t index = pool.add_image(id, quantize_8bit(Image(height, width, std::move(px))));
        pool.add_object(index, std::string(id) + "_obj", BinaryMask(height, width, std::move(labels)));
    }
    return pool;
}

namespace {

std::string numbered(size_t i, const char* ext) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%06zu.%s", i, ext);
    return buf;
}

void write_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw Error("cannot write " + path.string());
    }
}

std::optional<IndexEntry> reuse_existing(const std::filesystem::path& root, const IndexEntry& expected) {
    const auto meta = root / expected.meta;
    if (!std::filesystem::exists(meta) || !std::filesystem::exists(root / expected.image) ||
        !std::filesystem::exists(root / expected.mask)) {
        return std::nullopt;
    }
    try {
        std::ifstream in(meta);
        nlohmann::json j = nlohmann::json::parse(in);
        return j.at("index_entry").get<IndexEntry>();
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

} // namespace

GenerateReport generate_dataset(const SourcePool& pool, const std::filesystem::path& out_dir, size_t n,
                                double splice_fraction, uint64_t seed, const GeneratorConfig& cfg, int workers,
                                const MatteSource* matte) {
    if (pool.object_count() == 0 || pool.image_count() == 0) {
        throw DataUnavailable("source pool has no annotated objects");
    }
    if (!(splice_fraction >= 0.0 && splice_fraction <= 1.0)) {
        throw ParamOutOfRange("mode mix must lie in [0,1]");
    }
    for (const char* sub : {"images", "masks", "meta"}) {
        std::filesystem::create_directories(out_dir / sub);
    }
    std::vector<std::optional<IndexEntry>> results(n);
    std::vector<std::pair<size_t, std::string>> skipped;
    std::atomic<size_t> reused{0};
    std::mutex mu;

    auto produce = [&](size_t i) {
        IndexEntry e;
        e.index = i;
        e.image = "images/" + numbered(i, "png");
        e.mask = "masks/" + numbered(i, "png");
        e.meta = "meta/" + numbered(i, "json");
        if (auto existing = reuse_existing(out_dir, e)) {
            results[i] = std::move(existing);
            ++reused;
            return;
        }
        const uint64_t base_seed = sample_seed(seed, i);
        e.mode = is_splice(i, splice_fraction) ? ForgeryMode::splice : ForgeryMode::copymove;
        std::string last_error;
        for (int attempt = 0; attempt < std::max(1, cfg.sample_retries); ++attempt) {
            const uint64_t s = attempt == 0 ? base_seed : splitmix64(base_seed + static_cast<uint64_t>(attempt));
            GenRng pick(splitmix64(s ^ 0x5bd1e995ULL));
            const size_t obj = std::uniform_int_distribution<size_t>(0, pool.object_count() - 1)(pick);
            const size_t fg_index = pool.object_image(obj);
            size_t bg_index = fg_index;
            if (e.mode == ForgeryMode::splice && pool.image_count() > 1) {
                bg_index = std::uniform_int_distribution<size_t>(0, pool.image_count() - 2)(pick);
                if (bg_index >= fg_index) {
                    ++bg_index;
                }
            }
            try {
                const Image fg = pool.image(fg_index);
                const Image bg = bg_index == fg_index ? fg : pool.image(bg_index);
                Provenance prov{pool.image_id(fg_index), pool.image_id(bg_index), pool.object_id(obj)};
                ForgerySample sample = generate_sample(fg, pool.object_mask(obj), bg, e.mode, s, cfg, matte, prov);
                const auto image_png = encode_png(sample.image);
                const auto mask_png = encode_png(sample.mask);
                e.seed = s;
                e.image_hash = fnv1a_hex(image_png);
                e.mask_hash = fnv1a_hex(mask_png);
                write_bytes(out_dir / e.image, image_png);
                write_bytes(out_dir / e.mask, mask_png);
                nlohmann::json meta = sample.metadata();
                meta["index_entry"] = e;
                const auto tmp = out_dir / (e.meta + ".tmp");
                {
                    std::ofstream out(tmp, std::ios::trunc);
                    out << meta.dump(2) << '\n';
                }
                std::filesystem::rename(tmp, out_dir / e.meta);
                results[i] = e;
                return;
            } catch (const PlacementFailed& err) {
                last_error = err.what();
            } catch (const EmptyMask& err) {
                last_error = err.what();
            } catch (const ShapeMismatch& err) {
                last_error = err.what();
            }
        }
        std::lock_guard lock(mu);
        std::cerr << "warning: sample " << i << " skipped: " << last_error << '\n';
        skipped.emplace_back(i, last_error);
    };

    const size_t n_workers = std::max<size_t>(1, std::min<size_t>(static_cast<size_t>(std::max(1, workers)), n));
    if (n_workers == 1) {
        for (size_t i = 0; i < n; ++i) {
            produce(i);
        }
    } else {
        std::atomic<size_t> next{0};
        std::exception_ptr failure;
        std::vector<std::thread> pool_threads;
        for (size_t w = 0; w < n_workers; ++w) {
            pool_threads.emplace_back([&] {
                for (size_t i = next++; i < n; i = next++) {
                    try {
                        produce(i);
                    } catch (...) {
                        std::lock_guard lock(mu);
                        if (!failure) {
                            failure = std::current_exception();
                        }
                    }
                }
            });
        }
        for (auto& t : pool_threads) {
            t.join();
        }
        if (failure) {
            std::rethrow_exception(failure);
        }
    }

    GenerateReport report;
    for (auto& r : results) {
        if (r) {
            report.entries.push_back(std::move(*r));
        }
    }
    std::sort(skipped.begin(), skipped.end());
    report.skipped = std::move(skipped);
    report.reused = reused;
    write_index(out_dir, report.entries);
    report.index_path = out_dir / "index.jsonl";
    return report;
}

} // namespace profact
