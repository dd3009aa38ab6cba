#include "profact/augment.hpp"

#include "profact/config.hpp"
#include "profact/error.hpp"
#include "profact/image_io.hpp"
#include "cv_bridge.hpp"

#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace profact {

AugmentConfig AugmentConfig::for_stage(int stage) {
    if (stage != 1 && stage != 2) {
        throw ConfigError("training stage must be 1 or 2, got " + std::to_string(stage));
    }
    AugmentConfig c;
    c.crop = stage == 1 ? 512 : 1024;
    return c;
}

void AugmentConfig::validate() const {
    if (crop < 1) {
        throw ConfigError("augment.crop must be positive");
    }
    if (!(min_resize > 0.0 && min_resize <= max_resize)) {
        throw ConfigError("augment resize range must satisfy 0 < min <= max");
    }
    if (!(min_forged >= 0.0 && min_forged <= max_forged && max_forged <= 1.0)) {
        throw ConfigError("augment forged fraction range must satisfy 0 <= min <= max <= 1");
    }
    if (crop_tries < 1) {
        throw ConfigError("augment.crop_tries must be at least 1");
    }
    if (!(flip_probability >= 0.0 && flip_probability <= 1.0)) {
        throw ConfigError("augment.flip_probability must lie in [0,1]");
    }
    if (min_quality < 1 || min_quality > max_quality || max_quality > 100) {
        throw ConfigError("augment JPEG quality range must satisfy 1 <= min <= max <= 100");
    }
}

void to_json(nlohmann::json& j, const AugmentConfig& c) {
    j = {{"crop", c.crop},
         {"min_resize", c.min_resize},
         {"max_resize", c.max_resize},
         {"min_forged", c.min_forged},
         {"max_forged", c.max_forged},
         {"crop_tries", c.crop_tries},
         {"require_feasible", c.require_feasible},
         {"flip_probability", c.flip_probability},
         {"min_quality", c.min_quality},
         {"max_quality", c.max_quality}};
}

void from_json(const nlohmann::json& j, AugmentConfig& c) {
    reject_unknown_keys(j,
                        {"crop", "min_resize", "max_resize", "min_forged", "max_forged", "crop_tries",
                         "require_feasible", "flip_probability", "min_quality", "max_quality"},
                        "augment");
    c.crop = j.value("crop", c.crop);
    c.min_resize = j.value("min_resize", c.min_resize);
    c.max_resize = j.value("max_resize", c.max_resize);
    c.min_forged = j.value("min_forged", c.min_forged);
    c.max_forged = j.value("max_forged", c.max_forged);
    c.crop_tries = j.value("crop_tries", c.crop_tries);
    c.require_feasible = j.value("require_feasible", c.require_feasible);
    c.flip_probability = j.value("flip_probability", c.flip_probability);
    c.min_quality = j.value("min_quality", c.min_quality);
    c.max_quality = j.value("max_quality", c.max_quality);
}

BinaryMask resize_mask_nearest(const BinaryMask& mask, int out_height, int out_width) {
    if (out_height < 1 || out_width < 1) {
        throw ShapeMismatch("mask resize target must be positive");
    }
    const int h = mask.height(), w = mask.width();
    std::vector<int> src_x(out_width), src_y(out_height);
    for (int x = 0; x < out_width; ++x) {
        src_x[x] = std::min(w - 1, static_cast<int>(std::floor((x + 0.5) * w / out_width)));
    }
    for (int y = 0; y < out_height; ++y) {
        src_y[y] = std::min(h - 1, static_cast<int>(std::floor((y + 0.5) * h / out_height)));
    }
    std::vector<uint8_t> labels(static_cast<size_t>(out_height) * out_width);
    for (int y = 0; y < out_height; ++y) {
        for (int x = 0; x < out_width; ++x) {
            labels[static_cast<size_t>(y) * out_width + x] = mask.at(src_y[y], src_x[x]);
        }
    }
    return BinaryMask(out_height, out_width, std::move(labels));
}

namespace {

int64_t window_count(const BinaryMask& m, int x0, int y0, int size) {
    int64_t n = 0;
    const int x1 = std::min(m.width(), x0 + size), y1 = std::min(m.height(), y0 + size);
    for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
            n += m.at(y, x);
        }
    }
    return n;
}

Image resize_image(const Image& image, int h, int w) {
    if (h == image.height() && w == image.width()) {
        return image;
    }
    cv::Mat out;
    const bool shrinking = static_cast<int64_t>(h) * w < static_cast<int64_t>(image.height()) * image.width();
    cv::resize(cvb::to_mat(image), out, cv::Size(w, h), 0, 0, shrinking ? cv::INTER_AREA : cv::INTER_LINEAR);
    return cvb::from_mat(out);
}

Image crop_padded(const Image& image, int x0, int y0, int size) {
    std::vector<float> px(static_cast<size_t>(size) * size * 3, 0.0f);
    const int x1 = std::min(image.width(), x0 + size), y1 = std::min(image.height(), y0 + size);
    for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
            for (int k = 0; k < 3; ++k) {
                px[(static_cast<size_t>(y - y0) * size + (x - x0)) * 3 + k] = image.at(y, x, k);
            }
        }
    }
    return Image(size, size, std::move(px));
}

BinaryMask crop_padded(const BinaryMask& mask, int x0, int y0, int size) {
    std::vector<uint8_t> labels(static_cast<size_t>(size) * size, 0);
    const int x1 = std::min(mask.width(), x0 + size), y1 = std::min(mask.height(), y0 + size);
    for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
            labels[static_cast<size_t>(y - y0) * size + (x - x0)] = mask.at(y, x);
        }
    }
    return BinaryMask(size, size, std::move(labels));
}

Image hflip(const Image& image) {
    cv::Mat out;
    cv::flip(cvb::to_mat(image), out, 1);
    return cvb::from_mat(out);
}

BinaryMask hflip(const BinaryMask& mask) {
    cv::Mat out;
    cv::flip(cvb::to_mat(mask), out, 1);
    return cvb::mask_from_mat(out);
}

} // namespace

AugmentedPair train_augment(const Image& image, const BinaryMask& mask, const AugmentConfig& cfg, AugRng& rng) {
    cfg.validate();
    validate_pair(image, mask);
    std::uniform_real_distribution<double> resize_dist(cfg.min_resize, cfg.max_resize);
    const double window = static_cast<double>(cfg.crop) * cfg.crop;

    AugmentRecord rec;
    BinaryMask resized;
    bool found = false;
    for (int t = 0; t < cfg.crop_tries && !found; ++t) {
        rec.resize = resize_dist(rng);
        const int rh = std::max(1, static_cast<int>(std::lround(image.height() * rec.resize)));
        const int rw = std::max(1, static_cast<int>(std::lround(image.width() * rec.resize)));
        resized = resize_mask_nearest(mask, rh, rw);
        rec.crop_x = std::uniform_int_distribution<int>(0, std::max(0, rw - cfg.crop))(rng);
        rec.crop_y = std::uniform_int_distribution<int>(0, std::max(0, rh - cfg.crop))(rng);
        rec.forged_fraction = window_count(resized, rec.crop_x, rec.crop_y, cfg.crop) / window;
        found = rec.forged_fraction >= cfg.min_forged && rec.forged_fraction <= cfg.max_forged;
    }
    if (!found) {
        // Centre the crop on the forged centroid at the last drawn scale.
        double sx = 0.0, sy = 0.0;
        int64_t n = 0;
        for (int y = 0; y < resized.height(); ++y) {
            for (int x = 0; x < resized.width(); ++x) {
                if (resized.at(y, x)) {
                    sx += x;
                    sy += y;
                    ++n;
                }
            }
        }
        if (n == 0 && cfg.require_feasible) {
            throw CropInfeasible("mask has no forged pixels at scale " + std::to_string(rec.resize));
        }
        if (n == 0) {
            // Authentic image: keep the last random crop.
            sx = rec.crop_x + cfg.crop / 2.0;
            sy = rec.crop_y + cfg.crop / 2.0;
            n = 1;
        }
        const int cx = static_cast<int>(std::lround(sx / n)), cy = static_cast<int>(std::lround(sy / n));
        rec.crop_x = std::clamp(cx - cfg.crop / 2, 0, std::max(0, resized.width() - cfg.crop));
        rec.crop_y = std::clamp(cy - cfg.crop / 2, 0, std::max(0, resized.height() - cfg.crop));
        rec.forged_fraction = window_count(resized, rec.crop_x, rec.crop_y, cfg.crop) / window;
        rec.fallback = true;
        const bool ok = rec.forged_fraction >= cfg.min_forged && rec.forged_fraction <= cfg.max_forged;
        if (!ok && cfg.require_feasible) {
            throw CropInfeasible("forged fraction " + std::to_string(rec.forged_fraction) + " of the centroid crop lies outside [" +
                                 std::to_string(cfg.min_forged) + ", " + std::to_string(cfg.max_forged) + "]");
        }
    }

    AugmentedPair out;
    out.image = crop_padded(resize_image(image, resized.height(), resized.width()), rec.crop_x, rec.crop_y, cfg.crop);
    out.mask = crop_padded(resized, rec.crop_x, rec.crop_y, cfg.crop);
    rec.flipped = std::bernoulli_distribution(cfg.flip_probability)(rng);
    if (rec.flipped) {
        out.image = hflip(out.image);
        out.mask = hflip(out.mask);
    }
    rec.quality = std::uniform_int_distribution<int>(cfg.min_quality, cfg.max_quality)(rng);
    out.image = jpeg_roundtrip(out.image, rec.quality);
    out.record = rec;
    return out;
}

ForgerySample train_augment(const ForgerySample& sample, int stage, AugRng& rng) {
    AugmentedPair p = train_augment(sample.image, sample.mask, AugmentConfig::for_stage(stage), rng);
    ForgerySample out = sample;
    out.image = std::move(p.image);
    out.mask = std::move(p.mask);
    return out;
}

std::string to_string(PerturbKind kind) {
    switch (kind) {
    case PerturbKind::jpeg: return "jpeg";
    case PerturbKind::blur: return "blur";
    case PerturbKind::noise: return "noise";
    case PerturbKind::resize: return "resize";
    }
    return "jpeg";
}

PerturbKind perturb_kind_from_string(const std::string& name) {
    for (PerturbKind k : {PerturbKind::jpeg, PerturbKind::blur, PerturbKind::noise, PerturbKind::resize}) {
        if (to_string(k) == name) {
            return k;
        }
    }
    throw UnknownKind("unknown perturbation '" + name + "' (expected jpeg, blur, noise or resize)");
}

const std::vector<double>& PerturbGrids::levels(PerturbKind kind) const {
    switch (kind) {
    case PerturbKind::jpeg: return jpeg;
    case PerturbKind::blur: return blur;
    case PerturbKind::noise: return noise;
    case PerturbKind::resize: return resize;
    }
    return jpeg;
}

void to_json(nlohmann::json& j, const PerturbGrids& g) {
    j = {{"jpeg", g.jpeg}, {"blur", g.blur}, {"noise", g.noise}, {"resize", g.resize}};
}

void from_json(const nlohmann::json& j, PerturbGrids& g) {
    reject_unknown_keys(j, {"jpeg", "blur", "noise", "resize"}, "perturbation grids");
    g.jpeg = j.value("jpeg", g.jpeg);
    g.blur = j.value("blur", g.blur);
    g.noise = j.value("noise", g.noise);
    g.resize = j.value("resize", g.resize);
}

Image perturb(const Image& image, PerturbKind kind, double level, uint64_t seed) {
    auto bad = [&](const std::string& why) {
        return ParamOutOfRange(to_string(kind) + " level " + std::to_string(level) + ": " + why);
    };
    if (!std::isfinite(level)) {
        throw bad("not finite");
    }
    switch (kind) {
    case PerturbKind::jpeg: {
        if (level != std::round(level) || level < 1 || level > 100) {
            throw bad("quality must be an integer in [1,100]");
        }
        return jpeg_roundtrip(image, static_cast<int>(level));
    }
    case PerturbKind::blur: {
        if (level < 0) {
            throw bad("sigma must be non-negative");
        }
        if (level == 0) {
            return image;
        }
        const int k = 2 * static_cast<int>(std::ceil(3 * level)) + 1;
        cv::Mat out;
        cv::GaussianBlur(cvb::to_mat(image), out, cv::Size(k, k), level, level, cv::BORDER_REFLECT_101);
        return cvb::from_mat(out);
    }
    case PerturbKind::noise: {
        if (level < 0) {
            throw bad("sigma must be non-negative");
        }
        if (level == 0) {
            return image;
        }
        AugRng rng(seed);
        std::normal_distribution<double> n(0.0, level);
        std::vector<float> px(image.pixels().begin(), image.pixels().end());
        for (float& v : px) {
            v = static_cast<float>(std::clamp(v + n(rng), 0.0, 1.0));
        }
        return Image(image.height(), image.width(), std::move(px));
    }
    case PerturbKind::resize: {
        if (level <= 0) {
            throw bad("factor must be positive");
        }
        if (level == 1) {
            return image;
        }
        const int h = std::max(1, static_cast<int>(std::lround(image.height() * level)));
        const int w = std::max(1, static_cast<int>(std::lround(image.width() * level)));
        return resize_image(resize_image(image, h, w), image.height(), image.width());
    }
    }
    throw UnknownKind("unknown perturbation kind");
}

std::string perturb_label(PerturbKind kind, double level) {
    std::ostringstream ss;
    ss << to_string(kind) << ':' << level;
    return ss.str();
}

} // namespace profact
