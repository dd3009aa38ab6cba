#include "profact/datamodel.hpp"

#include "profact/error.hpp"

#include <algorithm>
#include <cmath>

namespace profact {

namespace {

void check_size(int height, int width, size_t actual, size_t channels, const char* what) {
    if (height < 0 || width < 0 ||
        actual != static_cast<size_t>(height) * static_cast<size_t>(width) * channels) {
        throw ShapeMismatch(std::string(what) + ": " + std::to_string(actual) +
                            " values for " + std::to_string(height) + "x" + std::to_string(width));
    }
}

void check_unit_range(std::span<const float> values, const char* what) {
    for (float v : values) {
        if (!std::isfinite(v) || v < 0.0f || v > 1.0f) {
            throw ValueOutOfRange(std::string(what) + " value " + std::to_string(v) +
                                  " outside [0,1]");
        }
    }
}

// Reflect-101 index into [0, n) for any integer i.
int reflect_index(int i, int n) {
    if (n == 1) {
        return 0;
    }
    const int period = 2 * (n - 1);
    i %= period;
    if (i < 0) {
        i += period;
    }
    return i < n ? i : period - i;
}

int round_up(int v, int multiple) { return std::max(multiple, ((v + multiple - 1) / multiple) * multiple); }

} // namespace

Image::Image(int height, int width, std::vector<float> rgb)
    : height_(height), width_(width), pixels_(std::move(rgb)) {
    check_size(height, width, pixels_.size(), 3, "Image");
}

Image Image::filled(int height, int width, float r, float g, float b) {
    std::vector<float> px(static_cast<size_t>(height) * width * 3);
    for (size_t i = 0; i < px.size(); i += 3) {
        px[i] = r;
        px[i + 1] = g;
        px[i + 2] = b;
    }
    return Image(height, width, std::move(px));
}

void Image::validate() const { check_unit_range(pixels_, "image"); }

BinaryMask::BinaryMask(int height, int width, std::vector<uint8_t> labels)
    : height_(height), width_(width), labels_(std::move(labels)) {
    check_size(height, width, labels_.size(), 1, "BinaryMask");
}

BinaryMask BinaryMask::zeros(int height, int width) {
    return BinaryMask(height, width, std::vector<uint8_t>(static_cast<size_t>(height) * width, 0));
}

BinaryMask BinaryMask::from_values(int height, int width, std::span<const float> values) {
    std::vector<uint8_t> labels(values.size());
    for (size_t i = 0; i < values.size(); ++i) {
        if (values[i] == 0.0f) {
            labels[i] = 0;
        } else if (values[i] == 1.0f) {
            labels[i] = 1;
        } else {
            throw ValueOutOfRange("mask value " + std::to_string(values[i]) + " is not binary");
        }
    }
    return BinaryMask(height, width, std::move(labels));
}

int64_t BinaryMask::count() const {
    return std::count(labels_.begin(), labels_.end(), uint8_t{1});
}

double BinaryMask::area_ratio() const {
    return labels_.empty() ? 0.0 : static_cast<double>(count()) / static_cast<double>(labels_.size());
}

void BinaryMask::validate() const {
    for (uint8_t v : labels_) {
        if (v > 1) {
            throw ValueOutOfRange("mask value " + std::to_string(v) + " is not binary");
        }
    }
}

ProbMap::ProbMap(int height, int width, std::vector<float> probs)
    : height_(height), width_(width), probs_(std::move(probs)) {
    check_size(height, width, probs_.size(), 1, "ProbMap");
}

void ProbMap::validate() const { check_unit_range(probs_, "probability"); }

void validate_pair(const Image& image, const BinaryMask& mask) {
    if (image.height() != mask.height() || image.width() != mask.width()) {
        throw ShapeMismatch("image " + std::to_string(image.height()) + "x" +
                            std::to_string(image.width()) + " vs mask " +
                            std::to_string(mask.height()) + "x" + std::to_string(mask.width()));
    }
    image.validate();
    mask.validate();
}

PaddedImage pad_to_multiple(const Image& image, int multiple) {
    if (multiple < 1) {
        throw ValueOutOfRange("padding multiple must be positive");
    }
    const int h = image.height(), w = image.width();
    const int ph = round_up(h, multiple), pw = round_up(w, multiple);
    if (ph == h && pw == w) {
        return {image, h, w};
    }
    std::vector<float> px(static_cast<size_t>(ph) * pw * 3);
    const auto src = image.pixels();
    for (int y = 0; y < ph; ++y) {
        const int sy = reflect_index(y, h);
        for (int x = 0; x < pw; ++x) {
            const int sx = reflect_index(x, w);
            for (int c = 0; c < 3; ++c) {
                px[(static_cast<size_t>(y) * pw + x) * 3 + c] = src[(static_cast<size_t>(sy) * w + sx) * 3 + c];
            }
        }
    }
    return {Image(ph, pw, std::move(px)), h, w};
}

Image crop_image(const Image& image, int height, int width) {
    if (height > image.height() || width > image.width()) {
        throw ShapeMismatch("crop larger than image");
    }
    std::vector<float> px(static_cast<size_t>(height) * width * 3);
    const auto src = image.pixels();
    for (int y = 0; y < height; ++y) {
        std::copy_n(src.begin() + static_cast<ptrdiff_t>(y) * image.width() * 3, width * 3,
                    px.begin() + static_cast<ptrdiff_t>(y) * width * 3);
    }
    return Image(height, width, std::move(px));
}

ProbMap crop_probmap(const ProbMap& map, int height, int width) {
    if (height > map.height() || width > map.width()) {
        throw ShapeMismatch("crop larger than probability map");
    }
    std::vector<float> px(static_cast<size_t>(height) * width);
    for (int y = 0; y < height; ++y) {
        std::copy_n(map.probs().begin() + static_cast<ptrdiff_t>(y) * map.width(), width,
                    px.begin() + static_cast<ptrdiff_t>(y) * width);
    }
    return ProbMap(height, width, std::move(px));
}

Tensor images_to_tensor(std::span<const Image> images) {
    if (images.empty()) {
        throw ShapeMismatch("no images to stack");
    }
    const int h = images[0].height(), w = images[0].width();
    const int64_t n = static_cast<int64_t>(images.size());
    const int64_t hw = static_cast<int64_t>(h) * w;
    std::vector<double> data(static_cast<size_t>(n * 3 * hw));
    for (int64_t b = 0; b < n; ++b) {
        const Image& img = images[static_cast<size_t>(b)];
        if (img.height() != h || img.width() != w) {
            throw ShapeMismatch("images in a batch must share one size");
        }
        const auto px = img.pixels();
        for (int64_t i = 0; i < hw; ++i) {
            for (int c = 0; c < 3; ++c) {
                data[static_cast<size_t>((b * 3 + c) * hw + i)] = px[static_cast<size_t>(i * 3 + c)];
            }
        }
    }
    return Tensor::from_data({n, 3, h, w}, std::move(data));
}

Tensor image_to_tensor(const Image& image) { return images_to_tensor(std::span<const Image>(&image, 1)); }

Tensor masks_to_tensor(std::span<const BinaryMask> masks) {
    if (masks.empty()) {
        throw ShapeMismatch("no masks to stack");
    }
    const int h = masks[0].height(), w = masks[0].width();
    std::vector<double> data;
    data.reserve(masks.size() * static_cast<size_t>(h) * w);
    for (const BinaryMask& m : masks) {
        if (m.height() != h || m.width() != w) {
            throw ShapeMismatch("masks in a batch must share one size");
        }
        for (uint8_t v : m.labels()) {
            data.push_back(v);
        }
    }
    return Tensor::from_data({static_cast<int64_t>(masks.size()), 1, h, w}, std::move(data));
}

ProbMap probmap_from_tensor(const Tensor& probs, int64_t index) {
    if (probs.rank() != 4 || probs.dim(1) != 1 || index >= probs.dim(0)) {
        throw ShapeMismatch("expected [N,1,H,W] probabilities, got " + shape_str(probs.shape()));
    }
    const int h = static_cast<int>(probs.dim(2)), w = static_cast<int>(probs.dim(3));
    const auto src = probs.data().subspan(static_cast<size_t>(index) * h * w, static_cast<size_t>(h) * w);
    std::vector<float> out(src.size());
    std::transform(src.begin(), src.end(), out.begin(), [](double v) { return static_cast<float>(v); });
    return ProbMap(h, w, std::move(out));
}

Tensor probmap_to_tensor(const ProbMap& map) {
    std::vector<double> data(map.probs().begin(), map.probs().end());
    return Tensor::from_data({1, 1, map.height(), map.width()}, std::move(data));
}

std::string to_string(ForgeryMode mode) { return mode == ForgeryMode::splice ? "splice" : "copymove"; }

ForgeryMode forgery_mode_from_string(const std::string& name) {
    if (name == "splice") {
        return ForgeryMode::splice;
    }
    if (name == "copymove") {
        return ForgeryMode::copymove;
    }
    throw ValueOutOfRange("unknown forgery mode '" + name + "'");
}

std::string to_string(Flip flip) {
    switch (flip) {
    case Flip::none: return "none";
    case Flip::horizontal: return "horizontal";
    case Flip::vertical: return "vertical";
    case Flip::both: return "both";
    }
    return "none";
}

Flip flip_from_string(const std::string& name) {
    for (Flip f : {Flip::none, Flip::horizontal, Flip::vertical, Flip::both}) {
        if (to_string(f) == name) {
            return f;
        }
    }
    throw ValueOutOfRange("unknown flip '" + name + "'");
}

void ManipulationParams::validate() const {
    auto in_range = [](double v, double lo, double hi) { return std::isfinite(v) && v >= lo && v <= hi; };
    if (!in_range(scale, 0.5, 2.0)) {
        throw ParamOutOfRange("scale " + std::to_string(scale) + " outside [0.5, 2.0]");
    }
    if (!in_range(rotation_deg, -180.0, 180.0)) {
        throw ParamOutOfRange("rotation " + std::to_string(rotation_deg) + " outside [-180, 180]");
    }
    if (!in_range(deform_x, 0.5, 2.0) || !in_range(deform_y, 0.5, 2.0)) {
        throw ParamOutOfRange("deformation outside [0.5, 2.0]");
    }
}

bool ManipulationParams::is_identity() const {
    return (!apply_scale || scale == 1.0) && (!apply_rotation || rotation_deg == 0.0) &&
           (!apply_flip || flip == Flip::none) &&
           (!apply_deform || (deform_x == 1.0 && deform_y == 1.0));
}

void to_json(nlohmann::json& j, const ManipulationParams& p) {
    nlohmann::json applied = nlohmann::json::array();
    if (p.apply_scale) applied.push_back("scale");
    if (p.apply_rotation) applied.push_back("rotation");
    if (p.apply_flip) applied.push_back("flip");
    if (p.apply_deform) applied.push_back("deform");
    j = {{"scale", p.scale},
         {"rotation_deg", p.rotation_deg},
         {"flip", to_string(p.flip)},
         {"deform", {p.deform_x, p.deform_y}},
         {"applied_subset", applied}};
}

void from_json(const nlohmann::json& j, ManipulationParams& p) {
    p.scale = j.at("scale").get<double>();
    p.rotation_deg = j.at("rotation_deg").get<double>();
    p.flip = flip_from_string(j.at("flip").get<std::string>());
    p.deform_x = j.at("deform").at(0).get<double>();
    p.deform_y = j.at("deform").at(1).get<double>();
    p.apply_scale = p.apply_rotation = p.apply_flip = p.apply_deform = false;
    for (const auto& name : j.at("applied_subset")) {
        const auto s = name.get<std::string>();
        if (s == "scale") p.apply_scale = true;
        else if (s == "rotation") p.apply_rotation = true;
        else if (s == "flip") p.apply_flip = true;
        else if (s == "deform") p.apply_deform = true;
        else throw ValueOutOfRange("unknown manipulation '" + s + "'");
    }
}

nlohmann::json ForgerySample::metadata() const {
    return {{"mode", to_string(mode)},
            {"seed", seed},
            {"params", params},
            {"provenance",
             {{"foreground", provenance.foreground_id},
              {"background", provenance.background_id},
              {"annotation", provenance.annotation_id}}},
            {"height", image.height()},
            {"width", image.width()},
            {"offset", {offset_x, offset_y}},
            {"placement_scale", placement_scale},
            {"harmonized", harmonized},
            {"harmonize_strength", harmonize_strength},
            {"trimap_radius", trimap_radius},
            {"feather_radius", feather_radius},
            {"mask_area_ratio", mask.area_ratio()}};
}

} // namespace profact
