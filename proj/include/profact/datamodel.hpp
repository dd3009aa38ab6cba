#pragma once

#include "profact/tensor.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace profact {

/// RGB image with values in [0,1], stored interleaved (row, column, channel).
class Image {
public:
    Image() = default;
    /// Throws ShapeMismatch if `rgb` does not hold height*width*3 values.
    Image(int height, int width, std::vector<float> rgb);
    static Image filled(int height, int width, float r, float g, float b);

    int height() const { return height_; }
    int width() const { return width_; }
    bool empty() const { return pixels_.empty(); }
    float at(int y, int x, int c) const { return pixels_[(static_cast<size_t>(y) * width_ + x) * 3 + c]; }
    std::span<const float> pixels() const { return pixels_; }

    /// Throws ValueOutOfRange unless every value is finite and in [0,1].
    void validate() const;

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<float> pixels_;
};

/// Ground-truth labels, 1 = forged pixel.
class BinaryMask {
public:
    BinaryMask() = default;
    BinaryMask(int height, int width, std::vector<uint8_t> labels);
    static BinaryMask zeros(int height, int width);
    /// Throws ValueOutOfRange if any value is not exactly 0 or 1.
    static BinaryMask from_values(int height, int width, std::span<const float> values);

    int height() const { return height_; }
    int width() const { return width_; }
    bool empty() const { return labels_.empty(); }
    uint8_t at(int y, int x) const { return labels_[static_cast<size_t>(y) * width_ + x]; }
    std::span<const uint8_t> labels() const { return labels_; }
    int64_t count() const;
    double area_ratio() const;

    void validate() const;

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<uint8_t> labels_;
};

/// Per-pixel tampering probability in [0,1].
class ProbMap {
public:
    ProbMap() = default;
    ProbMap(int height, int width, std::vector<float> probs);

    int height() const { return height_; }
    int width() const { return width_; }
    float at(int y, int x) const { return probs_[static_cast<size_t>(y) * width_ + x]; }
    std::span<const float> probs() const { return probs_; }

    void validate() const;

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<float> probs_;
};

/// Throws ShapeMismatch or ValueOutOfRange for a corrupt image/mask pair.
void validate_pair(const Image& image, const BinaryMask& mask);

struct PaddedImage {
    Image image;
    int original_height = 0;
    int original_width = 0;
};

/// Reflect-pads on the bottom/right to the smallest multiple of `multiple`.
PaddedImage pad_to_multiple(const Image& image, int multiple = 32);
/// Top-left crop; inverse of pad_to_multiple.
Image crop_image(const Image& image, int height, int width);
ProbMap crop_probmap(const ProbMap& map, int height, int width);

/// Stacks images of identical size into [N,3,H,W].
Tensor images_to_tensor(std::span<const Image> images);
Tensor image_to_tensor(const Image& image);
Tensor masks_to_tensor(std::span<const BinaryMask> masks);
/// Extracts sample `index` of a [N,1,H,W] probability tensor.
ProbMap probmap_from_tensor(const Tensor& probs, int64_t index = 0);
Tensor probmap_to_tensor(const ProbMap& map);

enum class ForgeryMode { splice, copymove };

std::string to_string(ForgeryMode mode);
ForgeryMode forgery_mode_from_string(const std::string& name);

enum class Flip { none, horizontal, vertical, both };

std::string to_string(Flip flip);
Flip flip_from_string(const std::string& name);

/// One draw of the blending manipulation chain. Ops outside `applied_*` are
/// identity regardless of the stored value.
struct ManipulationParams {
    double scale = 1.0;
    double rotation_deg = 0.0;
    Flip flip = Flip::none;
    double deform_x = 1.0;
    double deform_y = 1.0;
    bool apply_scale = false;
    bool apply_rotation = false;
    bool apply_flip = false;
    bool apply_deform = false;

    /// Throws ParamOutOfRange for values outside the allowed ranges.
    void validate() const;
    bool is_identity() const;
};

void to_json(nlohmann::json& j, const ManipulationParams& p);
void from_json(const nlohmann::json& j, ManipulationParams& p);

struct Provenance {
    std::string foreground_id;
    std::string background_id;
    std::string annotation_id;
};

struct ForgerySample {
    Image image;
    BinaryMask mask;
    ForgeryMode mode = ForgeryMode::splice;
    uint64_t seed = 0;
    ManipulationParams params;
    Provenance provenance;
    int offset_x = 0;
    int offset_y = 0;
    double placement_scale = 1.0;
    bool harmonized = false;
    double harmonize_strength = 0.0;
    int trimap_radius = 0;
    /// Radius around the mask that bounds every pixel the composite changed.
    int feather_radius = 0;

    /// Metadata sidecar (everything but pixels).
    nlohmann::json metadata() const;
};

} // namespace profact
