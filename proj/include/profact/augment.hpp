#pragma once

#include "profact/datamodel.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace profact {

using AugRng = std::mt19937_64;

struct AugmentConfig {
    /// Side of the square training crop.
    int crop = 512;
    double min_resize = 0.5;
    double max_resize = 2.0;
    /// Allowed forged fraction of the crop.
    double min_forged = 0.05;
    double max_forged = 0.75;
    /// Random (resize, offset) draws before the centroid fallback.
    int crop_tries = 20;
    /// When false, an out-of-range centroid crop is returned instead of throwing.
    bool require_feasible = true;
    double flip_probability = 0.5;
    int min_quality = 70;
    int max_quality = 95;

    /// 512 for stage 1, 1024 for stage 2.
    static AugmentConfig for_stage(int stage);
    void validate() const;
};

void to_json(nlohmann::json& j, const AugmentConfig& c);
void from_json(const nlohmann::json& j, AugmentConfig& c);

/// Transform applied by train_augment, in application order.
struct AugmentRecord {
    double resize = 1.0;
    int crop_x = 0;
    int crop_y = 0;
    bool flipped = false;
    int quality = 0;
    bool fallback = false;
    double forged_fraction = 0.0;
};

struct AugmentedPair {
    Image image;
    BinaryMask mask;
    AugmentRecord record;
};

/// Resize (bilinear image, nearest mask), crop, horizontal flip, then JPEG
/// recompression of the image only. Images smaller than the crop after
/// resizing are zero-padded on the bottom/right (padding is unforged).
/// Throws CropInfeasible when no crop meets the forged-fraction bounds.
AugmentedPair train_augment(const Image& image, const BinaryMask& mask, const AugmentConfig& cfg, AugRng& rng);
ForgerySample train_augment(const ForgerySample& sample, int stage, AugRng& rng);

/// Nearest-neighbour mask resize: output pixel (y, x) reads source
/// (floor((y + 0.5) h / out_h), floor((x + 0.5) w / out_w)).
BinaryMask resize_mask_nearest(const BinaryMask& mask, int out_height, int out_width);

enum class PerturbKind { jpeg, blur, noise, resize };

std::string to_string(PerturbKind kind);
/// Throws UnknownKind.
PerturbKind perturb_kind_from_string(const std::string& name);

/// Levels swept per perturbation kind during robustness evaluation.
struct PerturbGrids {
    std::vector<double> jpeg{50, 60, 70, 80, 90, 100};
    std::vector<double> blur{0, 0.5, 1, 2, 3};
    std::vector<double> noise{0, 0.02, 0.05, 0.1};
    std::vector<double> resize{0.5, 0.75, 1.25, 1.5};

    const std::vector<double>& levels(PerturbKind kind) const;
};

void to_json(nlohmann::json& j, const PerturbGrids& g);
void from_json(const nlohmann::json& j, PerturbGrids& g);

/// jpeg: quality; blur: Gaussian sigma in pixels; noise: Gaussian sigma on
/// the [0,1] scale; resize: factor, resampled back to the input size so the
/// mask still applies. Deterministic in (kind, level, seed).
/// Throws ParamOutOfRange for a level outside the kind's domain.
Image perturb(const Image& image, PerturbKind kind, double level, uint64_t seed = 0);

/// "kind:level" label used in evaluation summaries.
std::string perturb_label(PerturbKind kind, double level);

} // namespace profact
