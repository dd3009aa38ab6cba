#pragma once

#include "profact/coco.hpp"
#include "profact/datamodel.hpp"
#include "profact/dataset.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace profact {

using GenRng = std::mt19937_64;

enum class TrimapLabel : uint8_t { background = 0, unknown = 1, foreground = 2 };

struct Trimap {
    int height = 0;
    int width = 0;
    /// Radius the trimap was built with.
    int radius = 0;
    std::vector<uint8_t> labels;

    TrimapLabel at(int y, int x) const {
        return static_cast<TrimapLabel>(labels[static_cast<size_t>(y) * width + x]);
    }
    int64_t count(TrimapLabel label) const;
};

struct AlphaMatte {
    int height = 0;
    int width = 0;
    std::vector<float> alpha;

    float at(int y, int x) const { return alpha[static_cast<size_t>(y) * width + x]; }
    /// 1 where alpha > t.
    BinaryMask above(double t = 0.5) const;
};

/// Morphology with a disk structuring element (offsets with dx^2 + dy^2 <= r^2).
/// Pixels beyond the border count as background.
BinaryMask erode_disk(const BinaryMask& mask, int radius);
BinaryMask dilate_disk(const BinaryMask& mask, int radius);

/// foreground = erode(mask, r), background = not dilate(mask, r), rest unknown.
/// Throws EmptyMask for an empty mask and ParamOutOfRange for r < 1.
Trimap build_trimap(const BinaryMask& mask, int radius);

/// Default matte: 1 on foreground, 0 on background, and a Gaussian CDF of the
/// signed distance to the band's midline (sigma = radius / 2) in between.
AlphaMatte estimate_alpha(const Image& image, const Trimap& trimap);

/// Pluggable matting step.
class MatteSource {
public:
    virtual ~MatteSource() = default;
    /// `key` identifies the source annotation (used by file-backed mattes).
    virtual AlphaMatte estimate(const Image& image, const Trimap& trimap, const std::string& key) const = 0;
};

class FeatheredMatte : public MatteSource {
public:
    AlphaMatte estimate(const Image& image, const Trimap& trimap, const std::string& key) const override;
};

/// Loads <dir>/<key>.png as a precomputed matte (gray / 255), then forces the
/// trimap's definite regions. Throws FileNotFound if the file is missing.
class FileMatte : public MatteSource {
public:
    explicit FileMatte(std::filesystem::path dir);
    AlphaMatte estimate(const Image& image, const Trimap& trimap, const std::string& key) const override;

private:
    std::filesystem::path dir_;
};

/// Color and alpha of a foreground object, cropped to its support.
struct Region {
    Image color;
    AlphaMatte alpha;
};

/// Each op enabled with probability `op_probability`; values uniform in their ranges.
ManipulationParams sample_manipulation(GenRng& rng, double op_probability = 0.5);

/// Scale/deform (bicubic resize), rotation (bicubic, canvas grown to fit),
/// then flip; color and alpha move together. Identity params copy exactly.
Region apply_manipulation_chain(const Image& fg, const AlphaMatte& alpha, const ManipulationParams& p);

/// Bicubic rescale of a region by `factor` on both axes.
Region rescale_region(const Region& region, double factor);

struct PlacementConfig {
    double min_area = 0.005;
    double max_area = 0.5;
    int retries = 10;
    int max_rescales = 5;
    double shrink = 0.8;
    double grow = 1.25;
    /// Fraction of the region's width/height allowed to hang off the canvas.
    double overhang = 0.25;
};

struct Placement {
    int offset_x = 0;
    int offset_y = 0;
    /// Product of the rescale factors applied to the region.
    double scale = 1.0;
    double area_ratio = 0.0;
    int attempts = 0;
};

/// Fraction of the canvas covered by alpha > 0.5 once pasted at the offset.
double placed_area_ratio(const AlphaMatte& alpha, int offset_x, int offset_y, int height, int width);

/// Draws offsets until the pasted area ratio lies in [min_area, max_area],
/// rescaling the region after each failed round. Throws PlacementFailed.
Placement place_region(Region& region, int height, int width, GenRng& rng, const PlacementConfig& cfg = {});

struct Composite {
    Image image;
    BinaryMask mask;
};

/// "Over" compositing at the offset; mask = pasted alpha > 0.5. With
/// confine_radius >= 0, alpha farther than that from the mask is dropped.
Composite alpha_blend(const Image& fg, const AlphaMatte& alpha, const Image& bg, int offset_x,
                      int offset_y, int confine_radius = -1);

/// Per-channel mean / population std in the decorrelated l-alpha-beta space.
struct ColorStats {
    std::array<double, 3> mean{};
    std::array<double, 3> stdev{};
};

std::array<double, 3> rgb_to_lab(const std::array<double, 3>& rgb);
std::array<double, 3> lab_to_rgb(const std::array<double, 3>& lab);
/// Stats over pixels where mask == `inside`.
ColorStats lab_stats(const Image& image, const BinaryMask& mask, bool inside);

/// Moves the masked region's color statistics toward those of `bg` outside
/// the mask by `strength` in [0,1]. Pixels outside the mask are copied.
Image harmonize(const Image& composite, const BinaryMask& mask, const Image& bg, double strength);

struct GeneratorConfig {
    /// Trimap radius at the reference diagonal; scaled with the source diagonal.
    int trimap_radius = 5;
    double reference_diagonal = 724.0;
    double op_probability = 0.5;
    double harmonize_probability = 0.5;
    double harmonize_strength_min = 0.5;
    double harmonize_strength_max = 1.0;
    PlacementConfig placement;
    /// Attempts per dataset index (fresh sub-seed each) before skipping it.
    int sample_retries = 3;
};

void to_json(nlohmann::json& j, const GeneratorConfig& c);
/// Flat keys; absent keys keep their defaults, unknown keys throw ConfigError.
void from_json(const nlohmann::json& j, GeneratorConfig& c);

int effective_trimap_radius(const GeneratorConfig& cfg, int height, int width);

uint64_t splitmix64(uint64_t x);
/// Seed of sample i under a global seed.
uint64_t sample_seed(uint64_t global_seed, uint64_t index);
/// Sample i is a splice iff floor((i+1) p) > floor(i p), so any prefix holds
/// the closest integer split to fraction p.
bool is_splice(size_t index, double splice_fraction);

/// Full matting, manipulation, placement, blending and harmonization of one
/// sample. For copymove, `bg` is ignored and the object is pasted into its own image.
ForgerySample generate_sample(const Image& fg, const BinaryMask& fg_mask, const Image& bg,
                              ForgeryMode mode, uint64_t seed, const GeneratorConfig& cfg = {},
                              const MatteSource* matte = nullptr, Provenance provenance = {});

/// Images and annotated objects to draw samples from.
class SourcePool {
public:
    size_t add_image(std::string id, Image image);
    size_t add_image_file(std::string id, std::filesystem::path path);
    void add_object(size_t image_index, std::string annotation_id, BinaryMask mask);
    void add_object(size_t image_index, std::string annotation_id, nlohmann::json segmentation,
                    int height, int width);

    size_t image_count() const { return images_.size(); }
    size_t object_count() const { return objects_.size(); }
    const std::string& image_id(size_t i) const { return images_.at(i).id; }
    Image image(size_t i) const;
    size_t object_image(size_t i) const { return objects_.at(i).image_index; }
    const std::string& object_id(size_t i) const { return objects_.at(i).annotation_id; }
    BinaryMask object_mask(size_t i) const;

private:
    struct ImageEntry {
        std::string id;
        std::filesystem::path path;
        std::optional<Image> image;
    };
    struct ObjectEntry {
        size_t image_index;
        std::string annotation_id;
        std::optional<BinaryMask> mask;
        nlohmann::json segmentation;
        int height = 0;
        int width = 0;
    };
    std::vector<ImageEntry> images_;
    std::vector<ObjectEntry> objects_;
};

/// Non-crowd annotations of a COCO manifest; images load lazily from disk.
SourcePool pool_from_coco(const CocoManifest& manifest);

/// Smooth low-noise backgrounds, each carrying one textured elliptical object
/// of a different hue. Used for tests, smoke runs and `generate --synthetic`.
SourcePool make_synthetic_pool(int count, int height, int width, uint64_t seed);

struct GenerateReport {
    std::vector<IndexEntry> entries;
    /// (index, reason) for samples skipped after the retry budget.
    std::vector<std::pair<size_t, std::string>> skipped;
    /// Samples found complete on disk and reused.
    size_t reused = 0;
    std::filesystem::path index_path;
};

/// Writes images/, masks/, meta/ and index.jsonl under out_dir. Existing
/// complete samples are reused, so an interrupted run can be resumed.
GenerateReport generate_dataset(const SourcePool& pool, const std::filesystem::path& out_dir, size_t n,
                                double splice_fraction, uint64_t seed, const GeneratorConfig& cfg = {},
                                int workers = 1, const MatteSource* matte = nullptr);

} // namespace profact
