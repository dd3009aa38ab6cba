#pragma once

#include "profact/datamodel.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace profact {

struct CocoImage {
    int64_t id = 0;
    std::string file_name;
    int height = 0;
    int width = 0;
};

struct CocoAnnotation {
    int64_t id = 0;
    int64_t image_id = 0;
    bool iscrowd = false;
    /// Polygon list or RLE object, kept verbatim.
    nlohmann::json segmentation;
};

struct CocoManifest {
    std::vector<CocoImage> images;
    std::vector<CocoAnnotation> annotations;
    /// Directory holding the image files.
    std::filesystem::path image_root;

    const CocoImage& image(int64_t id) const;
};

/// Parses a COCO instances file. `image_root` defaults to the manifest's directory.
CocoManifest load_coco(const std::filesystem::path& manifest,
                       const std::filesystem::path& image_root = {});

/// Rasterizes polygons (union) or decodes RLE (counts array or compressed
/// string, column-major) into a mask of the given size.
BinaryMask annotation_mask(const nlohmann::json& segmentation, int height, int width);

/// Decodes the compressed COCO RLE string into run lengths.
std::vector<uint32_t> decode_rle_string(const std::string& counts);
/// Inverse of decode_rle_string.
std::string encode_rle_string(const std::vector<uint32_t>& counts);
/// Column-major run lengths of a mask, starting with a run of zeros.
std::vector<uint32_t> mask_to_rle(const BinaryMask& mask);

} // namespace profact
