#include "profact/coco.hpp"

#include "profact/error.hpp"
#include "cv_bridge.hpp"

#include <opencv2/imgproc.hpp>

#include <cmath>
#include <fstream>

namespace profact {

const CocoImage& CocoManifest::image(int64_t id) const {
    for (const CocoImage& img : images) {
        if (img.id == id) {
            return img;
        }
    }
    throw DataUnavailable("manifest has no image with id " + std::to_string(id));
}

CocoManifest load_coco(const std::filesystem::path& manifest, const std::filesystem::path& image_root) {
    std::ifstream in(manifest);
    if (!in) {
        throw FileNotFound(manifest.string());
    }
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw DataUnavailable(manifest.string() + ": " + e.what());
    }
    CocoManifest m;
    m.image_root = image_root.empty() ? manifest.parent_path() : image_root;
    for (const auto& img : j.at("images")) {
        m.images.push_back({img.at("id").get<int64_t>(), img.at("file_name").get<std::string>(),
                            img.at("height").get<int>(), img.at("width").get<int>()});
    }
    for (const auto& ann : j.value("annotations", nlohmann::json::array())) {
        CocoAnnotation a;
        a.id = ann.at("id").get<int64_t>();
        a.image_id = ann.at("image_id").get<int64_t>();
        a.iscrowd = ann.value("iscrowd", 0) != 0;
        a.segmentation = ann.at("segmentation");
        m.annotations.push_back(std::move(a));
    }
    return m;
}

std::vector<uint32_t> decode_rle_string(const std::string& counts) {
    // LEB128-like: 5 data bits per char offset by 48, sign bit 0x10 on the
    // last char, and runs after the second stored as deltas.
    std::vector<uint32_t> out;
    size_t p = 0;
    while (p < counts.size()) {
        int64_t x = 0;
        int k = 0;
        bool more = true;
        while (more) {
            if (p >= counts.size()) {
                throw DataUnavailable("truncated RLE string");
            }
            const int64_t c = static_cast<int64_t>(counts[p]) - 48;
            x |= (c & 0x1f) << (5 * k);
            more = (c & 0x20) != 0;
            ++p;
            ++k;
            if (!more && (c & 0x10)) {
                x |= -1LL << (5 * k);
            }
        }
        if (out.size() > 2) {
            x += out[out.size() - 2];
        }
        if (x < 0) {
            throw DataUnavailable("negative run in RLE string");
        }
        out.push_back(static_cast<uint32_t>(x));
    }
    return out;
}

std::string encode_rle_string(const std::vector<uint32_t>& counts) {
    std::string out;
    for (size_t i = 0; i < counts.size(); ++i) {
        int64_t x = counts[i];
        if (i > 2) {
            x -= counts[i - 2];
        }
        bool more = true;
        while (more) {
            int64_t c = x & 0x1f;
            x >>= 5;
            more = (c & 0x10) ? x != -1 : x != 0;
            if (more) {
                c |= 0x20;
            }
            out.push_back(static_cast<char>(c + 48));
        }
    }
    return out;
}

std::vector<uint32_t> mask_to_rle(const BinaryMask& mask) {
    std::vector<uint32_t> runs;
    uint8_t current = 0;
    uint32_t length = 0;
    for (int x = 0; x < mask.width(); ++x) {
        for (int y = 0; y < mask.height(); ++y) {
            if (mask.at(y, x) != current) {
                runs.push_back(length);
                length = 0;
                current = mask.at(y, x);
            }
            ++length;
        }
    }
    runs.push_back(length);
    return runs;
}

namespace {

BinaryMask rle_to_mask(const std::vector<uint32_t>& runs, int height, int width) {
    std::vector<uint8_t> labels(static_cast<size_t>(height) * width, 0);
    const size_t total = labels.size();
    size_t pos = 0;
    uint8_t value = 0;
    for (uint32_t run : runs) {
        if (pos + run > total) {
            throw DataUnavailable("RLE runs exceed mask size");
        }
        for (size_t k = 0; k < run; ++k, ++pos) {
            // Column-major position -> row-major storage.
            const size_t x = pos / static_cast<size_t>(height);
            const size_t y = pos % static_cast<size_t>(height);
            labels[y * static_cast<size_t>(width) + x] = value;
        }
        value ^= 1;
    }
    return BinaryMask(height, width, std::move(labels));
}

} // namespace

BinaryMask annotation_mask(const nlohmann::json& segmentation, int height, int width) {
    if (segmentation.is_array()) {
        cv::Mat canvas = cv::Mat::zeros(height, width, CV_8UC1);
        std::vector<std::vector<cv::Point>> polys;
        for (const auto& poly : segmentation) {
            auto coords = poly.get<std::vector<double>>();
            if (coords.size() < 6) {
                continue;
            }
            std::vector<cv::Point> pts;
            for (size_t i = 0; i + 1 < coords.size(); i += 2) {
                pts.emplace_back(static_cast<int>(std::lround(coords[i])),
                                 static_cast<int>(std::lround(coords[i + 1])));
            }
            polys.push_back(std::move(pts));
        }
        if (!polys.empty()) {
            cv::fillPoly(canvas, polys, cv::Scalar(1));
        }
        return cvb::mask_from_mat(canvas);
    }
    if (segmentation.is_object() && segmentation.contains("counts")) {
        const auto& counts = segmentation.at("counts");
        if (segmentation.contains("size")) {
            auto size = segmentation.at("size").get<std::vector<int>>();
            if (size.size() != 2 || size[0] != height || size[1] != width) {
                throw ShapeMismatch("RLE size disagrees with image size");
            }
        }
        std::vector<uint32_t> runs = counts.is_string() ? decode_rle_string(counts.get<std::string>())
                                                        : counts.get<std::vector<uint32_t>>();
        return rle_to_mask(runs, height, width);
    }
    throw DataUnavailable("unsupported segmentation encoding");
}

} // namespace profact
