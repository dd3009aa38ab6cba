#include "profact/dataset.hpp"

#include "profact/error.hpp"
#include "profact/image_io.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace profact {

void to_json(nlohmann::json& j, const IndexEntry& e) {
    j = {{"index", e.index},
         {"image", e.image},
         {"mask", e.mask},
         {"meta", e.meta},
         {"seed", e.seed},
         {"mode", to_string(e.mode)},
         {"image_hash", e.image_hash},
         {"mask_hash", e.mask_hash}};
}

void from_json(const nlohmann::json& j, IndexEntry& e) {
    e.index = j.at("index").get<size_t>();
    e.image = j.at("image").get<std::string>();
    e.mask = j.at("mask").get<std::string>();
    e.meta = j.value("meta", "");
    e.seed = j.value("seed", uint64_t{0});
    e.mode = forgery_mode_from_string(j.value("mode", "splice"));
    e.image_hash = j.value("image_hash", "");
    e.mask_hash = j.value("mask_hash", "");
}

std::string fnv1a_hex(std::span<const unsigned char> bytes) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream ss;
    ss << std::hex << std::setw(16) << std::setfill('0') << h;
    return ss.str();
}

std::string fnv1a_hex(const std::string& text) {
    return fnv1a_hex(std::span(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

std::vector<IndexEntry> read_index(const std::filesystem::path& root) {
    const auto path = root / "index.jsonl";
    std::ifstream in(path);
    if (!in) {
        throw DataUnavailable("no dataset index at " + path.string());
    }
    std::vector<IndexEntry> entries;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        try {
            entries.push_back(nlohmann::json::parse(line).get<IndexEntry>());
        } catch (const nlohmann::json::exception& e) {
            throw DataUnavailable(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return entries;
}

void write_index(const std::filesystem::path& root, const std::vector<IndexEntry>& entries) {
    const auto path = root / "index.jsonl";
    const auto tmp = root / "index.jsonl.tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) {
            throw Error("cannot write " + tmp.string());
        }
        for (const IndexEntry& e : entries) {
            out << nlohmann::json(e).dump() << '\n';
        }
    }
    std::filesystem::rename(tmp, path);
}

LabeledImage load_entry(const std::filesystem::path& root, const IndexEntry& entry) {
    LabeledImage out;
    out.id = std::filesystem::path(entry.image).stem().string();
    out.image = read_image(root / entry.image);
    out.mask = read_mask(root / entry.mask);
    validate_pair(out.image, out.mask);
    return out;
}

bool is_validation(const IndexEntry& entry, int ratio) {
    const std::string key = entry.image_hash.empty() ? entry.image : entry.image_hash;
    return std::stoull(fnv1a_hex("split:" + key), nullptr, 16) % static_cast<uint64_t>(ratio) == 0;
}

Split split_index(const std::vector<IndexEntry>& entries, int ratio) {
    Split s;
    for (const IndexEntry& e : entries) {
        (is_validation(e, ratio) ? s.validation : s.train).push_back(e);
    }
    if (entries.size() >= 2 && (s.validation.empty() || s.train.empty())) {
        s.train.assign(entries.begin(), entries.end() - 1);
        s.validation.assign(entries.end() - 1, entries.end());
    }
    return s;
}

std::vector<LabeledImage> load_image_mask_dirs(const std::filesystem::path& image_dir,
                                               const std::filesystem::path& mask_dir) {
    if (!std::filesystem::is_directory(image_dir)) {
        throw FileNotFound(image_dir.string());
    }
    if (!std::filesystem::is_directory(mask_dir)) {
        throw FileNotFound(mask_dir.string());
    }
    std::vector<std::filesystem::path> images;
    for (const auto& e : std::filesystem::directory_iterator(image_dir)) {
        if (e.is_regular_file() && has_image_extension(e.path())) {
            images.push_back(e.path());
        }
    }
    std::sort(images.begin(), images.end());
    std::vector<LabeledImage> out;
    for (const auto& img : images) {
        const std::string stem = img.stem().string();
        std::filesystem::path mask;
        for (const std::string& candidate : {stem + ".png", stem + "_gt.png", stem + "_mask.png"}) {
            if (std::filesystem::exists(mask_dir / candidate)) {
                mask = mask_dir / candidate;
                break;
            }
        }
        if (mask.empty()) {
            throw DataUnavailable("no mask for " + img.filename().string() + " in " + mask_dir.string());
        }
        LabeledImage item{stem, read_image(img), read_mask(mask)};
        validate_pair(item.image, item.mask);
        out.push_back(std::move(item));
    }
    return out;
}

} // namespace profact
