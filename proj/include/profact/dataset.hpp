#pragma once

#include "profact/datamodel.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace profact {

/// One line of a dataset's index.jsonl. Paths are relative to the dataset root.
struct IndexEntry {
    size_t index = 0;
    std::string image;
    std::string mask;
    std::string meta;
    uint64_t seed = 0;
    ForgeryMode mode = ForgeryMode::splice;
    std::string image_hash;
    std::string mask_hash;
};

void to_json(nlohmann::json& j, const IndexEntry& e);
void from_json(const nlohmann::json& j, IndexEntry& e);

/// FNV-1a 64 as 16 hex digits.
std::string fnv1a_hex(std::span<const unsigned char> bytes);
std::string fnv1a_hex(const std::string& text);

/// Reads <root>/index.jsonl. Throws DataUnavailable if missing or malformed.
std::vector<IndexEntry> read_index(const std::filesystem::path& root);
void write_index(const std::filesystem::path& root, const std::vector<IndexEntry>& entries);

struct LabeledImage {
    std::string id;
    Image image;
    BinaryMask mask;
};

/// Loads and validates one image/mask pair of an index.
LabeledImage load_entry(const std::filesystem::path& root, const IndexEntry& entry);

/// Deterministic hash-based split: roughly one entry in `ratio` goes to validation.
bool is_validation(const IndexEntry& entry, int ratio = 10);

struct Split {
    std::vector<IndexEntry> train;
    std::vector<IndexEntry> validation;
};

/// Splits by hash; if that leaves either side empty (tiny corpora), the last
/// entry becomes the validation set.
Split split_index(const std::vector<IndexEntry>& entries, int ratio = 10);

/// Pairs images in `image_dir` with same-stem masks in `mask_dir`, sorted by
/// stem. Throws DataUnavailable if any image lacks a mask.
std::vector<LabeledImage> load_image_mask_dirs(const std::filesystem::path& image_dir,
                                               const std::filesystem::path& mask_dir);

} // namespace profact
