#pragma once

#include "profact/model.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace profact {

/// Flat name -> tensor archive: 8-byte magic, little-endian u64 header size,
/// JSON header (user fields plus a tensor table), then raw f64 data.
struct TensorArchive {
    nlohmann::json header;
    std::map<std::string, Tensor> tensors;
};

void write_archive(const TensorArchive& archive, const std::filesystem::path& path);
TensorArchive read_archive(const std::filesystem::path& path);

/// FNV-1a 64 over parameter names, shapes and values, as 16 hex digits.
std::string weights_hash(const nn::Module& module);

/// Writes config, `meta` and all parameters; atomic (temp file + rename).
void save_checkpoint(const ProFact& model, const std::filesystem::path& path,
                     const nlohmann::json& meta = nlohmann::json::object());

struct LoadedCheckpoint {
    std::unique_ptr<ProFact> model;
    nlohmann::json meta;
};

/// Rebuilds the model from the stored config and loads every parameter.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);
/// Copies parameters from a checkpoint into an existing model; names and
/// shapes must match exactly.
void load_weights(ProFact& model, const std::filesystem::path& path);
/// Copies values between two modules with identical parameter tables.
void copy_weights(const nn::Module& from, nn::Module& to);

/// External name -> one or more model parameter names. Several targets split
/// the source tensor evenly along its first axis (fused key/value weights).
using KeyMap = std::map<std::string, std::vector<std::string>>;

/// Mapping from the common Mix-Transformer naming (patch_embed1.proj.weight,
/// block1.0.attn.kv.weight, norm1.weight, ...) onto the coarse-branch encoder.
KeyMap mit_key_map(const EncoderConfig& cfg);
/// Reads {"external": "internal" | ["internal", ...]} overrides.
KeyMap read_key_map(const std::filesystem::path& path);

struct ImportReport {
    bool file_present = false;
    std::vector<std::string> loaded;
    /// External names in the file with no mapping.
    std::vector<std::string> unmapped;
};

/// Imports backbone weights from an archive. A missing file is reported,
/// not raised. Shape mismatches throw ShapeMismatch.
ImportReport import_backbone(ProFact& model, const std::filesystem::path& path, const KeyMap& map);

} // namespace profact
