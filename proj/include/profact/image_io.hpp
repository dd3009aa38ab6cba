#pragma once

#include "profact/datamodel.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace profact {

/// Loads an 8-bit PNG/JPEG as RGB in [0,1]. Throws FileNotFound / DataUnavailable.
Image read_image(const std::filesystem::path& path);
/// Writes an 8-bit RGB image; the format follows the extension.
void write_image(const std::filesystem::path& path, const Image& image);

/// Loads a single-channel mask, thresholding at 128.
BinaryMask read_mask(const std::filesystem::path& path);
/// Writes {0,255} single-channel PNG.
void write_mask(const std::filesystem::path& path, const BinaryMask& mask);

/// Writes round(p * 255) as lossless grayscale PNG.
void write_probmap(const std::filesystem::path& path, const ProbMap& map);
/// Loads a grayscale file as values v / 255 (used for external alpha mattes).
ProbMap read_gray(const std::filesystem::path& path);

/// In-memory PNG encodings, used for content hashing.
std::vector<unsigned char> encode_png(const Image& image);
std::vector<unsigned char> encode_png(const BinaryMask& mask);

/// In-memory JPEG encode/decode at `quality` in [1,100].
Image jpeg_roundtrip(const Image& image, int quality);
/// Rounds every value onto the 8-bit grid, matching a write/read cycle.
Image quantize_8bit(const Image& image);

bool has_image_extension(const std::filesystem::path& path);

} // namespace profact
