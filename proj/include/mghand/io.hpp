#pragma once

#include <string>

#include "json.hpp"
#include "mghand/mask.hpp"
#include "mghand/tensor.hpp"

namespace mghand::io {

std::string read_text(const std::string& path);
/// Writes to a sibling temporary file and renames it over the target.
void write_text_atomic(const std::string& path, const std::string& content);

nlohmann::json read_json(const std::string& path);
/// Pretty-printed, sorted keys, trailing newline.
void write_json(const std::string& path, const nlohmann::json& j);

/// Single-channel image with values in [-1, 1] stored as 8-bit grayscale.
void write_png(const std::string& path, const Image& image);
Image read_png(const std::string& path);

/// Binary mask stored as a 1-bit grayscale PNG (0 / full white).
void write_mask_png(const std::string& path, const BinaryGrid& mask);
BinaryGrid read_mask_png(const std::string& path);

/// Exact tensor container: {"shape": [c, h, w], "data": [...]}.
nlohmann::json image_to_json(const Image& image);
Image image_from_json(const nlohmann::json& j);
void write_tensor(const std::string& path, const Image& image);
Image read_tensor(const std::string& path);

/// Loads either a ".png" or a ".tensor.json" sample.
Image read_sample(const std::string& path);

void ensure_directory(const std::string& path);

}  // namespace mghand::io
