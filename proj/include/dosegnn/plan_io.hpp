#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "dosegnn/volume.hpp"

namespace dosegnn {

/// Raw little-endian float32 volume files, x-fastest.
void write_f32(const std::filesystem::path& path, const std::vector<float>& values);
std::vector<float> read_f32(const std::filesystem::path& path, std::size_t expected_count);

/// Raw 0/1 byte mask files.
void write_mask(const std::filesystem::path& path, const std::vector<std::uint8_t>& values);
std::vector<std::uint8_t> read_mask(const std::filesystem::path& path, std::size_t expected_count);

nlohmann::json geometry_to_json(const GridGeometry& g);
GridGeometry geometry_from_json(const nlohmann::json& j);

/// Writes `plan.json`, `ct.f32`, `dose.f32` (when present) and one
/// `<name>.mask` per structure into `dir`, creating it if needed.
void write_plan(const std::filesystem::path& dir, const PlanBundle& plan);

/// Reads a bundle directory; ptv_center is recomputed from the PTV mask.
PlanBundle read_plan(const std::filesystem::path& dir);

/// Writes `text` to `path` byte-for-byte.
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace dosegnn
