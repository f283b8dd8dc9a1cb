#pragma once

// File formats: vector maps as JSON, masks as binary PGM (P5), images as
// binary PPM (P6), plus SHA-256 digests for provenance.

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "mapfm/geometry.hpp"

namespace mapfm {

struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> rgb;  // row-major, 3 channels interleaved, values in [0,1]

  Image() = default;
  Image(int h, int w) : height(h), width(w), rgb(static_cast<std::size_t>(h) * w * 3, 0.0) {}
  double& at(int r, int c, int ch) { return rgb[(static_cast<std::size_t>(r) * width + c) * 3 + ch]; }
  double at(int r, int c, int ch) const { return rgb[(static_cast<std::size_t>(r) * width + c) * 3 + ch]; }
};

nlohmann::json map_to_json(const VectorMap& map);
nlohmann::json map_to_json(const ScoredMap& map);
VectorMap vector_map_from_json(const nlohmann::json& j);
ScoredMap scored_map_from_json(const nlohmann::json& j);

/// A prediction/GT file holds either a single map ({"elements": ...}) or a
/// list of per-sample maps ({"samples": [{"elements": ...}, ...]}).
std::vector<ScoredMap> read_scored_maps(const std::filesystem::path& path);
std::vector<VectorMap> read_vector_maps(const std::filesystem::path& path);
void write_scored_maps(const std::filesystem::path& path, const std::vector<ScoredMap>& maps);
void write_vector_maps(const std::filesystem::path& path, const std::vector<VectorMap>& maps);

void write_pgm(const std::filesystem::path& path, const Mask& mask);
Mask read_pgm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Image& image);
Image read_ppm(const std::filesystem::path& path);

nlohmann::json read_json(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace mapfm
