#pragma once

// Procedural driving scenes: a road (straight or circular arc) with lane
// dividers, boundaries and pedestrian crossings, rendered into a small
// camera rig together with every ground-truth target the model trains on.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "json.hpp"
#include "mapfm/geometry.hpp"
#include "mapfm/io.hpp"

namespace mapfm {

struct SceneConfig {
  double curvature_max = 0.05;      // 1/m
  double straight_probability = 0.25;
  double heading_max = 0.1;         // rad
  double lateral_offset_max = 1.5;  // m, centreline offset from the ego
  int lanes_min = 1;
  int lanes_max = 3;
  double lane_width = 3.5;
  int crossings_min = 0;
  int crossings_max = 2;
  double crossing_depth = 4.0;
  double crossing_range = 24.0;  // |s| bound for crossing centres
  double road_extent = 80.0;     // arc length sampled either side of the ego
  double bev_margin = 1.0;
  int max_attempts = 64;
};

struct RigConfig {
  int num_cameras = 2;
  int image_height = 64;
  int image_width = 128;
  double mount_height = 1.6;
  double pitch_down_deg = 10.0;
  double hfov_deg = 70.0;
  /// Yaw separation between neighbouring cameras. Two cameras straddle the
  /// heading (front-left / front-right); six cover the full circle.
  double yaw_offset_deg = 60.0;
};

struct RenderConfig {
  int gt_points = 20;
  double line_thickness = 1.5;  // m, BEV line masks
  double pv_radius_px = 1.5;
  double sample_step = 0.2;  // m, density of projected line samples
  double noise_amplitude = 0.08;
};

struct SceneSpec {
  std::uint64_t seed = 0;
  double curvature = 0.0;
  double heading = 0.0;
  double lateral_offset = 0.0;
  double road_half_width = 3.5;
  int num_lanes = 2;
  double lane_width = 3.5;
  std::vector<double> crossing_slots;
  double crossing_depth = 4.0;
  std::vector<CameraParams> rig;

  friend bool operator==(const SceneSpec&, const SceneSpec&) = default;
};

struct SceneSample {
  std::vector<Image> images;  // one per camera
  VectorMap gt_map;
  RasterizedMap gt_raster;    // surface masks (drivable, ped) + per-class line masks
  std::vector<Mask> gt_pv_masks;
};

std::vector<CameraParams> make_rig(const RigConfig& cfg);

/// Centreline point and unit left normal at arc length s.
struct RoadFrame {
  Point2 point;
  Point2 tangent;
  Point2 normal;
};
RoadFrame road_frame(const SceneSpec& spec, double s);

/// Clips a polyline to the axis-aligned rectangle; returns the inside pieces.
std::vector<Polyline> clip_polyline(std::span<const Point2> pts, double x_min, double x_max, double y_min,
                                    double y_max);

/// Map elements of the scene clipped to the grid range, before resampling.
VectorMap scene_map(const SceneSpec& spec, const BEVGridSpec& grid, const SceneConfig& cfg);

SceneSpec generate_scene(std::uint64_t seed, const SceneConfig& cfg, const RigConfig& rig,
                         const BEVGridSpec& grid);

SceneSample render_sample(const SceneSpec& spec, const BEVGridSpec& grid, const SceneConfig& scene_cfg,
                          const RenderConfig& cfg);

struct DatasetConfig {
  SceneConfig scene;
  RigConfig rig;
  RenderConfig render;
  BEVGridSpec grid;
  std::uint64_t master_seed = 0;
  int threads = 1;
};

/// Writes scene_<i>/ directories plus manifest.json; returns the manifest.
nlohmann::json build_dataset(const DatasetConfig& cfg, int num_scenes, const std::filesystem::path& out_dir);

struct Dataset {
  std::filesystem::path root;
  nlohmann::json manifest;
  BEVGridSpec grid;
  std::vector<CameraParams> rig;
  std::vector<SceneSample> scenes;
};

Dataset load_dataset(const std::filesystem::path& dir);
/// Digest over the manifest and every file it references, in index order.
std::string dataset_sha256(const std::filesystem::path& dir);

nlohmann::json camera_to_json(const CameraParams& cam);
CameraParams camera_from_json(const nlohmann::json& j);
nlohmann::json grid_to_json(const BEVGridSpec& grid);
BEVGridSpec grid_from_json(const nlohmann::json& j);

}  // namespace mapfm
