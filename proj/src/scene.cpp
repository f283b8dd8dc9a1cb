#include "mapfm/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <thread>

#include "mapfm/error.hpp"
#include "mapfm/nn.hpp"

namespace mapfm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr double kCrossingInset = 0.3;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

double hash_unit(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  const std::uint64_t h = splitmix64(splitmix64(splitmix64(a) ^ b) ^ c);
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

std::array<Point2, 4> crossing_corners(const SceneSpec& spec, double s) {
  const RoadFrame f = road_frame(spec, s);
  const double half_depth = 0.5 * spec.crossing_depth;
  const double half_span = spec.road_half_width - kCrossingInset;
  return {f.point - half_depth * f.tangent - half_span * f.normal, f.point + half_depth * f.tangent - half_span * f.normal,
          f.point + half_depth * f.tangent + half_span * f.normal, f.point - half_depth * f.tangent + half_span * f.normal};
}

Polyline offset_curve(const SceneSpec& spec, double offset, double extent) {
  Polyline pts;
  constexpr double kStep = 0.5;
  const int n = static_cast<int>(std::ceil(2.0 * extent / kStep));
  for (int i = 0; i <= n; ++i) {
    const RoadFrame f = road_frame(spec, -extent + i * kStep);
    pts.push_back(f.point + offset * f.normal);
  }
  return pts;
}

bool inside(Point2 p, const BEVGridSpec& g, double margin) {
  return p.x >= g.x_min + margin && p.x <= g.x_max - margin && p.y >= g.y_min + margin && p.y <= g.y_max - margin;
}

// Distance of a ground point from the (unclipped) centreline.
double lateral_distance(const SceneSpec& spec, Point2 g) {
  const RoadFrame f0 = road_frame(spec, 0.0);
  if (spec.curvature == 0.0) {
    const Point2 d = g - f0.point;
    return std::abs(d.x * f0.normal.x + d.y * f0.normal.y);
  }
  const Point2 center = f0.point + (1.0 / spec.curvature) * f0.normal;
  return std::abs(distance(g, center) - 1.0 / std::abs(spec.curvature));
}

void stamp_disk(Mask& mask, Point2 px, double radius) {
  const int c0 = static_cast<int>(std::floor(px.x)), r0 = static_cast<int>(std::floor(px.y));
  if (r0 >= 0 && r0 < mask.rows && c0 >= 0 && c0 < mask.cols) mask.at(r0, c0) = 1;
  const int reach = static_cast<int>(std::ceil(radius)) + 1;
  for (int r = r0 - reach; r <= r0 + reach; ++r)
    for (int c = c0 - reach; c <= c0 + reach; ++c) {
      if (r < 0 || r >= mask.rows || c < 0 || c >= mask.cols) continue;
      if (std::hypot(c + 0.5 - px.x, r + 0.5 - px.y) <= radius) mask.at(r, c) = 1;
    }
}

// Dense metric samples along an element, vertices included.
std::vector<Point2> dense_samples(const MapElement& e, double step) {
  std::vector<Point2> out;
  const std::size_t segs = e.closed ? e.points.size() : e.points.size() - 1;
  for (std::size_t s = 0; s < segs; ++s) {
    const Point2 a = e.points[s];
    const Point2 b = e.points[(s + 1) % e.points.size()];
    const int n = std::max(1, static_cast<int>(std::ceil(distance(a, b) / step)));
    for (int k = 0; k < n; ++k) out.push_back(a + (static_cast<double>(k) / n) * (b - a));
  }
  if (!e.closed) out.push_back(e.points.back());
  return out;
}

struct Rgb {
  double r, g, b;
};

constexpr Rgb kSky{0.55, 0.70, 0.90};
constexpr Rgb kOffroad{0.30, 0.42, 0.25};
constexpr Rgb kRoad{0.22, 0.22, 0.24};
constexpr Rgb kCrossingFill{0.80, 0.80, 0.75};
constexpr std::array<Rgb, 3> kClassColor = {Rgb{1.0, 0.95, 0.2}, Rgb{0.1, 0.5, 1.0}, Rgb{1.0, 0.2, 0.2}};

json mat_to_json(const auto& m) {
  json rows = json::array();
  for (const auto& row : m) rows.push_back(json(std::vector<double>(row.begin(), row.end())));
  return rows;
}

}  // namespace

std::vector<CameraParams> make_rig(const RigConfig& cfg) {
  if (cfg.num_cameras < 1) throw Error("rig needs at least one camera");
  std::vector<CameraParams> rig;
  // Cameras are spread symmetrically about the heading.
  const double first = -0.5 * (cfg.num_cameras - 1) * cfg.yaw_offset_deg;
  for (int j = 0; j < cfg.num_cameras; ++j) {
    // Order left to right: positive yaw looks left.
    const double yaw = -(first + j * cfg.yaw_offset_deg) * kDeg;
    rig.push_back(CameraParams::look({0.0, 0.0, cfg.mount_height}, yaw, cfg.pitch_down_deg * kDeg, cfg.hfov_deg * kDeg,
                                     cfg.image_height, cfg.image_width));
  }
  return rig;
}

RoadFrame road_frame(const SceneSpec& spec, double s) {
  const double h0 = spec.heading;
  const Point2 p0{-std::sin(h0) * spec.lateral_offset, std::cos(h0) * spec.lateral_offset};
  const double h = h0 + spec.curvature * s;
  Point2 p;
  if (spec.curvature == 0.0) {
    p = p0 + s * Point2{std::cos(h0), std::sin(h0)};
  } else {
    const double k = spec.curvature;
    p = p0 + Point2{(std::sin(h) - std::sin(h0)) / k, -(std::cos(h) - std::cos(h0)) / k};
  }
  return {p, {std::cos(h), std::sin(h)}, {-std::sin(h), std::cos(h)}};
}

std::vector<Polyline> clip_polyline(std::span<const Point2> pts, double x_min, double x_max, double y_min,
                                    double y_max) {
  std::vector<Polyline> pieces;
  Polyline current;
  auto flush = [&] {
    Polyline clean;
    for (const Point2& p : current)
      if (clean.empty() || distance(clean.back(), p) > 1e-9) clean.push_back(p);
    if (clean.size() >= 2) pieces.push_back(std::move(clean));
    current.clear();
  };
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const Point2 a = pts[i], d = pts[i + 1] - pts[i];
    // Liang-Barsky.
    double t0 = 0.0, t1 = 1.0;
    bool visible = true;
    const std::array<double, 4> p = {-d.x, d.x, -d.y, d.y};
    const std::array<double, 4> q = {a.x - x_min, x_max - a.x, a.y - y_min, y_max - a.y};
    for (int k = 0; k < 4 && visible; ++k) {
      if (p[k] == 0.0) {
        if (q[k] < 0.0) visible = false;
      } else {
        const double t = q[k] / p[k];
        if (p[k] < 0.0)
          t0 = std::max(t0, t);
        else
          t1 = std::min(t1, t);
        if (t0 > t1) visible = false;
      }
    }
    if (!visible) {
      flush();
      continue;
    }
    if (!current.empty() && t0 > 0.0) flush();
    if (current.empty()) current.push_back(a + t0 * d);
    current.push_back(a + t1 * d);
    if (t1 < 1.0) flush();
  }
  flush();
  return pieces;
}

VectorMap scene_map(const SceneSpec& spec, const BEVGridSpec& grid, const SceneConfig& cfg) {
  VectorMap map;
  auto add_clipped = [&](MapClass cls, double offset) {
    const Polyline curve = offset_curve(spec, offset, cfg.road_extent);
    for (Polyline& piece : clip_polyline(curve, grid.x_min, grid.x_max, grid.y_min, grid.y_max))
      if (polyline_length(piece) >= 1.0) map.elements.push_back({cls, std::move(piece), false});
  };
  add_clipped(MapClass::boundary, spec.road_half_width);
  add_clipped(MapClass::boundary, -spec.road_half_width);
  for (int k = 1; k < spec.num_lanes; ++k) add_clipped(MapClass::divider, -spec.road_half_width + k * spec.lane_width);
  for (double s : spec.crossing_slots) {
    const auto corners = crossing_corners(spec, s);
    map.elements.push_back({MapClass::ped_crossing, Polyline(corners.begin(), corners.end()), true});
  }
  return map;
}

SceneSpec generate_scene(std::uint64_t seed, const SceneConfig& cfg, const RigConfig& rig, const BEVGridSpec& grid) {
  grid.validate();
  if (cfg.lanes_min < 1 || cfg.lanes_min > cfg.lanes_max || cfg.crossings_min < 0 ||
      cfg.crossings_min > cfg.crossings_max || cfg.lane_width <= 0.0 || cfg.curvature_max < 0.0)
    throw Error("scene config has an empty or invalid range");
  if (cfg.lanes_min * cfg.lane_width > (grid.y_max - grid.y_min) - 2.0 * cfg.bev_margin)
    throw Error("infeasible scene config: road wider than the BEV range");

  nn::Rng rng(splitmix64(seed));
  for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
    SceneSpec spec;
    spec.seed = seed;
    spec.num_lanes = cfg.lanes_min + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.lanes_max - cfg.lanes_min + 1)));
    spec.lane_width = cfg.lane_width;
    spec.road_half_width = 0.5 * spec.num_lanes * cfg.lane_width;
    spec.curvature = rng.uniform() < cfg.straight_probability ? 0.0 : rng.uniform(-cfg.curvature_max, cfg.curvature_max);
    spec.heading = rng.uniform(-cfg.heading_max, cfg.heading_max);
    spec.lateral_offset = rng.uniform(-cfg.lateral_offset_max, cfg.lateral_offset_max);
    spec.crossing_depth = cfg.crossing_depth;
    const int wanted =
        cfg.crossings_min + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.crossings_max - cfg.crossings_min + 1)));
    for (int tries = 0; tries < 64 && static_cast<int>(spec.crossing_slots.size()) < wanted; ++tries) {
      const double s = rng.uniform(-cfg.crossing_range, cfg.crossing_range);
      const bool clear = std::all_of(spec.crossing_slots.begin(), spec.crossing_slots.end(),
                                     [&](double o) { return std::abs(o - s) >= cfg.crossing_depth + 2.0; });
      if (clear) spec.crossing_slots.push_back(s);
    }
    std::sort(spec.crossing_slots.begin(), spec.crossing_slots.end());
    if (static_cast<int>(spec.crossing_slots.size()) != wanted) continue;
    if (spec.road_half_width * 2.0 > (grid.y_max - grid.y_min) - 2.0 * cfg.bev_margin) continue;

    // Feasibility: each boundary enters the grid exactly once and every
    // crossing lies fully inside it.
    bool ok = true;
    for (double side : {1.0, -1.0}) {
      const auto pieces = clip_polyline(offset_curve(spec, side * spec.road_half_width, cfg.road_extent), grid.x_min,
                                        grid.x_max, grid.y_min, grid.y_max);
      if (pieces.size() != 1 || polyline_length(pieces.front()) < 10.0) ok = false;
    }
    for (double s : spec.crossing_slots)
      for (const Point2& c : crossing_corners(spec, s))
        if (!inside(c, grid, 0.5)) ok = false;
    if (!ok) continue;
    spec.rig = make_rig(rig);
    return spec;
  }
  throw Error("could not generate a feasible scene for seed " + std::to_string(seed));
}

SceneSample render_sample(const SceneSpec& spec, const BEVGridSpec& grid, const SceneConfig& scene_cfg,
                          const RenderConfig& cfg) {
  if (spec.rig.empty()) throw Error("scene has no cameras");
  SceneSample out;
  for (MapElement& e : scene_map(spec, grid, scene_cfg).elements) {
    e.points = resample_polyline(e.points, cfg.gt_points, e.closed);
    validate_element(e, grid, scene_cfg.bev_margin);
    out.gt_map.elements.push_back(std::move(e));
  }
  if (out.gt_map.elements.empty()) throw Error("scene has no map elements inside the BEV range");
  out.gt_raster = rasterize_map(out.gt_map, grid, cfg.line_thickness);

  std::vector<std::array<Point2, 4>> crossings;
  for (double s : spec.crossing_slots) crossings.push_back(crossing_corners(spec, s));

  std::size_t visible_hits = 0;
  for (std::size_t cam_idx = 0; cam_idx < spec.rig.size(); ++cam_idx) {
    const CameraParams& cam = spec.rig[cam_idx];
    cam.validate();
    Image img(cam.height, cam.width);
    Mask pv(cam.height, cam.width);

    // Camera centre and rays in the ego frame.
    const auto& e = cam.extrinsic;
    const std::array<double, 3> centre = {-(e[0][0] * e[0][3] + e[1][0] * e[1][3] + e[2][0] * e[2][3]),
                                          -(e[0][1] * e[0][3] + e[1][1] * e[1][3] + e[2][1] * e[2][3]),
                                          -(e[0][2] * e[0][3] + e[1][2] * e[1][3] + e[2][2] * e[2][3])};
    const double fx = cam.intrinsic[0][0], fy = cam.intrinsic[1][1];
    const double cx = cam.intrinsic[0][2], cy = cam.intrinsic[1][2];
    for (int r = 0; r < cam.height; ++r) {
      for (int c = 0; c < cam.width; ++c) {
        const std::array<double, 3> dc = {(c + 0.5 - cx) / fx, (r + 0.5 - cy) / fy, 1.0};
        std::array<double, 3> d{};
        for (int i = 0; i < 3; ++i) d[i] = e[0][i] * dc[0] + e[1][i] * dc[1] + e[2][i] * dc[2];
        Rgb base = kSky;
        if (d[2] < -1e-9) {
          const double t = -centre[2] / d[2];
          const Point2 g{centre[0] + t * d[0], centre[1] + t * d[1]};
          base = kOffroad;
          if (lateral_distance(spec, g) <= spec.road_half_width) base = kRoad;
          for (const auto& ring : crossings)
            if (point_in_polygon(g, ring)) base = kCrossingFill;
        }
        const double fine = hash_unit(spec.seed, cam_idx * 1000003ull + static_cast<std::uint64_t>(r), c);
        const double coarse = hash_unit(spec.seed ^ 0xABCDull, cam_idx * 1000003ull + static_cast<std::uint64_t>(r / 4),
                                        static_cast<std::uint64_t>(c / 4));
        const double noise = cfg.noise_amplitude * (fine + coarse - 1.0);
        img.at(r, c, 0) = base.r + noise;
        img.at(r, c, 1) = base.g + noise;
        img.at(r, c, 2) = base.b + noise;
      }
    }

    // Lines drawn in class order; later classes paint over earlier ones.
    for (MapClass cls : {MapClass::boundary, MapClass::ped_crossing, MapClass::divider}) {
      Mask stamp(cam.height, cam.width);
      for (const MapElement& el : out.gt_map.elements) {
        if (el.class_label != cls) continue;
        for (const Point2& p : dense_samples(el, cfg.sample_step)) {
          const Projection pr = project_to_camera({p.x, p.y, 0.0}, cam);
          if (!pr.valid) continue;
          ++visible_hits;
          stamp_disk(stamp, pr.pixel, cfg.pv_radius_px);
        }
      }
      const Rgb col = kClassColor[static_cast<int>(cls)];
      for (int r = 0; r < cam.height; ++r)
        for (int c = 0; c < cam.width; ++c)
          if (stamp.at(r, c)) {
            pv.at(r, c) = 1;
            img.at(r, c, 0) = col.r;
            img.at(r, c, 1) = col.g;
            img.at(r, c, 2) = col.b;
          }
    }
    for (double& v : img.rgb) v = std::clamp(v, 0.0, 1.0);
    out.images.push_back(std::move(img));
    out.gt_pv_masks.push_back(std::move(pv));
  }
  if (visible_hits == 0) throw Error("blind rig: no map element visible in any camera");
  return out;
}

json camera_to_json(const CameraParams& cam) {
  return json{{"intrinsic", mat_to_json(cam.intrinsic)},
              {"extrinsic", mat_to_json(cam.extrinsic)},
              {"height", cam.height},
              {"width", cam.width},
              {"z_near", cam.z_near}};
}

CameraParams camera_from_json(const json& j) {
  CameraParams cam;
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) cam.intrinsic[i][k] = j.at("intrinsic").at(i).at(k).get<double>();
  for (int i = 0; i < 4; ++i)
    for (int k = 0; k < 4; ++k) cam.extrinsic[i][k] = j.at("extrinsic").at(i).at(k).get<double>();
  cam.height = j.at("height").get<int>();
  cam.width = j.at("width").get<int>();
  cam.z_near = j.at("z_near").get<double>();
  cam.validate();
  return cam;
}

json grid_to_json(const BEVGridSpec& g) {
  return json{{"rows", g.rows},   {"cols", g.cols},   {"x_min", g.x_min},          {"x_max", g.x_max},
              {"y_min", g.y_min}, {"y_max", g.y_max}, {"resolution", g.resolution}};
}

BEVGridSpec grid_from_json(const json& j) {
  BEVGridSpec g;
  g.rows = j.at("rows").get<int>();
  g.cols = j.at("cols").get<int>();
  g.x_min = j.at("x_min").get<double>();
  g.x_max = j.at("x_max").get<double>();
  g.y_min = j.at("y_min").get<double>();
  g.y_max = j.at("y_max").get<double>();
  g.resolution = j.at("resolution").get<double>();
  g.validate();
  return g;
}

namespace {

const std::array<std::pair<const char*, int>, 5> kBevFiles = {{{"drivable", -1},
                                                               {"ped_crossing", -2},
                                                               {"line_divider", 0},
                                                               {"line_ped_crossing", 1},
                                                               {"line_boundary", 2}}};

const Mask& bev_mask_for(const RasterizedMap& r, int code) {
  if (code == -1) return r.surface.drivable;
  if (code == -2) return r.surface.ped_crossing;
  return r.lines[static_cast<std::size_t>(code)];
}

Mask& bev_mask_for(RasterizedMap& r, int code) {
  return const_cast<Mask&>(bev_mask_for(static_cast<const RasterizedMap&>(r), code));
}

std::vector<std::string> scene_files(int num_cameras) {
  std::vector<std::string> files;
  for (int j = 0; j < num_cameras; ++j) files.push_back("cam_" + std::to_string(j) + ".ppm");
  for (int j = 0; j < num_cameras; ++j) files.push_back("pv_" + std::to_string(j) + ".pgm");
  files.push_back("gt_map.json");
  for (const auto& [name, code] : kBevFiles) files.push_back("bev_" + std::string(name) + ".pgm");
  return files;
}

void write_scene(const fs::path& dir, const SceneSample& s) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create directory " + dir.string() + ": " + ec.message());
  for (std::size_t j = 0; j < s.images.size(); ++j) {
    write_ppm(dir / ("cam_" + std::to_string(j) + ".ppm"), s.images[j]);
    write_pgm(dir / ("pv_" + std::to_string(j) + ".pgm"), s.gt_pv_masks[j]);
  }
  write_text(dir / "gt_map.json", map_to_json(s.gt_map).dump(1) + "\n");
  for (const auto& [name, code] : kBevFiles) write_pgm(dir / ("bev_" + std::string(name) + ".pgm"), bev_mask_for(s.gt_raster, code));
}

}  // namespace

json build_dataset(const DatasetConfig& cfg, int num_scenes, const fs::path& out_dir) {
  if (num_scenes < 1) throw Error("build_dataset: num_scenes must be >= 1");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error("cannot create directory " + out_dir.string() + ": " + ec.message());

  std::vector<json> entries(static_cast<std::size_t>(num_scenes));
  std::vector<std::string> errors(static_cast<std::size_t>(num_scenes));
  auto work = [&](int worker, int workers) {
    for (int i = worker; i < num_scenes; i += workers) {
      try {
        const std::uint64_t seed = cfg.master_seed + static_cast<std::uint64_t>(i);
        const SceneSpec spec = generate_scene(seed, cfg.scene, cfg.rig, cfg.grid);
        const SceneSample sample = render_sample(spec, cfg.grid, cfg.scene, cfg.render);
        const std::string dir = "scene_" + std::to_string(i);
        write_scene(out_dir / dir, sample);
        entries[static_cast<std::size_t>(i)] = json{{"index", i},
                                                    {"seed", seed},
                                                    {"dir", dir},
                                                    {"num_elements", sample.gt_map.elements.size()},
                                                    {"files", scene_files(static_cast<int>(sample.images.size()))}};
      } catch (const std::exception& e) {
        errors[static_cast<std::size_t>(i)] = e.what();
      }
    }
  };
  const int workers = std::clamp(cfg.threads, 1, num_scenes);
  if (workers == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work, w, workers);
  }
  for (int i = 0; i < num_scenes; ++i)
    if (!errors[static_cast<std::size_t>(i)].empty())
      throw Error("scene " + std::to_string(i) + ": " + errors[static_cast<std::size_t>(i)]);

  json rig = json::array();
  for (const CameraParams& cam : make_rig(cfg.rig)) rig.push_back(camera_to_json(cam));
  json manifest{{"format", "mapfm-dataset"},
                {"version", 1},
                {"master_seed", cfg.master_seed},
                {"num_scenes", num_scenes},
                {"grid", grid_to_json(cfg.grid)},
                {"rig", rig},
                {"render", {{"gt_points", cfg.render.gt_points}, {"line_thickness", cfg.render.line_thickness}}},
                {"scenes", entries}};
  write_text(out_dir / "manifest.json", manifest.dump(1) + "\n");
  return manifest;
}

Dataset load_dataset(const fs::path& dir) {
  Dataset ds;
  ds.root = dir;
  ds.manifest = read_json(dir / "manifest.json");
  if (ds.manifest.value("format", "") != "mapfm-dataset") throw Error("not a dataset manifest: " + dir.string());
  ds.grid = grid_from_json(ds.manifest.at("grid"));
  for (const json& c : ds.manifest.at("rig")) ds.rig.push_back(camera_from_json(c));
  for (const json& entry : ds.manifest.at("scenes")) {
    const fs::path sd = dir / entry.at("dir").get<std::string>();
    SceneSample s;
    for (std::size_t j = 0; j < ds.rig.size(); ++j) {
      s.images.push_back(read_ppm(sd / ("cam_" + std::to_string(j) + ".ppm")));
      s.gt_pv_masks.push_back(read_pgm(sd / ("pv_" + std::to_string(j) + ".pgm")));
    }
    s.gt_map = vector_map_from_json(read_json(sd / "gt_map.json"));
    for (const auto& [name, code] : kBevFiles) bev_mask_for(s.gt_raster, code) = read_pgm(sd / ("bev_" + std::string(name) + ".pgm"));
    ds.scenes.push_back(std::move(s));
  }
  return ds;
}

std::string dataset_sha256(const fs::path& dir) {
  const json manifest = read_json(dir / "manifest.json");
  std::string digest_input = "manifest.json:" + sha256_file(dir / "manifest.json") + "\n";
  for (const json& entry : manifest.at("scenes")) {
    const std::string sd = entry.at("dir").get<std::string>();
    for (const json& f : entry.at("files")) {
      const std::string rel = sd + "/" + f.get<std::string>();
      digest_input += rel + ":" + sha256_file(dir / rel) + "\n";
    }
  }
  return sha256_hex(digest_input);
}

}  // namespace mapfm
