#include "mapfm/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mapfm/error.hpp"

namespace mapfm {

namespace {

constexpr double kDuplicateEps = 1e-9;

// Cumulative arc length at every vertex; for closed input the first vertex is
// appended at the end so the closing edge participates.
std::vector<double> cumulative_lengths(std::span<const Point2> pts) {
  std::vector<double> cum(pts.size(), 0.0);
  for (std::size_t i = 1; i < pts.size(); ++i) cum[i] = cum[i - 1] + distance(pts[i - 1], pts[i]);
  return cum;
}

Point2 point_at(std::span<const Point2> pts, std::span<const double> cum, double s, std::size_t& seg) {
  while (seg + 2 < pts.size() && cum[seg + 1] < s) ++seg;
  const double len = cum[seg + 1] - cum[seg];
  if (len <= 0.0) return pts[seg + 1];
  const double t = std::clamp((s - cum[seg]) / len, 0.0, 1.0);
  return pts[seg] + t * (pts[seg + 1] - pts[seg]);
}

// Position along the grid border, counter-clockwise from the front-left
// corner; negative if the point is not on the border.
double border_position(const BEVGridSpec& g, Point2 p) {
  constexpr double tol = 1e-6;
  const double w = g.y_max - g.y_min, h = g.x_max - g.x_min;
  if (std::abs(p.x - g.x_max) <= tol) return g.y_max - p.y;
  if (std::abs(p.y - g.y_min) <= tol) return w + (g.x_max - p.x);
  if (std::abs(p.x - g.x_min) <= tol) return w + h + (p.y - g.y_min);
  if (std::abs(p.y - g.y_max) <= tol) return 2 * w + h + (p.x - g.x_min);
  return -1.0;
}

// Appends the grid corners passed when walking the border from a to b the
// short way round.
void append_border_corners(const BEVGridSpec& g, Point2 a, Point2 b, Polyline& ring) {
  const double ta = border_position(g, a), tb = border_position(g, b);
  if (ta < 0.0 || tb < 0.0) return;
  const double w = g.y_max - g.y_min, h = g.x_max - g.x_min;
  const double perimeter = 2 * (w + h);
  const std::array<std::pair<double, Point2>, 4> corners = {{{0.0, {g.x_max, g.y_max}},
                                                             {w, {g.x_max, g.y_min}},
                                                             {w + h, {g.x_min, g.y_min}},
                                                             {2 * w + h, {g.x_min, g.y_max}}}};
  const double fwd = std::fmod(tb - ta + perimeter, perimeter);
  const bool forward = fwd <= perimeter - fwd;
  const double len = forward ? fwd : perimeter - fwd;
  std::vector<std::pair<double, Point2>> passed;
  for (const auto& [t, c] : corners) {
    const double d = forward ? std::fmod(t - ta + perimeter, perimeter) : std::fmod(ta - t + perimeter, perimeter);
    if (d > 1e-9 && d < len - 1e-9) passed.push_back({d, c});
  }
  std::sort(passed.begin(), passed.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
  for (const auto& [d, c] : passed) ring.push_back(c);
}

}  // namespace

double distance(Point2 a, Point2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

std::string_view to_string(MapClass c) {
  switch (c) {
    case MapClass::divider:
      return "divider";
    case MapClass::ped_crossing:
      return "ped_crossing";
    case MapClass::boundary:
      return "boundary";
  }
  return "unknown";
}

MapClass map_class_from_string(std::string_view name) {
  for (MapClass c : kAllMapClasses)
    if (to_string(c) == name) return c;
  throw Error("unknown map class '" + std::string(name) + "'");
}

void BEVGridSpec::validate() const {
  if (rows < 2 || cols < 2) throw Error("BEV grid needs at least 2 rows and 2 cols");
  if (!(resolution > 0.0)) throw Error("BEV grid resolution must be positive");
  if (std::abs(rows * resolution - (x_max - x_min)) > 1e-9)
    throw Error("BEV grid: rows * resolution does not match x range");
  if (std::abs(cols * resolution - (y_max - y_min)) > 1e-9)
    throw Error("BEV grid: cols * resolution does not match y range");
}

BEVGridSpec BEVGridSpec::make(int rows, int cols, double x_half, double y_half) {
  BEVGridSpec g;
  g.rows = rows;
  g.cols = cols;
  g.x_min = -x_half;
  g.x_max = x_half;
  g.y_min = -y_half;
  g.y_max = y_half;
  g.resolution = 2.0 * x_half / rows;
  g.validate();
  return g;
}

Point2 cell_center(const BEVGridSpec& grid, int row, int col) {
  if (row < 0 || row >= grid.rows || col < 0 || col >= grid.cols)
    throw Error("cell index out of range: (" + std::to_string(row) + ", " + std::to_string(col) + ")");
  return {grid.x_max - (row + 0.5) * grid.resolution, grid.y_max - (col + 0.5) * grid.resolution};
}

CellIndex metric_to_cell(const BEVGridSpec& grid, Point2 p) {
  if (!(p.x >= grid.x_min && p.x <= grid.x_max && p.y >= grid.y_min && p.y <= grid.y_max))
    throw Error("point outside BEV range");
  int row = static_cast<int>(std::floor((grid.x_max - p.x) / grid.resolution));
  int col = static_cast<int>(std::floor((grid.y_max - p.y) / grid.resolution));
  // The far edges (x_min / y_min) belong to the last cell.
  row = std::min(row, grid.rows - 1);
  col = std::min(col, grid.cols - 1);
  return {row, col};
}

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count_if(data.begin(), data.end(), [](auto v) { return v != 0; }));
}

void validate_element(const MapElement& e) {
  if (e.points.size() < 2) throw Error("map element needs at least 2 points");
  for (std::size_t i = 1; i < e.points.size(); ++i) {
    if (!std::isfinite(e.points[i].x) || !std::isfinite(e.points[i].y))
      throw Error("map element has a non-finite point");
    if (distance(e.points[i - 1], e.points[i]) <= kDuplicateEps)
      throw Error("map element has consecutive duplicate points");
  }
}

void validate_element(const MapElement& e, const BEVGridSpec& grid, double margin) {
  validate_element(e);
  for (const Point2& p : e.points) {
    if (p.x < grid.x_min - margin || p.x > grid.x_max + margin || p.y < grid.y_min - margin ||
        p.y > grid.y_max + margin)
      throw Error("map element point outside BEV range");
  }
}

double polyline_length(std::span<const Point2> pts, bool closed) {
  double len = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) len += distance(pts[i - 1], pts[i]);
  if (closed && pts.size() > 1) len += distance(pts.back(), pts.front());
  return len;
}

Polyline resample_polyline(std::span<const Point2> pts, int n, bool closed) {
  if (n < 2) throw Error("resample_polyline: n must be >= 2");
  if (pts.size() < 2) throw Error("degenerate polyline");
  Polyline chain(pts.begin(), pts.end());
  if (closed) chain.push_back(pts.front());
  const std::vector<double> cum = cumulative_lengths(chain);
  const double total = cum.back();
  if (!(total > kDuplicateEps)) throw Error("degenerate polyline");

  Polyline out;
  out.reserve(static_cast<std::size_t>(n));
  const double step = closed ? total / n : total / (n - 1);
  std::size_t seg = 0;
  for (int k = 0; k < n; ++k) out.push_back(point_at(chain, cum, k * step, seg));
  out.front() = chain.front();
  if (!closed) out.back() = chain.back();
  return out;
}

double chamfer_distance_points(std::span<const Point2> a, std::span<const Point2> b) {
  if (a.empty() || b.empty()) throw Error("chamfer distance of an empty point set");
  auto directed = [](std::span<const Point2> from, std::span<const Point2> to) {
    double sum = 0.0;
    for (const Point2& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const Point2& q : to) best = std::min(best, distance(p, q));
      sum += best;
    }
    return sum / static_cast<double>(from.size());
  };
  return 0.5 * (directed(a, b) + directed(b, a));
}

double chamfer_distance(std::span<const Point2> a, std::span<const Point2> b, int n_interp, bool a_closed,
                        bool b_closed) {
  if (n_interp < 2) throw Error("chamfer_distance: n_interp must be >= 2");
  const Polyline ra = resample_polyline(a, n_interp, a_closed);
  const Polyline rb = resample_polyline(b, n_interp, b_closed);
  return chamfer_distance_points(ra, rb);
}

bool point_in_polygon(Point2 p, std::span<const Point2> ring) {
  bool inside = false;
  const std::size_t n = ring.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Point2& a = ring[i];
    const Point2& b = ring[j];
    if ((a.y > p.y) != (b.y > p.y)) {
      const double x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
      if (p.x < x_cross) inside = !inside;
    }
  }
  return inside;
}

double point_segment_distance(Point2 p, Point2 a, Point2 b) {
  const Point2 ab = b - a;
  const double len2 = ab.x * ab.x + ab.y * ab.y;
  if (len2 <= 0.0) return distance(p, a);
  const double t = std::clamp(((p.x - a.x) * ab.x + (p.y - a.y) * ab.y) / len2, 0.0, 1.0);
  return distance(p, a + t * ab);
}

std::vector<Polyline> drivable_polygons(const VectorMap& map, const BEVGridSpec* grid) {
  std::vector<Polyline> polygons;
  std::vector<const Polyline*> open;
  for (const MapElement& e : map.elements) {
    if (e.class_label != MapClass::boundary) continue;
    const bool loop = e.closed || (e.points.size() > 2 && distance(e.points.front(), e.points.back()) <= kDuplicateEps);
    if (loop)
      polygons.push_back(e.points);
    else
      open.push_back(&e.points);
  }
  if (open.empty()) return polygons;
  if (open.size() == 1) throw Error("open drivable boundary");

  Polyline ring = *open.front();
  std::vector<bool> used(open.size(), false);
  used[0] = true;
  for (std::size_t placed = 1; placed < open.size(); ++placed) {
    std::size_t best = 0;
    bool best_reversed = false;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < open.size(); ++i) {
      if (used[i]) continue;
      const double d_front = distance(ring.back(), open[i]->front());
      const double d_back = distance(ring.back(), open[i]->back());
      if (d_front < best_d) best_d = d_front, best = i, best_reversed = false;
      if (d_back < best_d) best_d = d_back, best = i, best_reversed = true;
    }
    used[best] = true;
    const Point2 next_start = best_reversed ? open[best]->back() : open[best]->front();
    if (grid) append_border_corners(*grid, ring.back(), next_start, ring);
    if (best_reversed)
      ring.insert(ring.end(), open[best]->rbegin(), open[best]->rend());
    else
      ring.insert(ring.end(), open[best]->begin(), open[best]->end());
  }
  if (grid) append_border_corners(*grid, ring.back(), ring.front(), ring);
  polygons.push_back(std::move(ring));
  return polygons;
}

void stamp_polyline(Mask& mask, const BEVGridSpec& grid, std::span<const Point2> pts, bool closed,
                    double half_width) {
  const std::size_t segs = closed ? pts.size() : pts.size() - 1;
  for (std::size_t s = 0; s < segs; ++s) {
    const Point2 a = pts[s];
    const Point2 b = pts[(s + 1) % pts.size()];
    // Row/col window covering the segment bounding box grown by half_width.
    const double x_hi = std::max(a.x, b.x) + half_width, x_lo = std::min(a.x, b.x) - half_width;
    const double y_hi = std::max(a.y, b.y) + half_width, y_lo = std::min(a.y, b.y) - half_width;
    const int r0 = std::max(0, static_cast<int>(std::floor((grid.x_max - x_hi) / grid.resolution)));
    const int r1 = std::min(grid.rows - 1, static_cast<int>(std::floor((grid.x_max - x_lo) / grid.resolution)));
    const int c0 = std::max(0, static_cast<int>(std::floor((grid.y_max - y_hi) / grid.resolution)));
    const int c1 = std::min(grid.cols - 1, static_cast<int>(std::floor((grid.y_max - y_lo) / grid.resolution)));
    for (int r = r0; r <= r1; ++r)
      for (int c = c0; c <= c1; ++c)
        if (point_segment_distance(cell_center(grid, r, c), a, b) <= half_width) mask.at(r, c) = 1;
  }
}

RasterizedMap rasterize_map(const VectorMap& map, const BEVGridSpec& grid, double line_thickness) {
  grid.validate();
  if (!(line_thickness > 0.0)) throw Error("rasterize_map: line thickness must be positive");
  for (const MapElement& e : map.elements) validate_element(e);

  RasterizedMap out;
  out.surface.drivable = Mask(grid.rows, grid.cols);
  out.surface.ped_crossing = Mask(grid.rows, grid.cols);
  for (Mask& m : out.lines) m = Mask(grid.rows, grid.cols);

  const std::vector<Polyline> drivable = drivable_polygons(map, &grid);
  std::vector<const Polyline*> crossings;
  for (const MapElement& e : map.elements)
    if (e.class_label == MapClass::ped_crossing && e.closed) crossings.push_back(&e.points);

  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      const Point2 p = cell_center(grid, r, c);
      for (const Polyline& poly : drivable)
        if (point_in_polygon(p, poly)) {
          out.surface.drivable.at(r, c) = 1;
          break;
        }
      for (const Polyline* poly : crossings)
        if (point_in_polygon(p, *poly)) {
          out.surface.ped_crossing.at(r, c) = 1;
          break;
        }
    }
  }
  for (const MapElement& e : map.elements)
    stamp_polyline(out.lines[static_cast<int>(e.class_label)], grid, e.points, e.closed, 0.5 * line_thickness);
  return out;
}

void CameraParams::validate() const {
  if (intrinsic[2][2] != 1.0) throw Error("camera intrinsic[2][2] must be 1");
  const auto& e = extrinsic;
  if (e[3][0] != 0.0 || e[3][1] != 0.0 || e[3][2] != 0.0 || e[3][3] != 1.0)
    throw Error("camera extrinsic bottom row must be (0,0,0,1)");
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double dot = 0.0;
      for (int k = 0; k < 3; ++k) dot += e[i][k] * e[j][k];
      if (std::abs(dot - (i == j ? 1.0 : 0.0)) > 1e-6) throw Error("camera extrinsic rotation not orthonormal");
    }
  if (height <= 0 || width <= 0) throw Error("camera image size must be positive");
}

CameraParams CameraParams::look(Point3 position, double yaw_rad, double pitch_down_rad, double hfov_rad,
                                int height, int width, double z_near) {
  const double cy = std::cos(yaw_rad), sy = std::sin(yaw_rad);
  const double cp = std::cos(pitch_down_rad), sp = std::sin(pitch_down_rad);
  const std::array<double, 3> fwd = {cy * cp, sy * cp, -sp};
  const std::array<double, 3> right = {sy, -cy, 0.0};
  const std::array<double, 3> down = {fwd[1] * right[2] - fwd[2] * right[1], fwd[2] * right[0] - fwd[0] * right[2],
                                      fwd[0] * right[1] - fwd[1] * right[0]};
  CameraParams cam;
  const std::array<std::array<double, 3>, 3> rot = {right, down, fwd};
  const std::array<double, 3> pos = {position.x, position.y, position.z};
  for (int i = 0; i < 3; ++i) {
    double t = 0.0;
    for (int k = 0; k < 3; ++k) {
      cam.extrinsic[i][k] = rot[i][k];
      t -= rot[i][k] * pos[k];
    }
    cam.extrinsic[i][3] = t;
  }
  cam.extrinsic[3] = {0.0, 0.0, 0.0, 1.0};
  const double f = 0.5 * width / std::tan(0.5 * hfov_rad);
  cam.intrinsic = {{{f, 0.0, 0.5 * width}, {0.0, f, 0.5 * height}, {0.0, 0.0, 1.0}}};
  cam.height = height;
  cam.width = width;
  cam.z_near = z_near;
  return cam;
}

Projection project_to_camera(const Point3& p, const CameraParams& cam) {
  const auto& e = cam.extrinsic;
  const std::array<double, 3> pc = {e[0][0] * p.x + e[0][1] * p.y + e[0][2] * p.z + e[0][3],
                                    e[1][0] * p.x + e[1][1] * p.y + e[1][2] * p.z + e[1][3],
                                    e[2][0] * p.x + e[2][1] * p.y + e[2][2] * p.z + e[2][3]};
  std::array<double, 3> q{};
  for (int i = 0; i < 3; ++i) q[i] = cam.intrinsic[i][0] * pc[0] + cam.intrinsic[i][1] * pc[1] + cam.intrinsic[i][2] * pc[2];
  Projection out;
  out.depth = q[2];
  if (!(q[2] > cam.z_near)) return out;
  out.pixel = {q[0] / q[2], q[1] / q[2]};
  out.valid = out.pixel.x >= 0.0 && out.pixel.x < cam.width && out.pixel.y >= 0.0 && out.pixel.y < cam.height;
  return out;
}

}  // namespace mapfm
