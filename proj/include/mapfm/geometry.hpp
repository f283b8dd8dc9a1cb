#pragma once

// Map data model and the geometric primitives the rest of the pipeline is
// built on: polylines, the BEV grid convention, rasterization, Chamfer
// distance and pinhole projection.
//
// Ego frame: x forward, y left, z up. BEV row 0 is the front edge of the
// grid, column 0 is the left edge.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mapfm {

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend Point2 operator+(Point2 a, Point2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Point2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Point2 operator*(double s, Point2 a) { return {s * a.x, s * a.y}; }
  friend bool operator==(const Point2&, const Point2&) = default;
};

double distance(Point2 a, Point2 b);

using Polyline = std::vector<Point2>;

enum class MapClass : int { divider = 0, ped_crossing = 1, boundary = 2 };
inline constexpr int kNumMapClasses = 3;
inline constexpr std::array<MapClass, 3> kAllMapClasses = {MapClass::divider, MapClass::ped_crossing,
                                                           MapClass::boundary};

std::string_view to_string(MapClass c);
MapClass map_class_from_string(std::string_view name);

struct MapElement {
  MapClass class_label = MapClass::divider;
  Polyline points;
  bool closed = false;
};

struct VectorMap {
  std::vector<MapElement> elements;
};

struct ScoredElement {
  MapElement element;
  double confidence = 0.0;
};

/// Invariant: confidences finite, sorted descending.
struct ScoredMap {
  std::vector<ScoredElement> elements;
};

/// Metric <-> cell mapping of the rows x cols BEV grid.
struct BEVGridSpec {
  int rows = 60;
  int cols = 30;
  double x_min = -30.0, x_max = 30.0;
  double y_min = -15.0, y_max = 15.0;
  double resolution = 1.0;

  /// Throws if the extents, counts and resolution disagree.
  void validate() const;
  int cells() const { return rows * cols; }

  static BEVGridSpec make(int rows, int cols, double x_half, double y_half);
  friend bool operator==(const BEVGridSpec&, const BEVGridSpec&) = default;
};

struct CellIndex {
  int row = 0;
  int col = 0;
  friend bool operator==(const CellIndex&, const CellIndex&) = default;
};

Point2 cell_center(const BEVGridSpec& grid, int row, int col);
CellIndex metric_to_cell(const BEVGridSpec& grid, Point2 p);

/// Row-major binary grid.
struct Mask {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0) {}
  std::uint8_t& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  std::uint8_t at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  std::size_t count() const;
  friend bool operator==(const Mask&, const Mask&) = default;
};

struct BEVMaskSet {
  Mask drivable;
  Mask ped_crossing;
  friend bool operator==(const BEVMaskSet&, const BEVMaskSet&) = default;
};

struct RasterizedMap {
  BEVMaskSet surface;
  std::array<Mask, kNumMapClasses> lines;  // indexed by MapClass
  friend bool operator==(const RasterizedMap&, const RasterizedMap&) = default;
};

/// Checks MapElement invariants (>=2 points, no consecutive duplicates).
/// `grid`/`margin` additionally bound the points to the BEV range.
void validate_element(const MapElement& e);
void validate_element(const MapElement& e, const BEVGridSpec& grid, double margin);

double polyline_length(std::span<const Point2> pts, bool closed = false);

/// Equal arc-length resampling. Open polylines keep both endpoints; closed
/// ones walk the loop starting at the first vertex without repeating it.
Polyline resample_polyline(std::span<const Point2> pts, int n, bool closed = false);

/// Symmetric Chamfer distance after resampling both inputs to n_interp points.
double chamfer_distance(std::span<const Point2> a, std::span<const Point2> b, int n_interp = 100,
                        bool a_closed = false, bool b_closed = false);

/// Chamfer distance between two already-resampled point sets.
double chamfer_distance_points(std::span<const Point2> a, std::span<const Point2> b);

/// Even-odd ray casting. `ring` is implicitly closed.
bool point_in_polygon(Point2 p, std::span<const Point2> ring);

double point_segment_distance(Point2 p, Point2 a, Point2 b);

/// Chains the boundary elements of a map into polygons. Closed boundaries
/// stand alone; open ones are joined end to end into a single ring. When
/// both ends of a join lie on the grid border, the ring follows the border
/// the short way round instead of cutting a chord across the grid.
std::vector<Polyline> drivable_polygons(const VectorMap& map, const BEVGridSpec* grid = nullptr);

RasterizedMap rasterize_map(const VectorMap& map, const BEVGridSpec& grid, double line_thickness);

/// Cells whose centers lie within `half_width` of the polyline.
void stamp_polyline(Mask& mask, const BEVGridSpec& grid, std::span<const Point2> pts, bool closed,
                    double half_width);

struct Point3 {
  double x = 0.0, y = 0.0, z = 0.0;
};

using Mat3 = std::array<std::array<double, 3>, 3>;
using Mat4 = std::array<std::array<double, 4>, 4>;

struct CameraParams {
  Mat3 intrinsic{};
  Mat4 extrinsic{};  // ego -> camera
  int height = 64;
  int width = 128;
  double z_near = 0.1;

  void validate() const;
  friend bool operator==(const CameraParams&, const CameraParams&) = default;

  /// Pinhole camera at `position` (ego metres) with the given yaw (left
  /// positive) and downward pitch, camera axes x right / y down / z forward.
  static CameraParams look(Point3 position, double yaw_rad, double pitch_down_rad, double hfov_rad,
                           int height, int width, double z_near = 0.1);
};

struct Projection {
  Point2 pixel;  // x = column (u), y = row (v)
  double depth = 0.0;
  bool valid = false;
};

Projection project_to_camera(const Point3& p, const CameraParams& cam);

}  // namespace mapfm
