#pragma once

// Set matching and the multi-task training objective: point, focal
// classification and direction losses on Hungarian-matched instances,
// BCE segmentation losses for the auxiliary heads and the Dice road
// surface loss for the ARSS head.

#include <array>
#include <optional>
#include <vector>

#include "mapfm/decoder.hpp"

namespace mapfm {

enum class Perm { forward, reverse };

struct PointCost {
  double cost = 0.0;
  Perm perm = Perm::forward;
};

/// Mean per-point L1 distance under the better of the two traversal orders (tie -> forward).
PointCost point_cost(const ag::Matrix& pred, const ag::Matrix& gt);

/// Minimum-cost assignment of min(R, C) pairs, returned as (row, col) sorted by row.
std::vector<std::pair<int, int>> hungarian(const ag::Matrix& cost);

inline constexpr double kFocalAlpha = 0.25;
inline constexpr double kFocalGamma = 2.0;

/// Matching cost of predicting class `cls` from a logit row.
double focal_cost(const ag::Matrix& logits_row, int cls, double alpha = kFocalAlpha, double gamma = kFocalGamma);

/// Ground-truth instance in normalised coordinates, n x 2.
struct GtInstance {
  MapClass class_label = MapClass::divider;
  ag::Matrix points;
};

struct MatchPair {
  int pred = 0;
  int gt = 0;
  Perm perm = Perm::forward;
};

struct MatchResult {
  std::vector<MatchPair> pairs;  // sorted by pred
  std::vector<int> unmatched_preds;
};

struct MatchWeights {
  double cls = 2.0;
  double pts = 5.0;
};

MatchResult match_instances(const ag::Matrix& class_logits, const ag::Matrix& points, int points_per_element,
                            const std::vector<GtInstance>& gts, const MatchWeights& w = {});

// Reference scalar forms.
double dice_loss(const ag::Matrix& prob, const ag::Matrix& gt, double eps = 1e-6);
/// Summed over classes, averaged over rows (instances).
double focal_loss(const ag::Matrix& logits, const ag::Matrix& targets, double alpha = kFocalAlpha,
                  double gamma = kFocalGamma);
/// Binary cross-entropy averaged over every entry.
double seg_ce_loss(const ag::Matrix& logits, const ag::Matrix& gt);
double direction_loss(const ag::Matrix& pred, const ag::Matrix& gt, Perm perm);

// Differentiable forms.
ag::Var dice_loss_from_logits(const ag::Var& logits, const ag::Matrix& gt, double eps = 1e-6);
ag::Var focal_loss(const ag::Var& logits, const ag::Matrix& targets, double alpha = kFocalAlpha,
                   double gamma = kFocalGamma);
ag::Var seg_ce_loss(const ag::Var& logits, const ag::Matrix& gt);
ag::Var direction_loss(const ag::Var& pred, const ag::Matrix& gt, Perm perm);
/// Mean per-point L1 distance under `perm`.
ag::Var point_l1_loss(const ag::Var& pred, const ag::Matrix& gt, Perm perm);

struct LossWeights {
  std::array<double, 6> beta = {5.0, 2.0, 0.005, 1.0, 1.0, 2.0};  // pts, cls, dir, bevseg, pvseg, surf
};

struct LossReport {
  double l_pts = 0, l_cls = 0, l_dir = 0, l_bevseg = 0, l_pvseg = 0, l_surf = 0, total = 0;

  std::array<double, 6> components() const { return {l_pts, l_cls, l_dir, l_bevseg, l_pvseg, l_surf}; }
  /// Weighted sum of the components.
  double recompute(const LossWeights& w) const;
};

struct ModelOutputs {
  DecoderOutput decoder;
  std::optional<SegLogits> arss;
  SegLogits bev_lines;
  std::vector<SegLogits> pv_lanes;
};

struct LossTargets {
  std::vector<GtInstance> instances;
  std::array<ag::Matrix, 2> surface;  // drivable, ped_crossing; (H*W) x 1
  ag::Matrix lines;                   // (H*W) x 3
  std::vector<ag::Matrix> pv;         // per camera, (h*w) x 1
};

struct LossResult {
  ag::Var total;
  LossReport report;
  std::vector<MatchResult> matches;  // per decoder layer
};

/// Column-stacked float matrix of a binary mask, (rows*cols) x 1.
ag::Matrix mask_column(const Mask& m);
/// Resamples every element to n points and normalises it to the grid extent.
std::vector<GtInstance> make_gt_instances(const VectorMap& map, const BEVGridSpec& grid, int n);

LossResult total_loss(const ModelOutputs& out, const LossTargets& targets, const LossWeights& weights,
                      const MatchWeights& match = {});

}  // namespace mapfm
