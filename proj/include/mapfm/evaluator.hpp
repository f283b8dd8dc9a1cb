#pragma once

// Chamfer-distance average precision over the three map classes: per
// class and threshold, predictions pooled across samples are matched
// greedily by descending confidence against same-sample ground truth.

#include <array>
#include <string>
#include <vector>

#include "mapfm/geometry.hpp"
#include "json.hpp"

namespace mapfm {

struct EvalConfig {
  std::vector<double> thresholds = {0.5, 1.0, 1.5};
  int n_interp = 100;

  void validate() const;
};

struct APReport {
  std::vector<double> thresholds;
  std::array<std::vector<double>, 3> ap;  // [class][threshold]
  std::array<double, 3> ap_class{};
  double map = 0.0;
};

/// All-point interpolated AP of one class at threshold `tau`.
double ap_at_threshold(const std::vector<ScoredMap>& preds, const std::vector<VectorMap>& gts, MapClass cls,
                       double tau, int n_interp = 100);

/// Fills ap_class (mean over thresholds) and map (mean over classes).
APReport aggregate_report(std::array<std::vector<double>, 3> ap, std::vector<double> thresholds);

APReport evaluate(const std::vector<ScoredMap>& preds, const std::vector<VectorMap>& gts, const EvalConfig& cfg = {});

nlohmann::json report_to_json(const APReport& r);
APReport report_from_json(const nlohmann::json& j);
/// Columns AP_div, AP_ped, AP_bound, mAP; one row.
std::string format_report_table(const APReport& r, const std::string& label = "");

}  // namespace mapfm
