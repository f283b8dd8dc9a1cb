#include "mapfm/evaluator.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>

#include "mapfm/error.hpp"

namespace mapfm {

void EvalConfig::validate() const {
  if (thresholds.empty()) throw Error("eval config: no thresholds");
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (!(thresholds[i] > 0)) throw Error("eval config: thresholds must be positive");
    if (i > 0 && thresholds[i] <= thresholds[i - 1]) throw Error("eval config: thresholds must ascend");
  }
  if (n_interp < 2) throw Error("eval config: n_interp must be >= 2");
}

namespace {

struct Candidate {
  double score;
  std::size_t sample;
  std::size_t element;
};

double all_point_ap(const std::vector<char>& tp, std::size_t num_gt) {
  const std::size_t n = tp.size();
  std::vector<double> rec(n), prec(n);
  double ctp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ctp += tp[i];
    rec[i] = ctp / static_cast<double>(num_gt);
    prec[i] = ctp / static_cast<double>(i + 1);
  }
  for (std::size_t i = n; i-- > 1;) prec[i - 1] = std::max(prec[i - 1], prec[i]);
  double ap = 0, prev_r = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ap += (rec[i] - prev_r) * prec[i];
    prev_r = rec[i];
  }
  return ap;
}

}  // namespace

double ap_at_threshold(const std::vector<ScoredMap>& preds, const std::vector<VectorMap>& gts, MapClass cls,
                       double tau, int n_interp) {
  if (preds.size() != gts.size())
    throw Error("ap: " + std::to_string(preds.size()) + " prediction samples vs " + std::to_string(gts.size()) +
                " ground-truth samples");
  std::vector<std::vector<const MapElement*>> gt_of(gts.size());
  std::size_t num_gt = 0;
  for (std::size_t s = 0; s < gts.size(); ++s)
    for (const MapElement& e : gts[s].elements)
      if (e.class_label == cls) {
        gt_of[s].push_back(&e);
        ++num_gt;
      }
  std::vector<Candidate> cands;
  for (std::size_t s = 0; s < preds.size(); ++s)
    for (std::size_t i = 0; i < preds[s].elements.size(); ++i)
      if (preds[s].elements[i].element.class_label == cls) cands.push_back({preds[s].elements[i].confidence, s, i});
  if (num_gt == 0) return cands.empty() ? 1.0 : 0.0;
  if (cands.empty()) return 0.0;
  std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.sample != b.sample) return a.sample < b.sample;
    return a.element < b.element;
  });

  std::vector<std::vector<char>> used(gts.size());
  for (std::size_t s = 0; s < gts.size(); ++s) used[s].assign(gt_of[s].size(), 0);
  std::vector<char> tp;
  tp.reserve(cands.size());
  for (const Candidate& c : cands) {
    const MapElement& p = preds[c.sample].elements[c.element].element;
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_g = 0;
    for (std::size_t g = 0; g < gt_of[c.sample].size(); ++g) {
      if (used[c.sample][g]) continue;
      const MapElement& e = *gt_of[c.sample][g];
      const double d = chamfer_distance(p.points, e.points, n_interp, p.closed, e.closed);
      if (d < best) {
        best = d;
        best_g = g;
      }
    }
    const bool hit = best < tau;
    if (hit) used[c.sample][best_g] = 1;
    tp.push_back(hit);
  }
  return all_point_ap(tp, num_gt);
}

APReport aggregate_report(std::array<std::vector<double>, 3> ap, std::vector<double> thresholds) {
  APReport r;
  r.thresholds = std::move(thresholds);
  r.ap = std::move(ap);
  double total = 0;
  for (std::size_t c = 0; c < 3; ++c) {
    if (r.ap[c].size() != r.thresholds.size()) throw Error("ap report: threshold count mismatch");
    double s = 0;
    for (double v : r.ap[c]) s += v;
    r.ap_class[c] = s / static_cast<double>(r.ap[c].size());
    total += r.ap_class[c];
  }
  r.map = total / 3.0;
  return r;
}

APReport evaluate(const std::vector<ScoredMap>& preds, const std::vector<VectorMap>& gts, const EvalConfig& cfg) {
  cfg.validate();
  std::array<std::vector<double>, 3> ap;
  for (MapClass c : kAllMapClasses)
    for (double t : cfg.thresholds) ap[static_cast<int>(c)].push_back(ap_at_threshold(preds, gts, c, t, cfg.n_interp));
  return aggregate_report(std::move(ap), cfg.thresholds);
}

nlohmann::json report_to_json(const APReport& r) {
  nlohmann::json j;
  j["thresholds"] = r.thresholds;
  for (MapClass c : kAllMapClasses) {
    const int i = static_cast<int>(c);
    j["ap"][std::string(to_string(c))] = r.ap[i];
    j["ap_class"][std::string(to_string(c))] = r.ap_class[i];
  }
  j["mAP"] = r.map;
  return j;
}

APReport report_from_json(const nlohmann::json& j) {
  try {
    std::array<std::vector<double>, 3> ap;
    for (MapClass c : kAllMapClasses)
      ap[static_cast<int>(c)] = j.at("ap").at(std::string(to_string(c))).get<std::vector<double>>();
    return aggregate_report(std::move(ap), j.at("thresholds").get<std::vector<double>>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("ap report json: ") + e.what());
  }
}

std::string format_report_table(const APReport& r, const std::string& label) {
  char buf[256];
  std::string out;
  std::snprintf(buf, sizeof buf, "%-34s %8s %8s %8s %8s\n", "Method", "AP_div", "AP_ped", "AP_bound", "mAP");
  out += buf;
  std::snprintf(buf, sizeof buf, "%-34s %8.3f %8.3f %8.3f %8.3f\n", label.empty() ? "-" : label.c_str(), r.ap_class[0],
                r.ap_class[1], r.ap_class[2], r.map);
  out += buf;
  return out;
}

}  // namespace mapfm
