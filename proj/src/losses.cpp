#include "mapfm/losses.hpp"

#include <cmath>
#include <limits>

#include "mapfm/error.hpp"

namespace mapfm {

using ag::Matrix;
using ag::Node;
using ag::Var;

namespace {

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

int gt_row(int j, int n, Perm perm) { return perm == Perm::forward ? j : n - 1 - j; }

// focal value and d/dz for one logit against target t in [0, 1]
std::pair<double, double> focal_term(double z, double t, double alpha, double gamma) {
  const double p = sigm(z);
  const double log_p = -softplus(-z), log_q = -softplus(z);
  const double pos = -alpha * std::pow(1 - p, gamma) * log_p;
  const double neg = -(1 - alpha) * std::pow(p, gamma) * log_q;
  const double dpos = alpha * std::pow(1 - p, gamma) * (gamma * p * log_p - (1 - p));
  const double dneg = (1 - alpha) * std::pow(p, gamma) * (p - gamma * (1 - p) * log_q);
  return {t * pos + (1 - t) * neg, t * dpos + (1 - t) * dneg};
}

void check_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw Error(std::string(what) + ": shape mismatch " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}

Var scalar_op(double v, const Var& parent, std::function<void(Node&)> bw) {
  return ag::make_op(Matrix::Constant(1, 1, v), {parent}, std::move(bw));
}

}  // namespace

PointCost point_cost(const Matrix& pred, const Matrix& gt) {
  if (pred.rows() != gt.rows() || pred.cols() != 2 || gt.cols() != 2)
    throw Error("point_cost: point count mismatch " + std::to_string(pred.rows()) + " vs " + std::to_string(gt.rows()));
  const int n = static_cast<int>(pred.rows());
  double fwd = 0, rev = 0;
  for (int j = 0; j < n; ++j) {
    fwd += std::abs(pred(j, 0) - gt(j, 0)) + std::abs(pred(j, 1) - gt(j, 1));
    rev += std::abs(pred(j, 0) - gt(n - 1 - j, 0)) + std::abs(pred(j, 1) - gt(n - 1 - j, 1));
  }
  fwd /= n;
  rev /= n;
  return rev < fwd ? PointCost{rev, Perm::reverse} : PointCost{fwd, Perm::forward};
}

std::vector<std::pair<int, int>> hungarian(const Matrix& cost) {
  if (cost.size() == 0) return {};
  if (!cost.allFinite()) throw Error("hungarian: non-finite cost");
  if (cost.rows() > cost.cols()) {
    auto t = hungarian(cost.transpose());
    for (auto& [r, c] : t) std::swap(r, c);
    std::sort(t.begin(), t.end());
    return t;
  }
  // potentials method, 1-based with a virtual column 0
  const int n = static_cast<int>(cost.rows()), m = static_cast<int>(cost.cols());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::pair<int, int>> out;
  for (int j = 1; j <= m; ++j)
    if (p[j] != 0) out.emplace_back(p[j] - 1, j - 1);
  std::sort(out.begin(), out.end());
  return out;
}

double focal_cost(const Matrix& logits_row, int cls, double alpha, double gamma) {
  const double z = logits_row(0, cls);
  return focal_term(z, 1.0, alpha, gamma).first - focal_term(z, 0.0, alpha, gamma).first;
}

MatchResult match_instances(const Matrix& class_logits, const Matrix& points, int n,
                            const std::vector<GtInstance>& gts, const MatchWeights& w) {
  const int n_pred = static_cast<int>(class_logits.rows());
  MatchResult res;
  if (gts.empty()) {
    for (int i = 0; i < n_pred; ++i) res.unmatched_preds.push_back(i);
    return res;
  }
  const int k = static_cast<int>(gts.size());
  Matrix cost(n_pred, k);
  std::vector<std::vector<Perm>> perms(static_cast<std::size_t>(n_pred), std::vector<Perm>(k));
  for (int i = 0; i < n_pred; ++i) {
    const Matrix pred = points.middleRows(static_cast<Eigen::Index>(i) * n, n);
    for (int g = 0; g < k; ++g) {
      const PointCost pc = point_cost(pred, gts[g].points);
      perms[i][g] = pc.perm;
      cost(i, g) = w.cls * focal_cost(class_logits.row(i), static_cast<int>(gts[g].class_label)) + w.pts * pc.cost;
    }
  }
  std::vector<char> matched(static_cast<std::size_t>(n_pred), 0);
  for (const auto& [i, g] : hungarian(cost)) {
    res.pairs.push_back({i, g, perms[i][g]});
    matched[i] = 1;
  }
  for (int i = 0; i < n_pred; ++i)
    if (!matched[i]) res.unmatched_preds.push_back(i);
  return res;
}

double dice_loss(const Matrix& prob, const Matrix& gt, double eps) {
  check_same_shape(prob, gt, "dice_loss");
  const double inter = prob.cwiseProduct(gt).sum();
  return 1.0 - (2 * inter + eps) / (prob.sum() + gt.sum() + eps);
}

double focal_loss(const Matrix& logits, const Matrix& targets, double alpha, double gamma) {
  check_same_shape(logits, targets, "focal_loss");
  double s = 0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) s += focal_term(logits.data()[i], targets.data()[i], alpha, gamma).first;
  return s / static_cast<double>(logits.rows());
}

double seg_ce_loss(const Matrix& logits, const Matrix& gt) {
  check_same_shape(logits, gt, "seg_ce_loss");
  double s = 0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    const double z = logits.data()[i], t = gt.data()[i];
    s += t * softplus(-z) + (1 - t) * softplus(z);
  }
  return s / static_cast<double>(logits.size());
}

double direction_loss(const Matrix& pred, const Matrix& gt, Perm perm) {
  check_same_shape(pred, gt, "direction_loss");
  const int n = static_cast<int>(pred.rows());
  double s = 0;
  for (int j = 0; j + 1 < n; ++j) {
    const Eigen::RowVector2d e = pred.row(j + 1) - pred.row(j);
    const Eigen::RowVector2d g = gt.row(gt_row(j + 1, n, perm)) - gt.row(gt_row(j, n, perm));
    const double ne = e.norm(), ng = g.norm();
    s += (ne < 1e-12 || ng < 1e-12) ? 1.0 : 1.0 - e.dot(g) / (ne * ng);
  }
  return s / (n - 1);
}

Var dice_loss_from_logits(const Var& logits, const Matrix& gt, double eps) {
  check_same_shape(logits.value(), gt, "dice_loss");
  const Matrix p = logits.value().unaryExpr([](double z) { return sigm(z); });
  const double a = 2 * p.cwiseProduct(gt).sum() + eps;
  const double d = p.sum() + gt.sum() + eps;
  return scalar_op(1.0 - a / d, logits, [p, gt, a, d](Node& self) {
    const double g = self.grad(0, 0);
    const Matrix dldp = -(2.0 * gt.array() * d - a) / (d * d);
    self.parents[0]->grad_buffer().array() += g * dldp.array() * p.array() * (1 - p.array());
  });
}

Var focal_loss(const Var& logits, const Matrix& targets, double alpha, double gamma) {
  check_same_shape(logits.value(), targets, "focal_loss");
  const Matrix& z = logits.value();
  Matrix dz(z.rows(), z.cols());
  double s = 0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const auto [v, d] = focal_term(z.data()[i], targets.data()[i], alpha, gamma);
    s += v;
    dz.data()[i] = d;
  }
  const double inv = 1.0 / static_cast<double>(z.rows());
  return scalar_op(s * inv, logits, [dz = std::move(dz), inv](Node& self) {
    self.parents[0]->grad_buffer() += (self.grad(0, 0) * inv) * dz;
  });
}

Var seg_ce_loss(const Var& logits, const Matrix& gt) {
  check_same_shape(logits.value(), gt, "seg_ce_loss");
  const double v = seg_ce_loss(logits.value(), gt);
  const double inv = 1.0 / static_cast<double>(gt.size());
  return scalar_op(v, logits, [gt, inv](Node& self) {
    const Matrix& z = self.parents[0]->value;
    self.parents[0]->grad_buffer().array() +=
        (self.grad(0, 0) * inv) * (z.unaryExpr([](double x) { return sigm(x); }).array() - gt.array());
  });
}

Var direction_loss(const Var& pred, const Matrix& gt, Perm perm) {
  const Matrix& p = pred.value();
  check_same_shape(p, gt, "direction_loss");
  const int n = static_cast<int>(p.rows());
  Matrix dp = Matrix::Zero(n, 2);
  double s = 0;
  for (int j = 0; j + 1 < n; ++j) {
    const Eigen::RowVector2d e = p.row(j + 1) - p.row(j);
    const Eigen::RowVector2d g = gt.row(gt_row(j + 1, n, perm)) - gt.row(gt_row(j, n, perm));
    const double ne = e.norm(), ng = g.norm();
    if (ne < 1e-12 || ng < 1e-12) {
      s += 1.0;
      continue;
    }
    const double c = e.dot(g) / (ne * ng);
    s += 1.0 - c;
    // d(-cos)/de = -(g/(|e||g|) - cos * e/|e|^2)
    const Eigen::RowVector2d de = -(g / (ne * ng) - c * e / (ne * ne));
    dp.row(j + 1) += de;
    dp.row(j) -= de;
  }
  const double inv = 1.0 / (n - 1);
  return scalar_op(s * inv, pred, [dp = std::move(dp), inv](Node& self) {
    self.parents[0]->grad_buffer() += (self.grad(0, 0) * inv) * dp;
  });
}

Var point_l1_loss(const Var& pred, const Matrix& gt, Perm perm) {
  const Matrix& p = pred.value();
  check_same_shape(p, gt, "point_l1_loss");
  const int n = static_cast<int>(p.rows());
  Matrix sign(n, 2);
  double s = 0;
  for (int j = 0; j < n; ++j)
    for (int c = 0; c < 2; ++c) {
      const double d = p(j, c) - gt(gt_row(j, n, perm), c);
      s += std::abs(d);
      sign(j, c) = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
    }
  const double inv = 1.0 / n;
  return scalar_op(s * inv, pred, [sign = std::move(sign), inv](Node& self) {
    self.parents[0]->grad_buffer() += (self.grad(0, 0) * inv) * sign;
  });
}

double LossReport::recompute(const LossWeights& w) const {
  const auto c = components();
  double t = 0;
  for (std::size_t i = 0; i < c.size(); ++i) t += w.beta[i] * c[i];
  return t;
}

Matrix mask_column(const Mask& m) {
  Matrix out(static_cast<Eigen::Index>(m.data.size()), 1);
  for (std::size_t i = 0; i < m.data.size(); ++i) out(static_cast<Eigen::Index>(i), 0) = m.data[i] ? 1.0 : 0.0;
  return out;
}

std::vector<GtInstance> make_gt_instances(const VectorMap& map, const BEVGridSpec& grid, int n) {
  std::vector<GtInstance> out;
  for (const MapElement& e : map.elements) {
    const Polyline r = resample_polyline(e.points, n, e.closed);
    GtInstance g;
    g.class_label = e.class_label;
    g.points.resize(n, 2);
    for (int j = 0; j < n; ++j) {
      const auto [u, v] = normalize(grid, r[static_cast<std::size_t>(j)]);
      g.points(j, 0) = u;
      g.points(j, 1) = v;
    }
    out.push_back(std::move(g));
  }
  return out;
}

LossResult total_loss(const ModelOutputs& out, const LossTargets& targets, const LossWeights& weights,
                      const MatchWeights& match) {
  const DecoderOutput& dec = out.decoder;
  const int n = dec.points_per_element, n_inst = dec.num_instances;
  for (const GtInstance& g : targets.instances)
    if (g.points.rows() != n) throw Error("total_loss: ground truth not resampled to the decoder point count");

  LossResult res;
  std::vector<Var> pts_terms, cls_terms, dir_terms;
  const double inv_layers = 1.0 / static_cast<double>(dec.layers.size());
  for (const DecoderLayerOutput& layer : dec.layers) {
    MatchResult m = match_instances(layer.class_logits.value(), layer.points.value(), n, targets.instances, match);
    Matrix cls_target = Matrix::Zero(n_inst, static_cast<Eigen::Index>(kAllMapClasses.size()));
    std::vector<Var> lp, ld;
    for (const MatchPair& pr : m.pairs) {
      const GtInstance& g = targets.instances[static_cast<std::size_t>(pr.gt)];
      cls_target(pr.pred, static_cast<int>(g.class_label)) = 1.0;
      const Var pp = ag::slice_rows(layer.points, static_cast<Eigen::Index>(pr.pred) * n, n);
      lp.push_back(point_l1_loss(pp, g.points, pr.perm));
      ld.push_back(direction_loss(pp, g.points, pr.perm));
    }
    cls_terms.push_back(focal_loss(layer.class_logits, cls_target));
    if (!lp.empty()) {
      const std::vector<double> mean_w(lp.size(), 1.0 / static_cast<double>(lp.size()));
      pts_terms.push_back(ag::weighted_sum(lp, mean_w));
      dir_terms.push_back(ag::weighted_sum(ld, mean_w));
    }
    res.matches.push_back(std::move(m));
  }
  auto layer_mean = [&](const std::vector<Var>& terms) {
    if (terms.empty()) return ag::constant(Matrix::Zero(1, 1));
    return ag::weighted_sum(terms, std::vector<double>(terms.size(), inv_layers));
  };
  const Var l_pts = layer_mean(pts_terms), l_cls = layer_mean(cls_terms), l_dir = layer_mean(dir_terms);

  const Var l_bevseg = seg_ce_loss(out.bev_lines.logits, targets.lines);
  if (out.pv_lanes.size() != targets.pv.size()) throw Error("total_loss: camera count mismatch in PV targets");
  std::vector<Var> pv;
  for (std::size_t j = 0; j < out.pv_lanes.size(); ++j) pv.push_back(seg_ce_loss(out.pv_lanes[j].logits, targets.pv[j]));
  const Var l_pvseg =
      pv.empty() ? ag::constant(Matrix::Zero(1, 1))
                 : ag::weighted_sum(pv, std::vector<double>(pv.size(), 1.0 / static_cast<double>(pv.size())));

  Var l_surf = ag::constant(Matrix::Zero(1, 1));
  if (out.arss) {
    const Var& z = out.arss->logits;
    const std::array<Var, 2> d = {dice_loss_from_logits(ag::slice_cols(z, 0, 1), targets.surface[0]),
                                  dice_loss_from_logits(ag::slice_cols(z, 1, 1), targets.surface[1])};
    const std::array<double, 2> ones = {1.0, 1.0};
    l_surf = ag::weighted_sum(d, ones);
  }

  const std::array<Var, 6> comps = {l_pts, l_cls, l_dir, l_bevseg, l_pvseg, l_surf};
  res.total = ag::weighted_sum(comps, weights.beta);
  res.report = {l_pts.scalar(), l_cls.scalar(),  l_dir.scalar(), l_bevseg.scalar(),
                l_pvseg.scalar(), l_surf.scalar(), res.total.scalar()};
  return res;
}

}  // namespace mapfm
