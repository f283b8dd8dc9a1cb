#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "gradcheck.hpp"
#include "mapfm/error.hpp"
#include "mapfm/losses.hpp"
#include "oracles.hpp"

using namespace mapfm;
using ag::Matrix;
using namespace mapfm::check;

namespace {

double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST(PointCost, Examples) {
  nn::Rng rng(1);
  const Matrix a = random_points(rng, 6);
  EXPECT_EQ(point_cost(a, a).cost, 0.0);
  EXPECT_EQ(point_cost(a, a).perm, Perm::forward);
  EXPECT_EQ(point_cost(a, reversed(a)).cost, 0.0);
  EXPECT_EQ(point_cost(a, reversed(a)).perm, Perm::reverse);
  EXPECT_THROW(point_cost(a, random_points(rng, 5)), Error);
}

TEST(PointCost, TwoPermutationOracle) {
  nn::Rng rng(2);
  for (int t = 0; t < 1000; ++t) {
    const int n = 2 + static_cast<int>(rng.below(9));
    const Matrix a = random_points(rng, n), b = random_points(rng, n);
    const PointCost pc = point_cost(a, b), oracle = two_permutation_cost(a, b);
    EXPECT_EQ(pc.cost, oracle.cost);
    EXPECT_EQ(pc.perm, oracle.perm);
    EXPECT_NEAR(point_cost(b, a).cost, pc.cost, 1e-15);
    EXPECT_NEAR(point_cost(reversed(a), reversed(b)).cost, pc.cost, 1e-15);
  }
}

TEST(Hungarian, Examples) {
  Matrix c(2, 2);
  c << 1, 2, 2, 1;
  const auto a = hungarian(c);
  EXPECT_EQ(a, (std::vector<std::pair<int, int>>{{0, 0}, {1, 1}}));
  EXPECT_EQ(assignment_cost(c, a), 2.0);
  Matrix d = Matrix::Constant(3, 3, 5.0);
  d.diagonal().setZero();
  EXPECT_EQ(hungarian(d), (std::vector<std::pair<int, int>>{{0, 0}, {1, 1}, {2, 2}}));
  EXPECT_TRUE(hungarian(Matrix(0, 0)).empty());
  EXPECT_TRUE(hungarian(Matrix(0, 3)).empty());
}

TEST(Hungarian, BruteForceOracle) {
  nn::Rng rng(3);
  for (int t = 0; t < 60; ++t) {
    const int r = 1 + static_cast<int>(rng.below(6)), c = 1 + static_cast<int>(rng.below(6));
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(0, 10);
    const auto a = hungarian(m);
    EXPECT_EQ(a.size(), static_cast<std::size_t>(std::min(r, c)));
    EXPECT_EQ(assignment_cost(m, a), brute_force_assignment(m));
  }
}

TEST(Focal, ReductionIdentityAndSaturation) {
  nn::Rng rng(4);
  Matrix z(5, 3), t = Matrix::Zero(5, 3);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = rng.uniform(-4, 4);
  t(0, 1) = t(2, 0) = t(4, 2) = 1;
  EXPECT_NEAR(focal_loss(z, t, 0.5, 0.0), 0.5 * seg_ce_loss(z, t) * 3, 1e-12);
  const Matrix sat = (2 * t.array() - 1) * 20.0;
  EXPECT_LT(focal_loss(sat, t), 1e-6);
}

TEST(Focal, DirectFormulaOracle) {
  nn::Rng rng(5);
  Matrix z(6, 3), t = Matrix::Zero(6, 3);
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    z.data()[i] = rng.uniform(-5, 5);
    t.data()[i] = rng.uniform() < 0.3;
  }
  double s = 0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const double p = sigm(z.data()[i]);
    s += t.data()[i] ? -0.25 * (1 - p) * (1 - p) * std::log(p) : -0.75 * p * p * std::log(1 - p);
  }
  EXPECT_NEAR(focal_loss(z, t), s / 6, 1e-12);
  EXPECT_NEAR(focal_loss(ag::constant(z), t).scalar(), s / 6, 1e-12);
  EXPECT_NEAR(focal_cost(z.row(2), 1),
              -0.25 * std::pow(1 - sigm(z(2, 1)), 2) * std::log(sigm(z(2, 1))) +
                  0.75 * std::pow(sigm(z(2, 1)), 2) * std::log(1 - sigm(z(2, 1))),
              1e-12);
}

TEST(Dice, Identities) {
  Matrix gt = Matrix::Zero(10, 1);
  gt.topRows(4).setOnes();
  EXPECT_LE(dice_loss(gt, gt), 1e-6);
  Matrix disjoint = Matrix::Zero(10, 1);
  disjoint.bottomRows(4).setOnes();
  EXPECT_GE(dice_loss(disjoint, gt), 1 - 1e-6);
  Matrix prob = Matrix::Zero(10, 1);
  prob.topRows(8).setOnes();
  EXPECT_NEAR(dice_loss(prob, gt), 1.0 / 3.0, 1e-6);
  EXPECT_THROW(dice_loss(prob, Matrix::Zero(9, 1)), Error);
  nn::Rng rng(6);
  for (int t = 0; t < 50; ++t) {
    Matrix p(20, 1), g(20, 1);
    for (int i = 0; i < 20; ++i) {
      p(i, 0) = rng.uniform();
      g(i, 0) = rng.uniform() < 0.5;
    }
    const double d = dice_loss(p, g);
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, 1.0);
  }
}

TEST(Direction, Examples) {
  nn::Rng rng(7);
  const Matrix a = random_points(rng, 5);
  EXPECT_NEAR(direction_loss(a, a, Perm::forward), 0.0, 1e-12);
  Matrix line(5, 2);
  for (int j = 0; j < 5; ++j) line.row(j) << 0.1 + 0.15 * j, 0.7 - 0.1 * j;
  EXPECT_NEAR(direction_loss(reversed(line), line, Perm::forward), 2.0, 1e-12);
  EXPECT_NEAR(direction_loss(reversed(a), a, Perm::reverse), 0.0, 1e-12);
  Matrix flat = a;
  flat.row(1) = flat.row(0);
  const Matrix b = random_points(rng, 5);
  double s = 0;
  for (int j = 0; j < 4; ++j) {
    const Eigen::RowVector2d e = flat.row(j + 1) - flat.row(j), g = b.row(j + 1) - b.row(j);
    s += e.norm() == 0 ? 1.0 : 1.0 - e.dot(g) / (e.norm() * g.norm());
  }
  EXPECT_NEAR(direction_loss(flat, b, Perm::forward), s / 4, 1e-12);
}

TEST(MatchInstances, NoGroundTruth) {
  nn::Rng rng(8);
  const MatchResult m = match_instances(Matrix::Zero(4, 3), random_points(rng, 12), 3, {});
  EXPECT_TRUE(m.pairs.empty());
  EXPECT_EQ(m.unmatched_preds, (std::vector<int>{0, 1, 2, 3}));
}

TEST(MatchInstances, ExactPredictionIsMatched) {
  nn::Rng rng(9);
  const int n = 4;
  std::vector<GtInstance> gts = {{MapClass::boundary, random_points(rng, n)}, {MapClass::divider, random_points(rng, n)}};
  Matrix pts = random_points(rng, 5 * n);
  pts.middleRows(3 * n, n) = reversed(gts[0].points);
  const MatchResult m = match_instances(Matrix::Zero(5, 3), pts, n, gts);
  ASSERT_EQ(m.pairs.size(), 2u);
  bool found = false;
  for (const MatchPair& p : m.pairs)
    if (p.gt == 0) {
      found = true;
      EXPECT_EQ(p.pred, 3);
      EXPECT_EQ(p.perm, Perm::reverse);
    }
  EXPECT_TRUE(found);
  EXPECT_EQ(m.unmatched_preds.size(), 3u);
}

TEST(MatchInstances, InjectionOracleAndGtOrderInvariance) {
  nn::Rng rng(10);
  const int n = 3;
  for (int t = 0; t < 40; ++t) {
    Matrix logits(3, 3);
    for (Eigen::Index i = 0; i < logits.size(); ++i) logits.data()[i] = rng.uniform(-3, 3);
    const Matrix pts = random_points(rng, 3 * n);
    std::vector<GtInstance> gts = {{static_cast<MapClass>(rng.below(3)), random_points(rng, n)},
                                   {static_cast<MapClass>(rng.below(3)), random_points(rng, n)}};
    auto pair_cost = [&](int i, const GtInstance& g) {
      return 2 * focal_cost(logits.row(i), static_cast<int>(g.class_label)) +
             5 * point_cost(pts.middleRows(i * n, n), g.points).cost;
    };
    double best = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b)
        if (a != b) best = std::min(best, pair_cost(a, gts[0]) + pair_cost(b, gts[1]));
    auto total = [&](const MatchResult& m, const std::vector<GtInstance>& g) {
      double s = 0;
      for (const MatchPair& p : m.pairs) s += pair_cost(p.pred, g[static_cast<std::size_t>(p.gt)]);
      return s;
    };
    const MatchResult m = match_instances(logits, pts, n, gts);
    EXPECT_NEAR(total(m, gts), best, 1e-12);
    std::vector<GtInstance> swapped = {gts[1], gts[0]};
    EXPECT_NEAR(total(match_instances(logits, pts, n, swapped), swapped), best, 1e-12);
  }
}

TEST(LossReport, PaperWeightArithmetic) {
  LossReport r{1, 1, 1, 1, 1, 1, 0};
  EXPECT_NEAR(r.recompute(LossWeights{}), 11.005, 1e-12);
}

TEST(VarLosses, MatchScalarFormsAndGradients) {
  nn::Rng rng(11);
  Matrix z0(6, 3), t(6, 3), gpts = random_points(rng, 5);
  for (Eigen::Index i = 0; i < z0.size(); ++i) {
    z0.data()[i] = rng.uniform(-3, 3);
    t.data()[i] = rng.uniform() < 0.4;
  }
  const ag::Var z = ag::leaf(z0);
  const ag::Var p = ag::leaf(random_points(rng, 5));
  EXPECT_NEAR(seg_ce_loss(z, t).scalar(), seg_ce_loss(z0, t), 1e-15);
  EXPECT_NEAR(dice_loss_from_logits(ag::slice_cols(z, 0, 1), t.col(0)).scalar(),
              dice_loss(z0.col(0).unaryExpr([](double x) { return sigm(x); }), t.col(0)), 1e-14);
  EXPECT_NEAR(direction_loss(p, gpts, Perm::reverse).scalar(), direction_loss(p.value(), gpts, Perm::reverse), 1e-15);
  EXPECT_NEAR(point_l1_loss(p, gpts, Perm::forward).scalar(), point_cost(p.value(), gpts).perm == Perm::forward
                                                                  ? point_cost(p.value(), gpts).cost
                                                                  : point_l1_loss(p, gpts, Perm::forward).scalar(),
              1e-15);
  auto loss = [&] {
    const std::array<ag::Var, 5> parts = {seg_ce_loss(z, t), focal_loss(z, t),
                                          dice_loss_from_logits(ag::slice_cols(z, 1, 1), t.col(1)),
                                          direction_loss(p, gpts, Perm::reverse), point_l1_loss(p, gpts, Perm::forward)};
    const std::array<double, 5> w = {1, 1, 1, 1, 1};
    return ag::weighted_sum(parts, w);
  };
  const auto r = check::grad_check(loss, {{"z", z}, {"p", p}});
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
  EXPECT_LT(r.max_strict_rel_error, 1e-4);
}

TEST(TotalLoss, PerfectPrediction) {
  nn::Rng rng(12);
  const int n = 4, n_inst = 3, cells = 12;
  std::vector<GtInstance> gts = {{MapClass::divider, random_points(rng, n)}, {MapClass::ped_crossing, random_points(rng, n)}};
  Matrix logits = Matrix::Constant(n_inst, 3, -30.0), pts = random_points(rng, n_inst * n);
  logits(0, 0) = 30;
  pts.middleRows(0, n) = gts[0].points;
  logits(2, 1) = 30;
  pts.middleRows(2 * n, n) = gts[1].points;

  LossTargets tg;
  tg.instances = gts;
  Matrix drv(cells, 1), ped(cells, 1), lines(cells, 3), pv(20, 1);
  for (int i = 0; i < cells; ++i) {
    drv(i, 0) = i % 2;
    ped(i, 0) = i % 3 == 0;
    for (int k = 0; k < 3; ++k) lines(i, k) = (i + k) % 4 == 0;
  }
  for (int i = 0; i < 20; ++i) pv(i, 0) = i % 5 == 0;
  tg.surface = {drv, ped};
  tg.lines = lines;
  tg.pv = {pv};

  auto to_logit = [](const Matrix& m) { return Matrix((2 * m.array() - 1) * 40.0); };
  ModelOutputs out;
  out.decoder.num_instances = n_inst;
  out.decoder.points_per_element = n;
  out.decoder.layers.push_back({ag::constant(logits), ag::constant(pts), ag::Var()});
  Matrix arss(cells, 2);
  arss << to_logit(drv), to_logit(ped);
  out.arss = SegLogits{SegRole::arss, ag::constant(arss), 4, 3};
  out.bev_lines = {SegRole::bev_lines, ag::constant(to_logit(lines)), 4, 3};
  out.pv_lanes = {{SegRole::pv_lanes, ag::constant(to_logit(pv)), 4, 5}};

  const LossResult r = total_loss(out, tg, LossWeights{});
  EXPECT_EQ(r.report.l_pts, 0.0);
  EXPECT_NEAR(r.report.l_dir, 0.0, 1e-12);
  EXPECT_LE(r.report.l_surf, 2e-6);
  EXPECT_LT(r.report.l_cls, 1e-6);
  EXPECT_LT(r.report.l_bevseg, 1e-6);
  EXPECT_NEAR(r.report.total, r.report.recompute(LossWeights{}), 1e-9);
  for (double c : r.report.components()) EXPECT_GE(c, 0.0);

  out.arss.reset();
  EXPECT_EQ(total_loss(out, tg, LossWeights{}).report.l_surf, 0.0);
}
