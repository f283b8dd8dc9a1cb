#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "mapfm/error.hpp"
#include "mapfm/evaluator.hpp"
#include "mapfm/nn.hpp"
#include "oracles.hpp"

using namespace mapfm;
using namespace mapfm::check;

TEST(ApAtThreshold, Examples) {
  nn::Rng rng(1);
  const MapElement e = random_element(rng, MapClass::divider);
  const std::vector<VectorMap> gts = {VectorMap{{e}}};
  for (double tau : {0.5, 1.0, 1.5}) EXPECT_EQ(ap_at_threshold({ScoredMap{{{e, 0.9}}}}, gts, MapClass::divider, tau), 1.0);
  EXPECT_EQ(ap_at_threshold({ScoredMap{}}, gts, MapClass::divider, 1.0), 0.0);
  EXPECT_EQ(ap_at_threshold({ScoredMap{}}, gts, MapClass::boundary, 1.0), 1.0);
  EXPECT_EQ(ap_at_threshold({ScoredMap{{{e, 0.9}}}}, {VectorMap{}}, MapClass::divider, 1.0), 0.0);
  EXPECT_THROW(ap_at_threshold({}, gts, MapClass::divider, 1.0), Error);
}

TEST(ApAtThreshold, BruteForceOracle) {
  nn::Rng rng(2);
  for (int t = 0; t < 100; ++t) {
    const ApInstance in = random_instance(rng);
    for (MapClass c : kAllMapClasses)
      for (double tau : {0.5, 1.0, 1.5})
        EXPECT_NEAR(ap_at_threshold(in.preds, in.gts, c, tau), brute_force_ap(in, c, tau), 1e-9);
  }
}

TEST(ApAtThreshold, ScoreRescalingAndThresholdMonotone) {
  nn::Rng rng(3);
  for (int t = 0; t < 40; ++t) {
    const ApInstance in = random_instance(rng);
    ApInstance scaled = in;
    for (auto& m : scaled.preds)
      for (auto& e : m.elements) e.confidence = 0.1 + 0.5 * e.confidence * e.confidence;
    for (MapClass c : kAllMapClasses) {
      EXPECT_EQ(ap_at_threshold(in.preds, in.gts, c, 1.0), ap_at_threshold(scaled.preds, scaled.gts, c, 1.0));
      EXPECT_LE(ap_at_threshold(in.preds, in.gts, c, 0.5), ap_at_threshold(in.preds, in.gts, c, 1.5) + 1e-12);
    }
  }
}

TEST(ApAtThreshold, DuplicatedTruePositive) {
  nn::Rng rng(4);
  const MapElement a = random_element(rng, MapClass::boundary), b = random_element(rng, MapClass::boundary);
  ApInstance in{{ScoredMap{{{a, 0.9}, {b, 0.8}}}}, {VectorMap{{a, b}}}};
  const double before = ap_at_threshold(in.preds, in.gts, MapClass::boundary, 1.0);
  in.preds[0].elements.insert(in.preds[0].elements.begin() + 1, {a, 0.85});
  const double after = ap_at_threshold(in.preds, in.gts, MapClass::boundary, 1.0);
  EXPECT_NEAR(after, brute_force_ap(in, MapClass::boundary, 1.0), 1e-12);
  EXPECT_LE(after, before);
  EXPECT_GE(after, 0.5);
}

TEST(Evaluate, TableOneArithmetic) {
  const APReport r = aggregate_report({std::vector<double>(3, 0.688), std::vector<double>(3, 0.657),
                                       std::vector<double>(3, 0.689)},
                                      {0.5, 1.0, 1.5});
  EXPECT_NEAR(r.map * 100, 67.8, 0.05);
  const APReport q = aggregate_report({std::vector<double>(3, 0.680), std::vector<double>(3, 0.634),
                                       std::vector<double>(3, 0.673)},
                                      {0.5, 1.0, 1.5});
  EXPECT_NEAR(q.map * 100, 66.23, 0.01);
}

TEST(Evaluate, PerfectPredictionsAndJsonRoundTrip) {
  nn::Rng rng(5);
  std::vector<VectorMap> gts(3);
  std::vector<ScoredMap> preds(3);
  for (int s = 0; s < 3; ++s)
    for (MapClass c : kAllMapClasses) {
      const MapElement e = random_element(rng, c);
      gts[s].elements.push_back(e);
      preds[s].elements.push_back({e, 1.0});
    }
  const APReport r = evaluate(preds, gts);
  EXPECT_EQ(r.map, 1.0);
  const APReport back = report_from_json(report_to_json(r));
  EXPECT_EQ(back.map, r.map);
  EXPECT_EQ(back.ap, r.ap);
  EXPECT_NE(format_report_table(r, "x").find("1.000"), std::string::npos);
  EvalConfig bad;
  bad.thresholds = {1.0, 0.5};
  EXPECT_THROW(evaluate(preds, gts, bad), Error);
}
