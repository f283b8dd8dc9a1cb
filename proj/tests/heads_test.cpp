#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "mapfm/error.hpp"
#include "mapfm/heads.hpp"

using namespace mapfm;

namespace {

BEVFeatureMap random_bev(int h, int w, int c, nn::Rng& rng, bool grad = false) {
  return {ag::leaf(nn::normal_init(rng, h * w, c, 1.0), grad), h, w};
}

}  // namespace

TEST(Heads, Shapes) {
  nn::Rng rng(1);
  nn::ParamStore ps;
  init_heads(ps, 16, 8, true, rng);
  const BEVFeatureMap bev = random_bev(30, 15, 16, rng);
  const SegLogits a = arss_forward(bev, ps);
  EXPECT_EQ(a.logits.rows(), 30 * 15);
  EXPECT_EQ(a.logits.cols(), 2);
  EXPECT_EQ(aux_seg_forward(bev, SegRole::bev_lines, ps).logits.cols(), 3);
  const CameraFeatureMap cam{ag::constant(nn::normal_init(rng, 8 * 16, 8, 1.0)), 8, 16};
  const SegLogits pv = aux_seg_forward(cam, SegRole::pv_lanes, ps, 64, 128);
  EXPECT_EQ(pv.height, 64);
  EXPECT_EQ(pv.width, 128);
  EXPECT_EQ(pv.logits.rows(), 64 * 128);
  EXPECT_EQ(pv.logits.cols(), 1);
}

TEST(Heads, ZeroParametersGiveHalfProbability) {
  nn::Rng rng(2);
  nn::ParamStore ps;
  init_heads(ps, 8, 8, true, rng);
  for (const std::string& n : ps.names()) ps.get(n).mutable_value().setZero();
  const SegLogits a = arss_forward(random_bev(6, 4, 8, rng), ps);
  EXPECT_EQ(a.logits.value().cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(ag::sigmoid(a.logits).value().minCoeff(), 0.5);
  for (const Mask& m : hard_masks(a)) EXPECT_EQ(m.count(), 24u);
}

TEST(Heads, ConstantLogitsUpsampleToConstant) {
  nn::Rng rng(3);
  nn::ParamStore ps;
  init_heads(ps, 8, 8, false, rng);
  for (const std::string& n : ps.names())
    if (n.starts_with("heads.pv_lanes.conv2")) ps.get(n).mutable_value().setZero();
  ps.get("heads.pv_lanes.conv2.bias").mutable_value().setConstant(0.7);
  const CameraFeatureMap cam{ag::constant(nn::normal_init(rng, 8 * 16, 8, 1.0)), 8, 16};
  const ag::Matrix v = aux_seg_forward(cam, SegRole::pv_lanes, ps, 64, 128).logits.value();
  EXPECT_NEAR(v.maxCoeff(), 0.7, 1e-12);
  EXPECT_NEAR(v.minCoeff(), 0.7, 1e-12);
  EXPECT_FALSE(ps.contains("heads.arss.conv1.weight"));
}

TEST(Heads, RoleInputMismatchRejected) {
  nn::Rng rng(4);
  nn::ParamStore ps;
  init_heads(ps, 8, 8, true, rng);
  const CameraFeatureMap cam{ag::constant(nn::normal_init(rng, 8 * 16, 8, 1.0)), 8, 16};
  EXPECT_THROW(aux_seg_forward(random_bev(6, 4, 8, rng), SegRole::pv_lanes, ps), Error);
  EXPECT_THROW(aux_seg_forward(cam, SegRole::bev_lines, ps, 64, 128), Error);
  EXPECT_THROW(arss_forward({ag::constant(ag::Matrix::Zero(10, 8)), 6, 4}, ps), Error);
}

TEST(Heads, GradientMatchesFiniteDifferences) {
  nn::Rng rng(5);
  nn::ParamStore ps;
  init_heads(ps, 4, 4, true, rng);
  const BEVFeatureMap bev = random_bev(5, 4, 4, rng, true);
  const CameraFeatureMap cam{ag::leaf(nn::normal_init(rng, 2 * 4, 4, 1.0)), 2, 4};
  const ag::Matrix pa = nn::normal_init(rng, 20, 2, 1.0), pb = nn::normal_init(rng, 20, 3, 1.0),
                   pc = nn::normal_init(rng, 16 * 32, 1, 1.0);
  auto loss = [&] {
    const ag::Var a = ag::sum(ag::mul(ag::sigmoid(arss_forward(bev, ps).logits), ag::constant(pa)));
    const ag::Var b = ag::sum(ag::mul(aux_seg_forward(bev, SegRole::bev_lines, ps).logits, ag::constant(pb)));
    const ag::Var c = ag::sum(ag::mul(aux_seg_forward(cam, SegRole::pv_lanes, ps, 16, 32).logits, ag::constant(pc)));
    return ag::add(ag::add(a, b), c);
  };
  auto leaves = check::all_params(ps);
  leaves.emplace_back("bev", bev.features);
  leaves.emplace_back("cam", cam.features);
  const auto r = check::grad_check(loss, leaves);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
  EXPECT_LT(r.max_strict_rel_error, 1e-4);
}
