#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "mapfm/bev_encoder.hpp"
#include "mapfm/error.hpp"
#include "mapfm/scene.hpp"

using namespace mapfm;

namespace {

const BEVGridSpec kGrid = BEVGridSpec::make(30, 15, 30.0, 15.0);

std::vector<CameraFeatureMap> random_features(int cams, int h, int w, int c, nn::Rng& rng, bool grad = false) {
  std::vector<CameraFeatureMap> out;
  for (int j = 0; j < cams; ++j) out.push_back({ag::leaf(nn::normal_init(rng, h * w, c, 1.0), grad), h, w});
  return out;
}

void make_refine_identity(nn::ParamStore& ps) {
  for (const std::string& n : ps.names())
    if (n.find(".attn.out.") != std::string::npos || n.find(".mlp.fc2.") != std::string::npos)
      ps.get(n).mutable_value().setZero();
}

}  // namespace

TEST(PillarSampler, WeightsSumToOnePerHitCell) {
  const auto rig = make_rig(RigConfig{});
  const PillarSampler s = make_pillar_sampler(rig, kGrid, {-1, 0, 1}, 8, 16, 8);
  ag::Matrix dense = ag::Matrix(*s.op);
  int hit_cells = 0, empty_cells = 0;
  for (int i = 0; i < kGrid.cells(); ++i) {
    if (s.hits[i] > 0) {
      ++hit_cells;
      EXPECT_NEAR(dense.row(i).sum(), 1.0, 1e-12);
    } else {
      ++empty_cells;
      EXPECT_EQ(dense.row(i).cwiseAbs().sum(), 0.0);
    }
  }
  EXPECT_GT(hit_cells, 0);
  EXPECT_GT(empty_cells, 0);  // cells behind the forward-looking rig
}

TEST(EncodeBev, OutputShape) {
  nn::Rng rng(1);
  nn::ParamStore ps;
  BEVEncoderConfig cfg;
  init_bev_encoder(ps, cfg, kGrid, 16, rng);
  const auto rig = make_rig(RigConfig{});
  const PillarSampler s = make_pillar_sampler(rig, kGrid, cfg.pillar_heights, 8, 16, 8);
  const ag::Var b = encode_bev(random_features(2, 8, 16, 16, rng), s, kGrid, cfg, ps);
  EXPECT_EQ(b.rows(), kGrid.cells());
  EXPECT_EQ(b.cols(), cfg.bev_channels);
  EXPECT_TRUE(b.value().allFinite());
}

TEST(EncodeBev, CellWithoutHitsGetsBareQuery) {
  nn::Rng rng(2);
  nn::ParamStore ps;
  BEVEncoderConfig cfg;
  cfg.num_refine_layers = 2;
  init_bev_encoder(ps, cfg, kGrid, 16, rng);
  make_refine_identity(ps);
  const PillarSampler s = make_pillar_sampler(make_rig(RigConfig{}), kGrid, cfg.pillar_heights, 8, 16, 8);
  const ag::Var b = encode_bev(random_features(2, 8, 16, 16, rng), s, kGrid, cfg, ps);
  const ag::Matrix& q = ps.get("bev.queries").value();
  int checked = 0;
  for (int i = 0; i < kGrid.cells(); ++i) {
    if (s.hits[i] != 0) continue;
    ++checked;
    EXPECT_EQ(b.value().row(i), q.row(i));
  }
  EXPECT_GT(checked, 0);
}

TEST(EncodeBev, DuplicateCameraEqualsSingleCamera) {
  nn::Rng rng(3);
  const auto rig = make_rig(RigConfig{});
  const auto feats = random_features(1, 8, 16, 16, rng);
  const PillarSampler one = make_pillar_sampler({rig[0]}, kGrid, {-1, 0, 1}, 8, 16, 8);
  const PillarSampler two = make_pillar_sampler({rig[0], rig[0]}, kGrid, {-1, 0, 1}, 8, 16, 8);
  const ag::Matrix a = sample_pillars(feats, one).value();
  const ag::Matrix b = sample_pillars({feats[0], feats[0]}, two).value();
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(EncodeBev, CameraOrderInvariant) {
  nn::Rng rng(4);
  nn::ParamStore ps;
  BEVEncoderConfig cfg;
  init_bev_encoder(ps, cfg, kGrid, 16, rng);
  const auto rig = make_rig(RigConfig{});
  const auto feats = random_features(2, 8, 16, 16, rng);
  const PillarSampler fwd = make_pillar_sampler(rig, kGrid, cfg.pillar_heights, 8, 16, 8);
  const PillarSampler rev = make_pillar_sampler({rig[1], rig[0]}, kGrid, cfg.pillar_heights, 8, 16, 8);
  const ag::Matrix a = encode_bev(feats, fwd, kGrid, cfg, ps).value();
  const ag::Matrix b = encode_bev({feats[1], feats[0]}, rev, kGrid, cfg, ps).value();
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(a, encode_bev(feats, fwd, kGrid, cfg, ps).value());
}

TEST(EncodeBev, ShapeMismatchRejected) {
  nn::Rng rng(5);
  nn::ParamStore ps;
  BEVEncoderConfig cfg;
  init_bev_encoder(ps, cfg, kGrid, 16, rng);
  const PillarSampler s = make_pillar_sampler(make_rig(RigConfig{}), kGrid, cfg.pillar_heights, 8, 16, 8);
  EXPECT_THROW(encode_bev(random_features(1, 8, 16, 16, rng), s, kGrid, cfg, ps), Error);
  EXPECT_THROW(encode_bev(random_features(2, 4, 16, 16, rng), s, kGrid, cfg, ps), Error);
  EXPECT_THROW(make_pillar_sampler(make_rig(RigConfig{}), kGrid, cfg.pillar_heights, 8, 16, 4), Error);
  cfg.bev_channels = 30;
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(EncodeBev, GradientMatchesFiniteDifferences) {
  nn::Rng rng(6);
  const BEVGridSpec grid = BEVGridSpec::make(6, 4, 12.0, 8.0);
  nn::ParamStore ps;
  BEVEncoderConfig cfg;
  cfg.bev_channels = 8;
  init_bev_encoder(ps, cfg, grid, 4, rng);
  const PillarSampler s = make_pillar_sampler(make_rig(RigConfig{}), grid, cfg.pillar_heights, 8, 16, 8);
  const auto feats = random_features(2, 8, 16, 4, rng, true);
  const ag::Matrix probe = nn::normal_init(rng, grid.cells(), 8, 1.0);
  auto loss = [&] { return ag::sum(ag::mul(encode_bev(feats, s, grid, cfg, ps), ag::constant(probe))); };
  auto leaves = check::all_params(ps);
  leaves.emplace_back("features_0", feats[0].features);
  leaves.emplace_back("features_1", feats[1].features);
  const auto r = check::grad_check(loss, leaves);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
  EXPECT_LT(r.max_strict_rel_error, 1e-4);
  EXPECT_GT(r.strict_checked, 0);
}

TEST(EncodeBev, SumGradientWrtInputFeature) {
  nn::Rng rng(7);
  const BEVGridSpec grid = BEVGridSpec::make(6, 4, 12.0, 8.0);
  nn::ParamStore ps;
  BEVEncoderConfig cfg;
  cfg.bev_channels = 8;
  init_bev_encoder(ps, cfg, grid, 4, rng);
  const PillarSampler s = make_pillar_sampler(make_rig(RigConfig{}), grid, cfg.pillar_heights, 8, 16, 8);
  const auto feats = random_features(2, 8, 16, 4, rng, true);
  auto loss = [&] { return ag::sum(encode_bev(feats, s, grid, cfg, ps)); };
  const auto r = check::grad_check(loss, {{"features_0", feats[0].features}});
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}
