#include <gtest/gtest.h>

#include <numeric>

#include "gradcheck.hpp"
#include "mapfm/decoder.hpp"
#include "mapfm/error.hpp"

using namespace mapfm;

namespace {

const BEVGridSpec kGrid = BEVGridSpec::make(30, 15, 30.0, 15.0);

BEVFeatureMap random_bev(const BEVGridSpec& g, int c, nn::Rng& rng, bool grad = false) {
  return {ag::leaf(nn::normal_init(rng, g.cells(), c, 1.0), grad), g.rows, g.cols};
}

}  // namespace

TEST(DecodeMap, Shapes) {
  nn::Rng rng(1);
  nn::ParamStore ps;
  DecoderConfig cfg;
  init_decoder(ps, cfg, rng);
  const DecoderOutput out = decode_map(random_bev(kGrid, 32, rng), cfg, ps);
  ASSERT_EQ(out.layers.size(), 2u);
  for (const auto& l : out.layers) {
    EXPECT_EQ(l.class_logits.rows(), 20);
    EXPECT_EQ(l.class_logits.cols(), 3);
    EXPECT_EQ(l.points.rows(), 20 * 8);
    EXPECT_EQ(l.points.cols(), 2);
    EXPECT_GT(l.points.value().minCoeff(), 0.0);
    EXPECT_LT(l.points.value().maxCoeff(), 1.0);
    EXPECT_TRUE(l.class_logits.value().allFinite());
  }
}

TEST(DecodeMap, PassthroughGatherEqualsInstanceEmbedding) {
  nn::Rng rng(2);
  nn::ParamStore ps;
  DecoderConfig cfg;
  init_decoder(ps, cfg, rng);
  ps.get("decoder.point_pos").mutable_value().setZero();
  for (const std::string& n : ps.names())
    if (n.find(".self_attn.out.") != std::string::npos || n.find(".cross_attn.out.") != std::string::npos ||
        (n.starts_with("decoder.layer_") && n.find(".mlp.fc2.") != std::string::npos))
      ps.get(n).mutable_value().setZero();
  const DecoderOutput out = decode_map(random_bev(kGrid, 32, rng), cfg, ps);
  const ag::Matrix& inst = ps.get("decoder.instance_embed").value();
  for (const auto& l : out.layers) EXPECT_LT((l.gathered.value() - inst).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(DecodeMap, InstanceEquivariance) {
  nn::Rng rng(3);
  nn::ParamStore ps;
  DecoderConfig cfg;
  cfg.num_instances = 6;
  cfg.points_per_element = 4;
  init_decoder(ps, cfg, rng);
  const BEVFeatureMap bev = random_bev(kGrid, 32, rng);
  const DecoderOutput a = decode_map(bev, cfg, ps);
  std::vector<int> perm(6);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng.engine());
  const ag::Matrix orig = ps.get("decoder.instance_embed").value();
  for (int i = 0; i < 6; ++i) ps.get("decoder.instance_embed").mutable_value().row(i) = orig.row(perm[i]);
  const DecoderOutput b = decode_map(bev, cfg, ps);
  for (std::size_t l = 0; l < a.layers.size(); ++l)
    for (int i = 0; i < 6; ++i) {
      EXPECT_LT((b.layers[l].class_logits.value().row(i) - a.layers[l].class_logits.value().row(perm[i]))
                    .cwiseAbs()
                    .maxCoeff(),
                1e-12);
      for (int j = 0; j < 4; ++j)
        EXPECT_LT((b.layers[l].points.value().row(i * 4 + j) - a.layers[l].points.value().row(perm[i] * 4 + j))
                      .cwiseAbs()
                      .maxCoeff(),
                  1e-12);
    }
}

TEST(DecodeMap, Deterministic) {
  nn::Rng rng(4);
  nn::ParamStore ps;
  DecoderConfig cfg;
  init_decoder(ps, cfg, rng);
  const BEVFeatureMap bev = random_bev(kGrid, 32, rng);
  EXPECT_EQ(decode_map(bev, cfg, ps).final_layer().points.value(), decode_map(bev, cfg, ps).final_layer().points.value());
  EXPECT_THROW(decode_map(random_bev(kGrid, 16, rng), cfg, ps), Error);
}

TEST(DecodeMap, GradientWrtBevMatchesFiniteDifferences) {
  nn::Rng rng(5);
  const BEVGridSpec g = BEVGridSpec::make(6, 4, 12.0, 8.0);
  nn::ParamStore ps;
  DecoderConfig cfg;
  cfg.num_instances = 3;
  cfg.points_per_element = 3;
  cfg.channels = 8;
  init_decoder(ps, cfg, rng);
  const BEVFeatureMap bev = random_bev(g, 8, rng, true);
  auto loss = [&] { return ag::sum(decode_map(bev, cfg, ps).final_layer().points); };
  auto r = check::grad_check(loss, {{"bev", bev.features}});
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
  EXPECT_LT(r.max_strict_rel_error, 1e-4);

  const ag::Matrix probe = nn::normal_init(rng, 3, 3, 1.0);
  auto loss_all = [&] {
    const DecoderOutput o = decode_map(bev, cfg, ps);
    ag::Var s = ag::sum(ag::mul(o.layers[0].class_logits, ag::constant(probe)));
    for (const auto& l : o.layers) s = ag::add(s, ag::sum(ag::mul(l.points, l.points)));
    return s;
  };
  r = check::grad_check(loss_all, check::all_params(ps));
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
  EXPECT_LT(r.max_strict_rel_error, 1e-4);
}

TEST(PredictionsToMap, SingleConfidentDivider) {
  DecoderOutput out;
  out.num_instances = 4;
  out.points_per_element = 3;
  ag::Matrix logits = ag::Matrix::Constant(4, 3, -20.0);
  logits(0, 0) = 20.0;
  ag::Matrix pts(12, 2);
  for (int i = 0; i < 12; ++i) pts.row(i) << 0.1 + 0.05 * i, 0.5;
  out.layers.push_back({ag::constant(logits), ag::constant(pts), ag::Var()});
  const ScoredMap m = predictions_to_map(out, kGrid, 0.5);
  ASSERT_EQ(m.elements.size(), 1u);
  EXPECT_EQ(m.elements[0].element.class_label, MapClass::divider);
  EXPECT_NEAR(m.elements[0].confidence, 1.0, 1e-8);
  EXPECT_EQ(m.elements[0].element.points.size(), 3u);
}

TEST(PredictionsToMap, Denormalize) {
  const Point2 p = denormalize(kGrid, 0.5, 0.5);
  EXPECT_EQ(p.x, 0.0);
  EXPECT_EQ(p.y, 0.0);
  const auto [u, v] = normalize(kGrid, {29.0, -14.0});
  EXPECT_NEAR(denormalize(kGrid, u, v).x, 29.0, 1e-12);
  EXPECT_NEAR(denormalize(kGrid, u, v).y, -14.0, 1e-12);
}

TEST(PredictionsToMap, ZeroThresholdKeepsAllSortedAndMonotone) {
  nn::Rng rng(6);
  nn::ParamStore ps;
  DecoderConfig cfg;
  init_decoder(ps, cfg, rng);
  ps.get("decoder.class_head.bias").mutable_value().setZero();
  const DecoderOutput out = decode_map(random_bev(kGrid, 32, rng), cfg, ps);
  const ScoredMap all = predictions_to_map(out, kGrid, 0.0);
  ASSERT_EQ(all.elements.size(), 20u);
  for (std::size_t i = 1; i < all.elements.size(); ++i)
    EXPECT_GE(all.elements[i - 1].confidence, all.elements[i].confidence);
  std::size_t prev = all.elements.size();
  for (double t : {0.3, 0.5, 0.55, 0.6, 0.8}) {
    const std::size_t k = predictions_to_map(out, kGrid, t).elements.size();
    EXPECT_LE(k, prev);
    prev = k;
  }
}
