#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "mapfm/backbone.hpp"
#include "mapfm/error.hpp"

using namespace mapfm;

namespace {

Image random_image(int h, int w, nn::Rng& rng) {
  Image img;
  img.height = h;
  img.width = w;
  img.rgb.resize(static_cast<std::size_t>(h) * w * 3);
  for (double& v : img.rgb) v = rng.uniform();
  return img;
}

}  // namespace

TEST(Backbone, FeatureShape) {
  nn::Rng rng(1);
  nn::ParamStore ps;
  BackboneConfig cfg;
  init_backbone(ps, cfg, 64, 128, rng);
  const auto feats = extract_features({random_image(64, 128, rng)}, cfg, ps);
  ASSERT_EQ(feats.size(), 1u);
  EXPECT_EQ(feats[0].height, 8);
  EXPECT_EQ(feats[0].width, 16);
  EXPECT_EQ(feats[0].features.rows(), 8 * 16);
  EXPECT_EQ(feats[0].features.cols(), 32);
}

TEST(Backbone, ConcatPreProjectionChannels) {
  nn::Rng rng(2);
  nn::ParamStore ps;
  BackboneConfig cfg;
  cfg.aggregation = Aggregation::concat;
  cfg.tap_blocks = {1, 2, 3};
  init_backbone(ps, cfg, 64, 128, rng);
  const Image img = random_image(64, 128, rng);
  const auto taps = backbone_taps(img, cfg, ps);
  ASSERT_EQ(taps.size(), 3u);
  EXPECT_EQ(ag::concat_cols(taps).cols(), 96);
  EXPECT_EQ(ps.get("neck.proj.weight").rows(), 96);
  EXPECT_EQ(extract_features({img}, cfg, ps)[0].features.cols(), 32);
}

TEST(Backbone, MultiLayerCnnShape) {
  nn::Rng rng(3);
  nn::ParamStore ps;
  BackboneConfig cfg;
  cfg.aggregation = Aggregation::multi_layer_cnn;
  cfg.tap_blocks = {2, 3, 4};
  init_backbone(ps, cfg, 64, 128, rng);
  const auto f = extract_features({random_image(64, 128, rng)}, cfg, ps);
  EXPECT_EQ(f[0].features.rows(), 128);
  EXPECT_EQ(f[0].features.cols(), 32);
  EXPECT_TRUE(f[0].features.value().allFinite());
}

TEST(Backbone, ZeroPathGivesZeroBlockOutputs) {
  nn::Rng rng(4);
  nn::ParamStore ps;
  BackboneConfig cfg;
  cfg.aggregation = Aggregation::concat;
  cfg.tap_blocks = {1, 2, 3, 4};
  init_backbone(ps, cfg, 32, 32, rng);
  for (const std::string& n : ps.names())
    if (n.ends_with(".bias") || n.ends_with(".beta") || n == "backbone.pos_embed") ps.get(n).mutable_value().setZero();
  Image img = random_image(32, 32, rng);
  std::fill(img.rgb.begin(), img.rgb.end(), 0.0);
  for (const ag::Var& t : backbone_taps(img, cfg, ps)) EXPECT_EQ(t.value().cwiseAbs().maxCoeff(), 0.0);
}

TEST(Backbone, IndivisibleImageRejected) {
  nn::Rng rng(5);
  nn::ParamStore ps;
  BackboneConfig cfg;
  EXPECT_THROW(init_backbone(ps, cfg, 60, 128, rng), Error);
  EXPECT_THROW(patchify(random_image(60, 128, rng), 8), Error);
}

TEST(Backbone, ConfigValidation) {
  BackboneConfig cfg;
  cfg.tap_blocks = {3};
  EXPECT_THROW(cfg.validate(), Error);
  cfg.aggregation = Aggregation::concat;
  cfg.tap_blocks = {2, 5};
  EXPECT_THROW(cfg.validate(), Error);
  cfg.tap_blocks = {2, 4};
  cfg.num_heads = 3;
  EXPECT_THROW(cfg.validate(), Error);
  EXPECT_THROW(aggregation_from_string("mean"), Error);
  EXPECT_EQ(freeze_policy_from_string("finetune_last"), FreezePolicy::finetune_last);
}

TEST(Backbone, FreezePolicies) {
  nn::Rng rng(6);
  nn::ParamStore ps;
  BackboneConfig cfg;
  cfg.aggregation = Aggregation::concat;
  cfg.tap_blocks = {2, 3, 4};
  init_backbone(ps, cfg, 64, 128, rng);

  cfg.freeze_policy = FreezePolicy::frozen;
  EXPECT_TRUE(trainable_parameters(cfg, ps).empty());

  cfg.freeze_policy = FreezePolicy::finetune_last;
  const auto last = trainable_parameters(cfg, ps);
  EXPECT_FALSE(last.empty());
  for (const std::string& n : last)
    EXPECT_TRUE(n.starts_with("backbone.block_4.") || n.starts_with("backbone.final_norm.")) << n;
  EXPECT_TRUE(last.contains("backbone.final_norm.gamma"));
  EXPECT_TRUE(last.contains("backbone.block_4.attn.q.weight"));

  cfg.freeze_policy = FreezePolicy::full;
  std::size_t audit = 0;
  for (const std::string& n : ps.names()) audit += n.starts_with("backbone.");
  EXPECT_EQ(trainable_parameters(cfg, ps).size(), audit);
  EXPECT_FALSE(trainable_parameters(cfg, ps).contains("neck.proj.weight"));
}

TEST(Backbone, Deterministic) {
  nn::Rng rng(7);
  nn::ParamStore ps;
  BackboneConfig cfg;
  init_backbone(ps, cfg, 32, 64, rng);
  const Image img = random_image(32, 64, rng);
  EXPECT_EQ(extract_features({img}, cfg, ps)[0].features.value(), extract_features({img}, cfg, ps)[0].features.value());
}

class BackboneGrad : public ::testing::TestWithParam<Aggregation> {};

TEST_P(BackboneGrad, MatchesFiniteDifferences) {
  nn::Rng rng(8);
  nn::ParamStore ps;
  BackboneConfig cfg;
  cfg.num_blocks = GetParam() == Aggregation::last_layer ? 1 : 2;
  cfg.embed_dim = 8;
  cfg.patch_size = 4;
  cfg.aggregation = GetParam();
  cfg.tap_blocks = GetParam() == Aggregation::last_layer ? std::vector<int>{1} : std::vector<int>{1, 2};
  init_backbone(ps, cfg, 8, 16, rng);
  const Image img = random_image(8, 16, rng);
  const ag::Matrix probe = nn::normal_init(rng, 8, 8, 1.0);
  auto loss = [&] { return ag::sum(ag::mul(extract_features({img}, cfg, ps)[0].features, ag::constant(probe))); };
  const auto r = check::grad_check(loss, check::all_params(ps));
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
  EXPECT_LT(r.max_strict_rel_error, 1e-4);
  EXPECT_GT(r.strict_checked, 0);
  EXPECT_EQ(r.checked, static_cast<long>(ps.scalar_count()));
}

INSTANTIATE_TEST_SUITE_P(Aggregations, BackboneGrad,
                         ::testing::Values(Aggregation::last_layer, Aggregation::concat, Aggregation::multi_layer_cnn));
