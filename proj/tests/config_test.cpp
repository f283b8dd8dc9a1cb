#include <gtest/gtest.h>

#include "mapfm/config.hpp"
#include "mapfm/error.hpp"
#include "tiny_config.hpp"

using namespace mapfm;

namespace {

std::string error_of(const std::string& text) {
  try {
    config_from_key_values(parse_key_values(text));
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, DefaultsMatchTrainingSettings) {
  const TrainConfig c;
  EXPECT_DOUBLE_EQ(c.learning_rate, 4e-4);
  EXPECT_EQ(c.weights.beta, (std::array<double, 6>{5, 2, 0.005, 1, 1, 2}));
  EXPECT_DOUBLE_EQ(c.holdout_fraction, 0.25);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, TextRoundTripIsStable) {
  const TrainConfig c = check::tiny_config();
  const std::string text = config_to_text(c);
  const TrainConfig back = config_from_key_values(parse_key_values(text));
  EXPECT_EQ(config_to_text(back), text);
  EXPECT_EQ(back.model.backbone.embed_dim, 16);
  EXPECT_EQ(back.data.grid.rows, 30);
  EXPECT_EQ(back.model.bev.pillar_heights, std::vector<double>{0.0});
}

TEST(Config, EveryEmittedKeyIsAccepted) {
  const KeyValues kv = config_to_key_values(TrainConfig{});
  for (const char* k : {"train.learning_rate", "train.steps", "train.batch_size", "train.seed", "train.arss_enabled",
                        "train.eval_every", "grid.rows", "backbone.freeze_policy", "backbone.aggregation",
                        "decoder.num_instances", "weights.surf"})
    EXPECT_TRUE(kv.contains(k)) << k;
  for (const auto& [k, v] : kv) EXPECT_NO_THROW(config_from_key_values({{k, v}})) << k;
}

TEST(Config, SectionsPrefixKeys) {
  const KeyValues kv = parse_key_values("[backbone]\nembed_dim = 48 # comment\n[train]\nsteps=7\n");
  EXPECT_EQ(kv.at("backbone.embed_dim"), "48");
  EXPECT_EQ(kv.at("train.steps"), "7");
}

TEST(Config, ErrorsNameTheKey) {
  EXPECT_NE(error_of("train.lerning_rate = 1").find("train.lerning_rate"), std::string::npos);
  EXPECT_NE(error_of("train.steps = many").find("train.steps"), std::string::npos);
  EXPECT_NE(error_of("backbone.freeze_policy = partial").find("backbone.freeze_policy"), std::string::npos);
  EXPECT_NE(error_of("train.steps = 1\ntrain.steps = 2").find("duplicate"), std::string::npos);
  EXPECT_NE(error_of("train.learning_rate = 0").find("learning_rate"), std::string::npos);
  EXPECT_NE(error_of("bev.channels = 16").find("decoder.channels"), std::string::npos);
  EXPECT_NE(error_of("train.seed = -1").find("train.seed"), std::string::npos);
}
