#pragma once

// Plain-text configuration: `key = value` lines with optional [section]
// headers that prefix the keys ("[backbone]" + "embed_dim" is
// "backbone.embed_dim"). Lists are comma separated, optionally bracketed.

#include <filesystem>
#include <map>
#include <string>

#include "mapfm/evaluator.hpp"
#include "mapfm/model.hpp"

namespace mapfm {

struct AblationConfig {
  int num_scenes = 32;
  std::vector<int> seeds = {0, 1, 2};
  std::string data;  // existing dataset; generated from data.* when empty
};

struct TrainConfig {
  double learning_rate = 4e-4;
  int steps = 2000;
  int batch_size = 2;
  std::uint64_t seed = 0;
  int eval_every = 500;
  double holdout_fraction = 0.25;
  double score_threshold = 0.05;
  ModelConfig model;
  LossWeights weights;
  MatchWeights match;
  EvalConfig eval;
  DatasetConfig data;  // grid.* keys address data.grid
  int num_scenes = 8;
  AblationConfig ablation;

  void validate() const;
};

using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(const std::string& text);
/// Unknown keys and malformed values throw, naming the key.
TrainConfig config_from_key_values(const KeyValues& kv);
TrainConfig load_config(const std::filesystem::path& path);
/// Every addressable field with its current value.
KeyValues config_to_key_values(const TrainConfig& cfg);
std::string config_to_text(const TrainConfig& cfg);

}  // namespace mapfm
