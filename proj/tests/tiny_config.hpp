#pragma once

#include <filesystem>
#include <string>

#include "mapfm/config.hpp"

namespace mapfm::check {

inline const char* kTinyConfigText = R"(# small enough for unit tests
[train]
steps = 3
batch_size = 2
eval_every = 2
holdout_fraction = 0.25

[grid]
rows = 30
cols = 15
x_min = -15
x_max = 15
y_min = -7.5
y_max = 7.5

[rig]
image_height = 32
image_width = 64

[backbone]
embed_dim = 16
num_blocks = 2
tap_blocks = [2]

[bev]
channels = 16
pillar_heights = [0]

[decoder]
channels = 16
num_instances = 8
points_per_element = 4
num_layers = 1

[data]
num_scenes = 4
)";

inline TrainConfig tiny_config() { return config_from_key_values(parse_key_values(kTinyConfigText)); }

inline std::filesystem::path fresh_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / "mapfm_tests" / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace mapfm::check
