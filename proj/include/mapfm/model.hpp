#pragma once

// The full network: backbone per camera, BEV encoder, ARSS and auxiliary
// segmentation heads, and the vector map decoder, sharing one ParamStore.

#include <set>
#include <string>
#include <vector>

#include "mapfm/bev_encoder.hpp"
#include "mapfm/decoder.hpp"
#include "mapfm/heads.hpp"
#include "mapfm/losses.hpp"
#include "mapfm/scene.hpp"

namespace mapfm {

struct ModelConfig {
  BackboneConfig backbone;
  BEVEncoderConfig bev;
  DecoderConfig decoder;
  bool arss_enabled = true;

  void validate() const;
};

struct Model {
  ModelConfig cfg;
  BEVGridSpec grid;
  std::vector<CameraParams> rig;
  PillarSampler sampler;
  nn::ParamStore params;
};

/// Builds the model for a grid and rig; parameters drawn from `seed`.
Model make_model(const ModelConfig& cfg, const BEVGridSpec& grid, const std::vector<CameraParams>& rig,
                 std::uint64_t seed);

ModelOutputs forward(const Model& model, const std::vector<Image>& images);

/// Parameter names the optimiser may update (backbone freeze policy applied).
std::set<std::string> trainable_set(const Model& model);

LossTargets make_targets(const SceneSample& sample, const BEVGridSpec& grid, int points_per_element);

}  // namespace mapfm
