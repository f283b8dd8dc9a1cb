#pragma once

// Vector map decoder. Each of N instance queries is scattered into n point
// queries (instance content + shared per-point embedding); decoder layers
// run self-attention over all point queries, cross-attention to the BEV
// tokens and an MLP. Every layer regresses normalised points and gathers
// the point queries back per instance for classification.

#include <vector>

#include "mapfm/geometry.hpp"
#include "mapfm/heads.hpp"

namespace mapfm {

struct DecoderConfig {
  int num_instances = 20;      // N
  int points_per_element = 8;  // n
  int num_layers = 2;
  int num_heads = 2;
  int channels = 32;  // C

  void validate() const;
};

struct DecoderLayerOutput {
  ag::Var class_logits;  // N x 3
  ag::Var points;        // (N*n) x 2, row i*n+j, columns (u, v) in (0,1)
  ag::Var gathered;      // N x C
};

struct DecoderOutput {
  std::vector<DecoderLayerOutput> layers;
  int num_instances = 0;
  int points_per_element = 0;
  const DecoderLayerOutput& final_layer() const { return layers.back(); }
};

void init_decoder(nn::ParamStore& ps, const DecoderConfig& cfg, nn::Rng& rng);

DecoderOutput decode_map(const BEVFeatureMap& bev, const DecoderConfig& cfg, const nn::ParamStore& ps);

/// Normalised (u, v) -> ego metres: x = x_min + u*(x_max-x_min), y = y_min + v*(y_max-y_min).
Point2 denormalize(const BEVGridSpec& grid, double u, double v);
/// Inverse of denormalize.
std::pair<double, double> normalize(const BEVGridSpec& grid, Point2 p);

ScoredMap predictions_to_map(const DecoderOutput& out, const BEVGridSpec& grid, double score_threshold);

}  // namespace mapfm
