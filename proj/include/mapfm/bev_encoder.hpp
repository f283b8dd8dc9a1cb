#pragma once

// Multi-camera features to a BEV feature grid: every cell is lifted to a
// few pillar heights, projected into each camera, bilinearly sampled,
// averaged over the valid hits, offset by a learnable per-cell query and
// refined by self-attention over the cell tokens.

#include <vector>

#include "mapfm/backbone.hpp"
#include "mapfm/geometry.hpp"

namespace mapfm {

struct BEVEncoderConfig {
  int bev_channels = 32;
  std::vector<double> pillar_heights = {-1.0, 0.0, 1.0};
  int num_refine_layers = 1;
  int num_heads = 2;

  void validate() const;
};

/// Fixed sampling operator, (H*W) x (M*h*w): row i averages the bilinear
/// taps of every valid pillar hit of cell i across the stacked cameras.
struct PillarSampler {
  ag::SparsePtr op;
  std::vector<int> hits;  // valid hits per cell
  int feature_height = 0;
  int feature_width = 0;
  int num_cameras = 0;
};

PillarSampler make_pillar_sampler(const std::vector<CameraParams>& rig, const BEVGridSpec& grid,
                                  const std::vector<double>& pillar_heights, int feature_height, int feature_width,
                                  int patch_size);

void init_bev_encoder(nn::ParamStore& ps, const BEVEncoderConfig& cfg, const BEVGridSpec& grid, int feature_channels,
                      nn::Rng& rng);

/// Camera-averaged samples in camera feature space, (H*W) x C_img; zero rows for cells without hits.
ag::Var sample_pillars(const std::vector<CameraFeatureMap>& features, const PillarSampler& sampler);

/// BEV feature B, token-major (H*W) x C with row = grid row * W + grid col.
ag::Var encode_bev(const std::vector<CameraFeatureMap>& features, const PillarSampler& sampler,
                   const BEVGridSpec& grid, const BEVEncoderConfig& cfg, const nn::ParamStore& ps);

}  // namespace mapfm
