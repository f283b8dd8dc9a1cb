#pragma once

// Dense segmentation heads: two 3x3 convolutions with a GELU between them.
// ARSS predicts drivable and pedestrian-crossing logits on the BEV grid,
// the auxiliary heads predict per-class line masks on the BEV grid and a
// lane mask per camera at image resolution.

#include <string_view>

#include "mapfm/backbone.hpp"

namespace mapfm {

enum class SegRole { arss, bev_lines, pv_lanes };

std::string_view to_string(SegRole r);
int seg_classes(SegRole r);  // K

/// Token-major BEV feature grid.
struct BEVFeatureMap {
  ag::Var features;
  int height = 0;
  int width = 0;
};

/// Logits, token-major (height*width) x K.
struct SegLogits {
  SegRole role = SegRole::arss;
  ag::Var logits;
  int height = 0;
  int width = 0;
};

void init_heads(nn::ParamStore& ps, int bev_channels, int feature_channels, bool arss_enabled, nn::Rng& rng);

SegLogits arss_forward(const BEVFeatureMap& bev, const nn::ParamStore& ps);
SegLogits aux_seg_forward(const BEVFeatureMap& bev, SegRole role, const nn::ParamStore& ps);
/// pv_lanes only; the logits are bilinearly upsampled to image_height x image_width.
SegLogits aux_seg_forward(const CameraFeatureMap& feat, SegRole role, const nn::ParamStore& ps, int image_height,
                          int image_width);

/// Hard masks at probability >= 0.5, one per class.
std::vector<Mask> hard_masks(const SegLogits& s);

}  // namespace mapfm
