#pragma once

// Surrogate foundation-model image encoder: a patch-embedding vision
// transformer with per-block feature taps, a freeze policy deciding which
// of its tensors may train, and a neck aggregating the tapped blocks.

#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "mapfm/io.hpp"
#include "mapfm/nn.hpp"

namespace mapfm {

enum class Aggregation { last_layer, concat, multi_layer_cnn };
enum class FreezePolicy { frozen, finetune_last, full };

std::string_view to_string(Aggregation a);
std::string_view to_string(FreezePolicy p);
Aggregation aggregation_from_string(std::string_view s);
FreezePolicy freeze_policy_from_string(std::string_view s);

struct BackboneConfig {
  int patch_size = 8;
  int embed_dim = 32;
  int num_blocks = 4;
  int num_heads = 2;
  int mlp_ratio = 2;
  Aggregation aggregation = Aggregation::last_layer;
  std::vector<int> tap_blocks = {4};  // 1-based block indices
  FreezePolicy freeze_policy = FreezePolicy::finetune_last;

  void validate() const;
};

/// Token-major (h*w) x C feature grid of one camera.
struct CameraFeatureMap {
  ag::Var features;
  int height = 0;
  int width = 0;
};

/// Registers backbone.* and neck.* parameters for images of the given size.
void init_backbone(nn::ParamStore& ps, const BackboneConfig& cfg, int image_height, int image_width, nn::Rng& rng);

/// Patch grid: (h/p*w/p) x (3*p*p) constant rows, channel-interleaved within a patch.
ag::Matrix patchify(const Image& image, int patch_size);

/// Outputs of the tapped blocks after the final norm, in tap order.
std::vector<ag::Var> backbone_taps(const Image& image, const BackboneConfig& cfg, const nn::ParamStore& ps);

/// Aggregated feature map per camera, C_img channels.
std::vector<CameraFeatureMap> extract_features(const std::vector<Image>& images, const BackboneConfig& cfg,
                                               const nn::ParamStore& ps);

/// Names of the backbone.* tensors the freeze policy allows to train.
std::set<std::string> trainable_parameters(const BackboneConfig& cfg, const nn::ParamStore& ps);

}  // namespace mapfm
