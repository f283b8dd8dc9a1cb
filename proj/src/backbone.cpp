#include "mapfm/backbone.hpp"

#include <algorithm>

#include "mapfm/error.hpp"

namespace mapfm {

using ag::Matrix;
using ag::Var;

namespace {

std::string block_name(int b) { return "backbone.block_" + std::to_string(b); }

int pyramid_factor(std::size_t level) { return 1 << level; }

}  // namespace

std::string_view to_string(Aggregation a) {
  switch (a) {
    case Aggregation::last_layer:
      return "last_layer";
    case Aggregation::concat:
      return "concat";
    case Aggregation::multi_layer_cnn:
      return "multi_layer_cnn";
  }
  return "unknown";
}

std::string_view to_string(FreezePolicy p) {
  switch (p) {
    case FreezePolicy::frozen:
      return "frozen";
    case FreezePolicy::finetune_last:
      return "finetune_last";
    case FreezePolicy::full:
      return "full";
  }
  return "unknown";
}

Aggregation aggregation_from_string(std::string_view s) {
  for (Aggregation a : {Aggregation::last_layer, Aggregation::concat, Aggregation::multi_layer_cnn})
    if (to_string(a) == s) return a;
  throw Error("unknown aggregation '" + std::string(s) + "'");
}

FreezePolicy freeze_policy_from_string(std::string_view s) {
  for (FreezePolicy p : {FreezePolicy::frozen, FreezePolicy::finetune_last, FreezePolicy::full})
    if (to_string(p) == s) return p;
  throw Error("unknown freeze policy '" + std::string(s) + "'");
}

void BackboneConfig::validate() const {
  if (patch_size < 1 || embed_dim < 1 || num_blocks < 1 || num_heads < 1 || mlp_ratio < 1)
    throw Error("backbone config: sizes must be positive");
  if (embed_dim % num_heads != 0) throw Error("backbone config: embed_dim not divisible by num_heads");
  if (tap_blocks.empty()) throw Error("backbone config: no tap blocks");
  for (std::size_t i = 0; i < tap_blocks.size(); ++i) {
    if (tap_blocks[i] < 1 || tap_blocks[i] > num_blocks) throw Error("backbone config: tap block out of range");
    if (i > 0 && tap_blocks[i] <= tap_blocks[i - 1]) throw Error("backbone config: tap blocks must ascend");
  }
  if (aggregation == Aggregation::last_layer && (tap_blocks.size() != 1 || tap_blocks[0] != num_blocks))
    throw Error("backbone config: last_layer aggregation taps exactly the last block");
}

void init_backbone(nn::ParamStore& ps, const BackboneConfig& cfg, int image_height, int image_width, nn::Rng& rng) {
  cfg.validate();
  if (image_height % cfg.patch_size != 0 || image_width % cfg.patch_size != 0)
    throw Error("image size not divisible by patch size");
  const int h = image_height / cfg.patch_size, w = image_width / cfg.patch_size;
  const int c = cfg.embed_dim;
  nn::init_linear(ps, "backbone.patch_embed", 3 * cfg.patch_size * cfg.patch_size, c, rng);
  ps.create("backbone.pos_embed", nn::normal_init(rng, h * w, c, 0.02));
  for (int b = 1; b <= cfg.num_blocks; ++b) nn::init_transformer_block(ps, block_name(b), c, cfg.mlp_ratio * c, rng);
  nn::init_layer_norm(ps, "backbone.final_norm", c);

  switch (cfg.aggregation) {
    case Aggregation::last_layer:
      break;
    case Aggregation::concat:
      nn::init_linear(ps, "neck.proj", static_cast<int>(cfg.tap_blocks.size()) * c, c, rng);
      break;
    case Aggregation::multi_layer_cnn: {
      const int f = pyramid_factor(cfg.tap_blocks.size() - 1);
      if (h % f != 0 || w % f != 0) throw Error("feature grid not divisible by the pyramid depth");
      for (std::size_t i = 0; i < cfg.tap_blocks.size(); ++i)
        nn::init_linear(ps, "neck.lateral_" + std::to_string(i + 1), c, c, rng);
      nn::init_conv3x3(ps, "neck.fuse", c, c, rng);
      break;
    }
  }
}

Matrix patchify(const Image& image, int patch_size) {
  if (image.height % patch_size != 0 || image.width % patch_size != 0)
    throw Error("image size " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                " not divisible by patch size " + std::to_string(patch_size));
  const int h = image.height / patch_size, w = image.width / patch_size;
  Matrix out(h * w, 3 * patch_size * patch_size);
  for (int pr = 0; pr < h; ++pr)
    for (int pc = 0; pc < w; ++pc)
      for (int r = 0; r < patch_size; ++r)
        for (int c = 0; c < patch_size; ++c)
          for (int ch = 0; ch < 3; ++ch)
            out(pr * w + pc, (r * patch_size + c) * 3 + ch) = image.at(pr * patch_size + r, pc * patch_size + c, ch);
  return out;
}

std::vector<Var> backbone_taps(const Image& image, const BackboneConfig& cfg, const nn::ParamStore& ps) {
  Var x = nn::linear(ps, "backbone.patch_embed", ag::constant(patchify(image, cfg.patch_size)));
  const Var& pos = ps.get("backbone.pos_embed");
  if (pos.rows() != x.rows()) throw Error("backbone: image size differs from the initialised size");
  x = ag::add(x, pos);
  std::vector<Var> taps;
  std::size_t next_tap = 0;
  for (int b = 1; b <= cfg.num_blocks && next_tap < cfg.tap_blocks.size(); ++b) {
    x = nn::transformer_block(ps, block_name(b), cfg.num_heads, x);
    if (b == cfg.tap_blocks[next_tap]) {
      taps.push_back(nn::layer_norm(ps, "backbone.final_norm", x));
      ++next_tap;
    }
  }
  return taps;
}

std::vector<CameraFeatureMap> extract_features(const std::vector<Image>& images, const BackboneConfig& cfg,
                                               const nn::ParamStore& ps) {
  std::vector<CameraFeatureMap> out;
  out.reserve(images.size());
  for (const Image& img : images) {
    const int h = img.height / cfg.patch_size, w = img.width / cfg.patch_size;
    std::vector<Var> taps = backbone_taps(img, cfg, ps);
    Var fused;
    switch (cfg.aggregation) {
      case Aggregation::last_layer:
        fused = taps.back();
        break;
      case Aggregation::concat:
        fused = nn::linear(ps, "neck.proj", ag::concat_cols(taps));
        break;
      case Aggregation::multi_layer_cnn: {
        // level i is pooled by 2^i
        Var top;
        for (std::size_t i = taps.size(); i-- > 0;) {
          const int f = pyramid_factor(i);
          Var level = f == 1 ? taps[i] : ag::sparse_apply(nn::avg_pool_op(h, w, f), taps[i]);
          level = nn::linear(ps, "neck.lateral_" + std::to_string(i + 1), level);
          if (top) level = ag::add(level, ag::sparse_apply(nn::bilinear_resize_op(h / (2 * f), w / (2 * f), h / f, w / f), top));
          top = level;
        }
        fused = nn::conv3x3(ps, "neck.fuse", top, h, w);
        break;
      }
    }
    out.push_back({fused, h, w});
  }
  return out;
}

std::set<std::string> trainable_parameters(const BackboneConfig& cfg, const nn::ParamStore& ps) {
  std::set<std::string> out;
  const std::string last = block_name(cfg.num_blocks) + ".";
  for (const std::string& name : ps.names()) {
    if (!name.starts_with("backbone.")) continue;
    switch (cfg.freeze_policy) {
      case FreezePolicy::frozen:
        break;
      case FreezePolicy::finetune_last:
        if (name.starts_with(last) || name.starts_with("backbone.final_norm.")) out.insert(name);
        break;
      case FreezePolicy::full:
        out.insert(name);
        break;
    }
  }
  return out;
}

}  // namespace mapfm
