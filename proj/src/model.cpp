#include "mapfm/model.hpp"

#include "mapfm/error.hpp"

namespace mapfm {

void ModelConfig::validate() const {
  backbone.validate();
  bev.validate();
  decoder.validate();
  if (decoder.channels != bev.bev_channels)
    throw Error("model config: decoder.channels (" + std::to_string(decoder.channels) + ") must equal bev.channels (" +
                std::to_string(bev.bev_channels) + ")");
}

Model make_model(const ModelConfig& cfg, const BEVGridSpec& grid, const std::vector<CameraParams>& rig,
                 std::uint64_t seed) {
  cfg.validate();
  grid.validate();
  if (rig.empty()) throw Error("model: empty rig");
  for (const CameraParams& c : rig)
    if (c.height != rig[0].height || c.width != rig[0].width) throw Error("model: cameras differ in image size");
  Model m;
  m.cfg = cfg;
  m.grid = grid;
  m.rig = rig;
  nn::Rng rng(seed);
  const int ih = rig[0].height, iw = rig[0].width;
  init_backbone(m.params, cfg.backbone, ih, iw, rng);
  init_bev_encoder(m.params, cfg.bev, grid, cfg.backbone.embed_dim, rng);
  init_heads(m.params, cfg.bev.bev_channels, cfg.backbone.embed_dim, cfg.arss_enabled, rng);
  init_decoder(m.params, cfg.decoder, rng);
  m.sampler = make_pillar_sampler(rig, grid, cfg.bev.pillar_heights, ih / cfg.backbone.patch_size,
                                  iw / cfg.backbone.patch_size, cfg.backbone.patch_size);
  return m;
}

ModelOutputs forward(const Model& model, const std::vector<Image>& images) {
  if (images.size() != model.rig.size())
    throw Error("forward: " + std::to_string(images.size()) + " images for a " + std::to_string(model.rig.size()) +
                "-camera rig");
  const ModelConfig& cfg = model.cfg;
  const std::vector<CameraFeatureMap> feats = extract_features(images, cfg.backbone, model.params);
  const BEVFeatureMap bev{encode_bev(feats, model.sampler, model.grid, cfg.bev, model.params), model.grid.rows,
                          model.grid.cols};
  ModelOutputs out;
  out.decoder = decode_map(bev, cfg.decoder, model.params);
  if (cfg.arss_enabled) out.arss = arss_forward(bev, model.params);
  out.bev_lines = aux_seg_forward(bev, SegRole::bev_lines, model.params);
  for (std::size_t j = 0; j < feats.size(); ++j)
    out.pv_lanes.push_back(
        aux_seg_forward(feats[j], SegRole::pv_lanes, model.params, images[j].height, images[j].width));
  return out;
}

std::set<std::string> trainable_set(const Model& model) {
  std::set<std::string> out = trainable_parameters(model.cfg.backbone, model.params);
  for (const std::string& n : model.params.names())
    if (!n.starts_with("backbone.")) out.insert(n);
  return out;
}

LossTargets make_targets(const SceneSample& sample, const BEVGridSpec& grid, int points_per_element) {
  LossTargets t;
  t.instances = make_gt_instances(sample.gt_map, grid, points_per_element);
  t.surface = {mask_column(sample.gt_raster.surface.drivable), mask_column(sample.gt_raster.surface.ped_crossing)};
  t.lines.resize(grid.cells(), static_cast<Eigen::Index>(kAllMapClasses.size()));
  for (MapClass c : kAllMapClasses) t.lines.col(static_cast<int>(c)) = mask_column(sample.gt_raster.lines[static_cast<int>(c)]);
  for (const Mask& m : sample.gt_pv_masks) t.pv.push_back(mask_column(m));
  return t;
}

}  // namespace mapfm
