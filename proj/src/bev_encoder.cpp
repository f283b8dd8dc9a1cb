#include "mapfm/bev_encoder.hpp"

#include <algorithm>
#include <cmath>

#include "mapfm/error.hpp"

namespace mapfm {

using ag::Var;

void BEVEncoderConfig::validate() const {
  if (bev_channels < 1 || num_heads < 1 || num_refine_layers < 0) throw Error("bev encoder config: bad sizes");
  if (bev_channels % num_heads != 0) throw Error("bev encoder config: bev_channels not divisible by num_heads");
  if (bev_channels % 4 != 0) throw Error("bev encoder config: bev_channels must be divisible by 4");
  if (pillar_heights.empty()) throw Error("bev encoder config: no pillar heights");
}

PillarSampler make_pillar_sampler(const std::vector<CameraParams>& rig, const BEVGridSpec& grid,
                                  const std::vector<double>& pillar_heights, int feature_height, int feature_width,
                                  int patch_size) {
  grid.validate();
  if (rig.empty()) throw Error("pillar sampler: empty rig");
  if (feature_height < 1 || feature_width < 1 || patch_size < 1) throw Error("pillar sampler: bad feature size");
  const int per_cam = feature_height * feature_width;
  PillarSampler s;
  s.feature_height = feature_height;
  s.feature_width = feature_width;
  s.num_cameras = static_cast<int>(rig.size());
  s.hits.assign(static_cast<std::size_t>(grid.cells()), 0);

  std::vector<Eigen::Triplet<double>> trips;
  std::vector<Eigen::Triplet<double>> row_trips;
  for (int r = 0; r < grid.rows; ++r)
    for (int c = 0; c < grid.cols; ++c) {
      const int cell = r * grid.cols + c;
      const Point2 p = cell_center(grid, r, c);
      row_trips.clear();
      int hits = 0;
      for (std::size_t j = 0; j < rig.size(); ++j) {
        if (rig[j].height != feature_height * patch_size || rig[j].width != feature_width * patch_size)
          throw Error("pillar sampler: camera " + std::to_string(j) + " image size does not match the feature grid");
        for (double z : pillar_heights) {
          const Projection pr = project_to_camera({p.x, p.y, z}, rig[j]);
          if (!pr.valid) continue;
          ++hits;
          const double fu = std::clamp(pr.pixel.x / patch_size - 0.5, 0.0, feature_width - 1.0);
          const double fv = std::clamp(pr.pixel.y / patch_size - 0.5, 0.0, feature_height - 1.0);
          const int u0 = static_cast<int>(std::floor(fu)), v0 = static_cast<int>(std::floor(fv));
          const int u1 = std::min(u0 + 1, feature_width - 1), v1 = std::min(v0 + 1, feature_height - 1);
          const double tu = fu - u0, tv = fv - v0;
          const int base = static_cast<int>(j) * per_cam;
          row_trips.emplace_back(cell, base + v0 * feature_width + u0, (1 - tv) * (1 - tu));
          row_trips.emplace_back(cell, base + v0 * feature_width + u1, (1 - tv) * tu);
          row_trips.emplace_back(cell, base + v1 * feature_width + u0, tv * (1 - tu));
          row_trips.emplace_back(cell, base + v1 * feature_width + u1, tv * tu);
        }
      }
      s.hits[static_cast<std::size_t>(cell)] = hits;
      for (const auto& t : row_trips) trips.emplace_back(t.row(), t.col(), t.value() / hits);
    }
  auto op = std::make_shared<ag::SparseMatrix>(grid.cells(), static_cast<Eigen::Index>(rig.size()) * per_cam);
  op->setFromTriplets(trips.begin(), trips.end());
  s.op = std::move(op);
  return s;
}

void init_bev_encoder(nn::ParamStore& ps, const BEVEncoderConfig& cfg, const BEVGridSpec& grid, int feature_channels,
                      nn::Rng& rng) {
  cfg.validate();
  grid.validate();
  const int c = cfg.bev_channels;
  ps.create("bev.input_proj.weight", nn::xavier(rng, feature_channels, c));
  ps.create("bev.queries", nn::normal_init(rng, grid.cells(), c, 0.02));
  for (int l = 1; l <= cfg.num_refine_layers; ++l) {
    const std::string p = "bev.refine_" + std::to_string(l);
    nn::init_layer_norm(ps, p + ".norm1", c);
    nn::init_attention(ps, p + ".attn", c, rng);
    nn::init_layer_norm(ps, p + ".norm2", c);
    nn::init_mlp(ps, p + ".mlp", c, 2 * c, rng);
  }
}

Var sample_pillars(const std::vector<CameraFeatureMap>& features, const PillarSampler& sampler) {
  if (static_cast<int>(features.size()) != sampler.num_cameras)
    throw Error("encode_bev: " + std::to_string(features.size()) + " feature maps for a " +
                std::to_string(sampler.num_cameras) + "-camera rig");
  std::vector<Var> stack;
  for (const CameraFeatureMap& f : features) {
    if (f.height != sampler.feature_height || f.width != sampler.feature_width ||
        f.features.rows() != static_cast<Eigen::Index>(f.height) * f.width)
      throw Error("encode_bev: feature map shape mismatch");
    stack.push_back(f.features);
  }
  return ag::sparse_apply(sampler.op, stack.size() == 1 ? stack.front() : ag::concat_rows(stack));
}

Var encode_bev(const std::vector<CameraFeatureMap>& features, const PillarSampler& sampler, const BEVGridSpec& grid,
               const BEVEncoderConfig& cfg, const nn::ParamStore& ps) {
  if (sampler.op->rows() != grid.cells()) throw Error("encode_bev: sampler built for a different grid");
  const Var sampled = ag::matmul(sample_pillars(features, sampler), ps.get("bev.input_proj.weight"));
  Var x = ag::add(sampled, ps.get("bev.queries"));
  if (cfg.num_refine_layers == 0) return x;
  const Var pos = ag::constant(nn::sinusoid_2d(grid.rows, grid.cols, cfg.bev_channels));
  for (int l = 1; l <= cfg.num_refine_layers; ++l) {
    const std::string p = "bev.refine_" + std::to_string(l);
    const Var h = nn::layer_norm(ps, p + ".norm1", x);
    const Var hp = ag::add(h, pos);
    x = ag::add(x, nn::attention(ps, p + ".attn", cfg.num_heads, hp, hp, h));
    x = ag::add(x, nn::mlp(ps, p + ".mlp", nn::layer_norm(ps, p + ".norm2", x)));
  }
  return x;
}

}  // namespace mapfm
