#include "mapfm/decoder.hpp"

#include <algorithm>
#include <cmath>

#include "mapfm/error.hpp"

namespace mapfm {

using ag::Var;

namespace {

ag::SparsePtr scatter_op(int n_inst, int n_pts, bool by_instance) {
  std::vector<Eigen::Triplet<double>> t;
  for (int i = 0; i < n_inst; ++i)
    for (int j = 0; j < n_pts; ++j) t.emplace_back(i * n_pts + j, by_instance ? i : j, 1.0);
  auto s = std::make_shared<ag::SparseMatrix>(n_inst * n_pts, by_instance ? n_inst : n_pts);
  s->setFromTriplets(t.begin(), t.end());
  return s;
}

ag::SparsePtr gather_op(int n_inst, int n_pts) {
  std::vector<Eigen::Triplet<double>> t;
  for (int i = 0; i < n_inst; ++i)
    for (int j = 0; j < n_pts; ++j) t.emplace_back(i, i * n_pts + j, 1.0 / n_pts);
  auto s = std::make_shared<ag::SparseMatrix>(n_inst, n_inst * n_pts);
  s->setFromTriplets(t.begin(), t.end());
  return s;
}

std::string layer_name(int l) { return "decoder.layer_" + std::to_string(l); }

}  // namespace

void DecoderConfig::validate() const {
  if (num_instances < 1) throw Error("decoder config: num_instances must be >= 1");
  if (points_per_element < 2) throw Error("decoder config: points_per_element must be >= 2");
  if (num_layers < 1 || num_heads < 1 || channels < 1) throw Error("decoder config: bad sizes");
  if (channels % num_heads != 0) throw Error("decoder config: channels not divisible by num_heads");
  if (channels % 4 != 0) throw Error("decoder config: channels must be divisible by 4");
}

void init_decoder(nn::ParamStore& ps, const DecoderConfig& cfg, nn::Rng& rng) {
  cfg.validate();
  const int c = cfg.channels;
  ps.create("decoder.instance_embed", nn::normal_init(rng, cfg.num_instances, c, 1.0));
  ps.create("decoder.point_pos", nn::normal_init(rng, cfg.points_per_element, c, 1.0));
  nn::init_layer_norm(ps, "decoder.bev_norm", c);
  for (int l = 1; l <= cfg.num_layers; ++l) {
    const std::string p = layer_name(l);
    nn::init_layer_norm(ps, p + ".norm_self", c);
    nn::init_attention(ps, p + ".self_attn", c, rng);
    nn::init_layer_norm(ps, p + ".norm_cross", c);
    nn::init_attention(ps, p + ".cross_attn", c, rng);
    nn::init_layer_norm(ps, p + ".norm_mlp", c);
    nn::init_mlp(ps, p + ".mlp", c, 2 * c, rng);
  }
  nn::init_layer_norm(ps, "decoder.out_norm", c);
  nn::init_linear(ps, "decoder.point_head.fc1", c, c, rng);
  nn::init_linear(ps, "decoder.point_head.fc2", c, 2, rng);
  nn::init_linear(ps, "decoder.class_head", c, static_cast<int>(kAllMapClasses.size()), rng);
  ps.get("decoder.class_head.bias").mutable_value().setConstant(-std::log((1 - 0.01) / 0.01));
}

DecoderOutput decode_map(const BEVFeatureMap& bev, const DecoderConfig& cfg, const nn::ParamStore& ps) {
  const int n_inst = cfg.num_instances, n_pts = cfg.points_per_element;
  if (bev.features.rows() != static_cast<Eigen::Index>(bev.height) * bev.width || bev.features.cols() != cfg.channels)
    throw Error("decode_map: BEV feature shape mismatch");
  const Var memory = nn::layer_norm(ps, "decoder.bev_norm", bev.features);
  const Var keys = ag::add(memory, ag::constant(nn::sinusoid_2d(bev.height, bev.width, cfg.channels)));

  Var x = ag::add(ag::sparse_apply(scatter_op(n_inst, n_pts, true), ps.get("decoder.instance_embed")),
                  ag::sparse_apply(scatter_op(n_inst, n_pts, false), ps.get("decoder.point_pos")));
  const ag::SparsePtr gather = gather_op(n_inst, n_pts);

  DecoderOutput out;
  out.num_instances = n_inst;
  out.points_per_element = n_pts;
  for (int l = 1; l <= cfg.num_layers; ++l) {
    const std::string p = layer_name(l);
    const Var hs = nn::layer_norm(ps, p + ".norm_self", x);
    x = ag::add(x, nn::attention(ps, p + ".self_attn", cfg.num_heads, hs, hs, hs));
    x = ag::add(x, nn::attention(ps, p + ".cross_attn", cfg.num_heads, nn::layer_norm(ps, p + ".norm_cross", x), keys,
                                 memory));
    x = ag::add(x, nn::mlp(ps, p + ".mlp", nn::layer_norm(ps, p + ".norm_mlp", x)));

    DecoderLayerOutput lo;
    const Var h = nn::layer_norm(ps, "decoder.out_norm", x);
    lo.points = ag::sigmoid(
        nn::linear(ps, "decoder.point_head.fc2", ag::gelu(nn::linear(ps, "decoder.point_head.fc1", h))));
    lo.gathered = ag::sparse_apply(gather, x);
    lo.class_logits = nn::linear(ps, "decoder.class_head", nn::layer_norm(ps, "decoder.out_norm", lo.gathered));
    out.layers.push_back(std::move(lo));
  }
  return out;
}

Point2 denormalize(const BEVGridSpec& grid, double u, double v) {
  return {grid.x_min + u * (grid.x_max - grid.x_min), grid.y_min + v * (grid.y_max - grid.y_min)};
}

std::pair<double, double> normalize(const BEVGridSpec& grid, Point2 p) {
  return {(p.x - grid.x_min) / (grid.x_max - grid.x_min), (p.y - grid.y_min) / (grid.y_max - grid.y_min)};
}

ScoredMap predictions_to_map(const DecoderOutput& out, const BEVGridSpec& grid, double score_threshold) {
  const DecoderLayerOutput& fin = out.final_layer();
  const ag::Matrix& logits = fin.class_logits.value();
  const ag::Matrix& pts = fin.points.value();
  const int n = out.points_per_element;
  ScoredMap m;
  for (int i = 0; i < out.num_instances; ++i) {
    Eigen::Index cls = 0;
    const double best = logits.row(i).maxCoeff(&cls);
    const double conf = 1.0 / (1.0 + std::exp(-best));
    if (conf < score_threshold) continue;
    MapElement e;
    e.class_label = static_cast<MapClass>(cls);
    e.closed = e.class_label == MapClass::ped_crossing;
    for (int j = 0; j < n; ++j) {
      const Point2 p = denormalize(grid, pts(i * n + j, 0), pts(i * n + j, 1));
      if (!e.points.empty() && std::hypot(p.x - e.points.back().x, p.y - e.points.back().y) <= 1e-9) continue;
      e.points.push_back(p);
    }
    if (e.closed && e.points.size() > 2 && std::hypot(e.points.front().x - e.points.back().x,
                                                      e.points.front().y - e.points.back().y) <= 1e-9)
      e.points.pop_back();
    if (e.points.size() < 2) continue;
    if (e.closed && e.points.size() < 3) e.closed = false;
    m.elements.push_back({std::move(e), conf});
  }
  std::stable_sort(m.elements.begin(), m.elements.end(),
                   [](const ScoredElement& a, const ScoredElement& b) { return a.confidence > b.confidence; });
  return m;
}

}  // namespace mapfm
