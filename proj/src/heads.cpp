#include "mapfm/heads.hpp"

#include "mapfm/error.hpp"

namespace mapfm {

using ag::Var;

namespace {

std::string prefix(SegRole r) { return "heads." + std::string(to_string(r)); }

Var two_conv(const nn::ParamStore& ps, const std::string& p, const Var& x, int h, int w) {
  return nn::conv3x3(ps, p + ".conv2", ag::gelu(nn::conv3x3(ps, p + ".conv1", x, h, w)), h, w);
}

void check_grid(const ag::Var& f, int h, int w) {
  if (!f || f.rows() != static_cast<Eigen::Index>(h) * w) throw Error("seg head: feature rows do not match the grid");
}

}  // namespace

std::string_view to_string(SegRole r) {
  switch (r) {
    case SegRole::arss:
      return "arss";
    case SegRole::bev_lines:
      return "bev_lines";
    case SegRole::pv_lanes:
      return "pv_lanes";
  }
  return "unknown";
}

int seg_classes(SegRole r) {
  switch (r) {
    case SegRole::arss:
      return 2;
    case SegRole::bev_lines:
      return 3;
    case SegRole::pv_lanes:
      return 1;
  }
  return 0;
}

void init_heads(nn::ParamStore& ps, int bev_channels, int feature_channels, bool arss_enabled, nn::Rng& rng) {
  auto head = [&](SegRole r, int in) {
    nn::init_conv3x3(ps, prefix(r) + ".conv1", in, in, rng);
    nn::init_conv3x3(ps, prefix(r) + ".conv2", in, seg_classes(r), rng);
  };
  if (arss_enabled) head(SegRole::arss, bev_channels);
  head(SegRole::bev_lines, bev_channels);
  head(SegRole::pv_lanes, feature_channels);
}

SegLogits arss_forward(const BEVFeatureMap& bev, const nn::ParamStore& ps) {
  check_grid(bev.features, bev.height, bev.width);
  return {SegRole::arss, two_conv(ps, prefix(SegRole::arss), bev.features, bev.height, bev.width), bev.height,
          bev.width};
}

SegLogits aux_seg_forward(const BEVFeatureMap& bev, SegRole role, const nn::ParamStore& ps) {
  if (role == SegRole::pv_lanes) throw Error("seg head: pv_lanes needs a camera feature map, got a BEV feature");
  if (role == SegRole::arss) return arss_forward(bev, ps);
  check_grid(bev.features, bev.height, bev.width);
  return {role, two_conv(ps, prefix(role), bev.features, bev.height, bev.width), bev.height, bev.width};
}

SegLogits aux_seg_forward(const CameraFeatureMap& feat, SegRole role, const nn::ParamStore& ps, int image_height,
                          int image_width) {
  if (role != SegRole::pv_lanes)
    throw Error("seg head: " + std::string(to_string(role)) + " needs a BEV feature, got a camera feature map");
  check_grid(feat.features, feat.height, feat.width);
  const Var low = two_conv(ps, prefix(role), feat.features, feat.height, feat.width);
  const Var up = ag::sparse_apply(nn::bilinear_resize_op(feat.height, feat.width, image_height, image_width), low);
  return {role, up, image_height, image_width};
}

std::vector<Mask> hard_masks(const SegLogits& s) {
  std::vector<Mask> out;
  const ag::Matrix& v = s.logits.value();
  for (Eigen::Index k = 0; k < v.cols(); ++k) {
    Mask m(s.height, s.width);
    for (Eigen::Index i = 0; i < v.rows(); ++i) m.data[static_cast<std::size_t>(i)] = v(i, k) >= 0.0;
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace mapfm
