#include "mapfm/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mapfm/error.hpp"

namespace mapfm::nn {

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw Error("Rng::below(0)");
  return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
}

Var ParamStore::create(const std::string& name, Matrix init) {
  if (contains(name)) throw Error("duplicate parameter '" + name + "'");
  index_.emplace(name, names_.size());
  names_.push_back(name);
  vars_.push_back(ag::leaf(std::move(init), true));
  return vars_.back();
}

const Var& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("unknown parameter '" + name + "'");
  return vars_[it->second];
}

Var& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("unknown parameter '" + name + "'");
  return vars_[it->second];
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const Var& v : vars_) n += static_cast<std::size_t>(v.value().size());
  return n;
}

void ParamStore::zero_grad() {
  for (Var& v : vars_) v.zero_grad();
}

Matrix xavier(Rng& rng, int fan_in, int fan_out) {
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  Matrix m(fan_in, fan_out);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-a, a);
  return m;
}

Matrix normal_init(Rng& rng, int rows, int cols, double stddev) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * rng.normal();
  return m;
}

void init_linear(ParamStore& ps, const std::string& prefix, int in, int out, Rng& rng) {
  ps.create(prefix + ".weight", xavier(rng, in, out));
  ps.create(prefix + ".bias", Matrix::Zero(1, out));
}

Var linear(const ParamStore& ps, const std::string& prefix, const Var& x) {
  return ag::linear(x, ps.get(prefix + ".weight"), ps.get(prefix + ".bias"));
}

void init_layer_norm(ParamStore& ps, const std::string& prefix, int dim) {
  ps.create(prefix + ".gamma", Matrix::Ones(1, dim));
  ps.create(prefix + ".beta", Matrix::Zero(1, dim));
}

Var layer_norm(const ParamStore& ps, const std::string& prefix, const Var& x) {
  return ag::layer_norm(x, ps.get(prefix + ".gamma"), ps.get(prefix + ".beta"));
}

void init_mlp(ParamStore& ps, const std::string& prefix, int dim, int hidden, Rng& rng) {
  init_linear(ps, prefix + ".fc1", dim, hidden, rng);
  init_linear(ps, prefix + ".fc2", hidden, dim, rng);
}

Var mlp(const ParamStore& ps, const std::string& prefix, const Var& x) {
  return linear(ps, prefix + ".fc2", ag::gelu(linear(ps, prefix + ".fc1", x)));
}

void init_attention(ParamStore& ps, const std::string& prefix, int dim, Rng& rng) {
  for (const char* p : {".q", ".k", ".v", ".out"}) init_linear(ps, prefix + p, dim, dim, rng);
}

Var attention(const ParamStore& ps, const std::string& prefix, int heads, const Var& q_in, const Var& k_in,
              const Var& v_in) {
  const Var q = linear(ps, prefix + ".q", q_in);
  const Var k = linear(ps, prefix + ".k", k_in);
  const Var v = linear(ps, prefix + ".v", v_in);
  const Eigen::Index dim = q.cols();
  if (heads <= 0 || dim % heads != 0) throw Error("attention: dim not divisible by heads");
  const Eigen::Index dh = dim / heads;
  const double s = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    const Var qh = ag::slice_cols(q, h * dh, dh);
    const Var kh = ag::slice_cols(k, h * dh, dh);
    const Var vh = ag::slice_cols(v, h * dh, dh);
    outs.push_back(ag::scaled_dot_attention(qh, kh, vh, s));
  }
  const Var merged = heads == 1 ? outs.front() : ag::concat_cols(outs);
  return linear(ps, prefix + ".out", merged);
}

void init_transformer_block(ParamStore& ps, const std::string& prefix, int dim, int mlp_hidden, Rng& rng) {
  init_layer_norm(ps, prefix + ".norm1", dim);
  init_attention(ps, prefix + ".attn", dim, rng);
  init_layer_norm(ps, prefix + ".norm2", dim);
  init_mlp(ps, prefix + ".mlp", dim, mlp_hidden, rng);
}

Var transformer_block(const ParamStore& ps, const std::string& prefix, int heads, const Var& x) {
  const Var h = layer_norm(ps, prefix + ".norm1", x);
  const Var x1 = ag::add(x, attention(ps, prefix + ".attn", heads, h, h, h));
  return ag::add(x1, mlp(ps, prefix + ".mlp", layer_norm(ps, prefix + ".norm2", x1)));
}

void init_conv3x3(ParamStore& ps, const std::string& prefix, int in, int out, Rng& rng) {
  ps.create(prefix + ".weight", xavier(rng, 9 * in, out));
  ps.create(prefix + ".bias", Matrix::Zero(1, out));
}

Var conv3x3(const ParamStore& ps, const std::string& prefix, const Var& x, int height, int width) {
  return ag::linear(ag::im2col3x3(x, height, width), ps.get(prefix + ".weight"), ps.get(prefix + ".bias"));
}

Matrix sinusoid_2d(int height, int width, int dim) {
  if (dim % 4 != 0) throw Error("sinusoid_2d: dim must be divisible by 4");
  const int quarter = dim / 4;
  Matrix m(static_cast<Eigen::Index>(height) * width, dim);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) {
      const Eigen::Index row = static_cast<Eigen::Index>(r) * width + c;
      for (int i = 0; i < quarter; ++i) {
        const double freq = std::pow(100.0, -static_cast<double>(i) / quarter);
        m(row, 4 * i + 0) = std::sin(r * freq);
        m(row, 4 * i + 1) = std::cos(r * freq);
        m(row, 4 * i + 2) = std::sin(c * freq);
        m(row, 4 * i + 3) = std::cos(c * freq);
      }
    }
  return m;
}

ag::SparsePtr bilinear_resize_op(int h_in, int w_in, int h_out, int w_out) {
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<std::size_t>(h_out) * w_out * 4);
  auto axis = [](int out_idx, int n_in, int n_out, int& i0, int& i1, double& t) {
    const double src = std::clamp((out_idx + 0.5) * n_in / static_cast<double>(n_out) - 0.5, 0.0,
                                  static_cast<double>(n_in - 1));
    i0 = static_cast<int>(std::floor(src));
    i1 = std::min(i0 + 1, n_in - 1);
    t = src - i0;
  };
  for (int r = 0; r < h_out; ++r) {
    int r0, r1;
    double tr;
    axis(r, h_in, h_out, r0, r1, tr);
    for (int c = 0; c < w_out; ++c) {
      int c0, c1;
      double tc;
      axis(c, w_in, w_out, c0, c1, tc);
      const int row = r * w_out + c;
      trips.emplace_back(row, r0 * w_in + c0, (1 - tr) * (1 - tc));
      trips.emplace_back(row, r0 * w_in + c1, (1 - tr) * tc);
      trips.emplace_back(row, r1 * w_in + c0, tr * (1 - tc));
      trips.emplace_back(row, r1 * w_in + c1, tr * tc);
    }
  }
  auto s = std::make_shared<ag::SparseMatrix>(h_out * w_out, h_in * w_in);
  s->setFromTriplets(trips.begin(), trips.end());
  return s;
}

ag::SparsePtr avg_pool_op(int height, int width, int factor) {
  if (factor <= 0 || height % factor != 0 || width % factor != 0)
    throw Error("avg_pool_op: spatial dims not divisible by pooling factor");
  const int ho = height / factor, wo = width / factor;
  const double w = 1.0 / (factor * factor);
  std::vector<Eigen::Triplet<double>> trips;
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) trips.emplace_back((r / factor) * wo + c / factor, r * width + c, w);
  auto s = std::make_shared<ag::SparseMatrix>(ho * wo, height * width);
  s->setFromTriplets(trips.begin(), trips.end());
  return s;
}

}  // namespace mapfm::nn
