#pragma once

// Parameter registry and the layer vocabulary shared by the backbone, BEV
// encoder, heads and decoder. Layers are free functions reading their
// weights from a ParamStore by name prefix.

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "mapfm/autograd.hpp"

namespace mapfm::nn {

using ag::Matrix;
using ag::Var;

/// Deterministic RNG. Normal draws use Box-Muller so streams do not depend
/// on the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform();  // [0, 1)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  std::uint64_t below(std::uint64_t n);  // [0, n)
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

/// Named, ordered set of trainable tensors.
class ParamStore {
 public:
  Var create(const std::string& name, Matrix init);
  const Var& get(const std::string& name) const;
  Var& get(const std::string& name);
  bool contains(const std::string& name) const { return index_.contains(name); }
  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<std::string> names_;
  std::vector<Var> vars_;
  std::unordered_map<std::string, std::size_t> index_;
};

Matrix xavier(Rng& rng, int fan_in, int fan_out);
Matrix normal_init(Rng& rng, int rows, int cols, double stddev);

void init_linear(ParamStore& ps, const std::string& prefix, int in, int out, Rng& rng);
Var linear(const ParamStore& ps, const std::string& prefix, const Var& x);

void init_layer_norm(ParamStore& ps, const std::string& prefix, int dim);
Var layer_norm(const ParamStore& ps, const std::string& prefix, const Var& x);

void init_mlp(ParamStore& ps, const std::string& prefix, int dim, int hidden, Rng& rng);
Var mlp(const ParamStore& ps, const std::string& prefix, const Var& x);

void init_attention(ParamStore& ps, const std::string& prefix, int dim, Rng& rng);
/// Multi-head scaled dot-product attention: queries from `q_in`, keys from
/// `k_in`, values from `v_in` (k_in and v_in share their row count).
Var attention(const ParamStore& ps, const std::string& prefix, int heads, const Var& q_in, const Var& k_in,
              const Var& v_in);

/// Pre-norm transformer block (self-attention + MLP) used by the backbone.
void init_transformer_block(ParamStore& ps, const std::string& prefix, int dim, int mlp_hidden, Rng& rng);
Var transformer_block(const ParamStore& ps, const std::string& prefix, int heads, const Var& x);

/// 3x3 same-padding convolution on a token-major (H*W) x Cin map.
void init_conv3x3(ParamStore& ps, const std::string& prefix, int in, int out, Rng& rng);
Var conv3x3(const ParamStore& ps, const std::string& prefix, const Var& x, int height, int width);

/// Fixed 2D sinusoidal embedding, (H*W) x dim, dim divisible by 4.
Matrix sinusoid_2d(int height, int width, int dim);

/// Bilinear resampling operator (half-pixel centres, edge clamped) from an
/// h_in x w_in grid to h_out x w_out, as a sparse (h_out*w_out) x (h_in*w_in).
ag::SparsePtr bilinear_resize_op(int h_in, int w_in, int h_out, int w_out);
/// Non-overlapping average pooling by `factor` in both directions.
ag::SparsePtr avg_pool_op(int height, int width, int factor);

}  // namespace mapfm::nn
