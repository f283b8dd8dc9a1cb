#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices of doubles. Every tensor in the model is 2D: feature maps are
// stored token-major as (H*W) x C.
//
// A Var is a handle on a graph node. Nodes created from operations keep
// their inputs alive, so dropping the root Var frees the whole graph.

#include <Eigen/Dense>
#include <Eigen/SparseCore>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace mapfm::ag {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using SparsePtr = std::shared_ptr<const SparseMatrix>;

struct Node {
  Matrix value;
  Matrix grad;  // empty until the first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  /// Returns the gradient buffer, zero-initialising it on first use.
  Matrix& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  /// Gradient after backward(); zeros if nothing flowed into this node.
  Matrix grad() const;
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  double scalar() const { return node_->value(0, 0); }
  void zero_grad() { node_->grad.resize(0, 0); }

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Matrix value);
Var leaf(Matrix value, bool requires_grad = true);

/// Builds an op node. `backward` receives the finished node (its grad is
/// populated) and must accumulate into parents that require grad.
Var make_op(Matrix value, std::vector<Var> parents, std::function<void(Node&)> backward);

/// Runs reverse accumulation from a 1x1 root.
void backward(const Var& root);

// Linear algebra.
Var matmul(const Var& a, const Var& b);
Var matmul_nt(const Var& a, const Var& b);  // a * b^T
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);  // elementwise
Var scale(const Var& a, double s);
Var add_row(const Var& a, const Var& row);  // broadcast a 1 x C row over every row of a
Var linear(const Var& x, const Var& weight, const Var& bias);  // x W + b

// Pointwise.
Var gelu(const Var& a);
Var sigmoid(const Var& a);

// Row-wise normalisation.
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var softmax_rows(const Var& a);
/// softmax(scale * q k^T) v without keeping the score matrix in the graph.
Var scaled_dot_attention(const Var& q, const Var& k, const Var& v, double scale);

// Reshaping.
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);

/// out = S * a for a fixed sparse operator S (resampling, pooling, scatter).
Var sparse_apply(const SparsePtr& s, const Var& a);

/// 3x3 zero-padded neighbourhood gather: (H*W) x C -> (H*W) x 9C, block
/// k = (dr+1)*3 + (dc+1) holds the input at (r+dr, c+dc).
Var im2col3x3(const Var& a, int height, int width);

// Reductions to 1x1.
Var sum(const Var& a);
Var mean(const Var& a);
Var weighted_sum(std::span<const Var> scalars, std::span<const double> weights);

}  // namespace mapfm::ag
