#include "mapfm/autograd.hpp"

#include <cmath>
#include <unordered_set>

#include "mapfm/error.hpp"

namespace mapfm::ag {

namespace {

void check(bool ok, const char* what) {
  if (!ok) throw Error(what);
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

}  // namespace

Matrix& Node::grad_buffer() {
  if (grad.size() == 0) grad = Matrix::Zero(value.rows(), value.cols());
  return grad;
}

Matrix Var::grad() const {
  if (node_->grad.size() == 0) return Matrix::Zero(rows(), cols());
  return node_->grad;
}

Var constant(Matrix value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return Var(n);
}

Var leaf(Matrix value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return Var(n);
}

Var make_op(Matrix value, std::vector<Var> parents, std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  for (const Var& p : parents) n->requires_grad = n->requires_grad || p.requires_grad();
  if (n->requires_grad) {
    n->parents.reserve(parents.size());
    for (const Var& p : parents) n->parents.push_back(p.shared());
    n->backward_fn = std::move(backward);
  }
  return Var(n);
}

void backward(const Var& root) {
  check(root.rows() == 1 && root.cols() == 1, "backward: root must be a scalar");
  if (!root.requires_grad()) return;

  // Iterative post-order DFS for a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->grad_buffer()(0, 0) += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->grad.size() != 0) n->backward_fn(*n);
  }
}

Var matmul(const Var& a, const Var& b) {
  check(a.cols() == b.rows(), "matmul: inner dimension mismatch");
  Matrix out;
  out.noalias() = a.value() * b.value();
  return make_op(std::move(out), {a, b}, [](Node& self) {
    Node* pa = self.parents[0].get();
    Node* pb = self.parents[1].get();
    if (pa->requires_grad) pa->grad_buffer().noalias() += self.grad * pb->value.transpose();
    if (pb->requires_grad) pb->grad_buffer().noalias() += pa->value.transpose() * self.grad;
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  check(a.cols() == b.cols(), "matmul_nt: inner dimension mismatch");
  Matrix out;
  out.noalias() = a.value() * b.value().transpose();
  return make_op(std::move(out), {a, b}, [](Node& self) {
    Node* pa = self.parents[0].get();
    Node* pb = self.parents[1].get();
    if (pa->requires_grad) pa->grad_buffer().noalias() += self.grad * pb->value;
    if (pb->requires_grad) pb->grad_buffer().noalias() += self.grad.transpose() * pa->value;
  });
}

Var add(const Var& a, const Var& b) {
  check(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  return make_op(a.value() + b.value(), {a, b}, [](Node& self) {
    for (auto& p : self.parents)
      if (p->requires_grad) p->grad_buffer() += self.grad;
  });
}

Var sub(const Var& a, const Var& b) {
  check(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  return make_op(a.value() - b.value(), {a, b}, [](Node& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->grad_buffer() += self.grad;
    if (self.parents[1]->requires_grad) self.parents[1]->grad_buffer() -= self.grad;
  });
}

Var mul(const Var& a, const Var& b) {
  check(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
  return make_op(a.value().cwiseProduct(b.value()), {a, b}, [](Node& self) {
    Node* pa = self.parents[0].get();
    Node* pb = self.parents[1].get();
    if (pa->requires_grad) pa->grad_buffer() += self.grad.cwiseProduct(pb->value);
    if (pb->requires_grad) pb->grad_buffer() += self.grad.cwiseProduct(pa->value);
  });
}

Var scale(const Var& a, double s) {
  return make_op(a.value() * s, {a}, [s](Node& self) { self.parents[0]->grad_buffer() += s * self.grad; });
}

Var add_row(const Var& a, const Var& row) {
  check(row.rows() == 1 && row.cols() == a.cols(), "add_row: bias must be 1 x cols");
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  return make_op(std::move(out), {a, row}, [](Node& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->grad_buffer() += self.grad;
    if (self.parents[1]->requires_grad) self.parents[1]->grad_buffer() += self.grad.colwise().sum();
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) { return add_row(matmul(x, weight), bias); }

Var gelu(const Var& a) {
  Matrix out = a.value().unaryExpr([](double x) {
    return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x)));
  });
  return make_op(std::move(out), {a}, [](Node& self) {
    Node* p = self.parents[0].get();
    const Matrix d = p->value.unaryExpr([](double x) {
      const double u = kGeluC * (x + 0.044715 * x * x * x);
      const double t = std::tanh(u);
      return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
    });
    p->grad_buffer() += self.grad.cwiseProduct(d);
  });
}

Var sigmoid(const Var& a) {
  Matrix out = a.value().unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  return make_op(std::move(out), {a}, [](Node& self) {
    const Matrix d = self.value.unaryExpr([](double s) { return s * (1.0 - s); });
    self.parents[0]->grad_buffer() += self.grad.cwiseProduct(d);
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Eigen::Index rows = x.rows(), cols = x.cols();
  check(gamma.rows() == 1 && gamma.cols() == cols && beta.rows() == 1 && beta.cols() == cols,
        "layer_norm: gamma/beta must be 1 x cols");
  Matrix xhat(rows, cols);
  Eigen::VectorXd inv_std(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double mu = x.value().row(r).mean();
    const double var = (x.value().row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (x.value().row(r).array() - mu) * inv_std(r);
  }
  Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() + beta.value().row(0).array();
  return make_op(std::move(out), {x, gamma, beta},
                 [xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                   Node* px = self.parents[0].get();
                   Node* pg = self.parents[1].get();
                   Node* pb = self.parents[2].get();
                   if (pg->requires_grad) pg->grad_buffer() += self.grad.cwiseProduct(xhat).colwise().sum();
                   if (pb->requires_grad) pb->grad_buffer() += self.grad.colwise().sum();
                   if (!px->requires_grad) return;
                   Matrix& gx = px->grad_buffer();
                   const auto g = pg->value.row(0).array();
                   for (Eigen::Index r = 0; r < self.grad.rows(); ++r) {
                     const Eigen::ArrayXd dxhat = (self.grad.row(r).array() * g).transpose();
                     const Eigen::ArrayXd xh = xhat.row(r).array().transpose();
                     const double m1 = dxhat.mean();
                     const double m2 = (dxhat * xh).mean();
                     gx.row(r).array() += (inv_std(r) * (dxhat - m1 - xh * m2)).transpose();
                   }
                 });
}

Var softmax_rows(const Var& a) {
  Matrix out(a.rows(), a.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const double mx = a.value().row(r).maxCoeff();
    out.row(r) = (a.value().row(r).array() - mx).exp();
    out.row(r) /= out.row(r).sum();
  }
  return make_op(std::move(out), {a}, [](Node& self) {
    Matrix& g = self.parents[0]->grad_buffer();
    const Eigen::VectorXd dots = self.grad.cwiseProduct(self.value).rowwise().sum();
    g.array() += self.value.array() * (self.grad.colwise() - dots).array();
  });
}

Var scaled_dot_attention(const Var& q, const Var& k, const Var& v, double scale) {
  check(q.cols() == k.cols() && k.rows() == v.rows(), "scaled_dot_attention: shape mismatch");
  auto p = std::make_shared<Matrix>();
  p->noalias() = q.value() * k.value().transpose();
  *p *= scale;
  const Eigen::VectorXd mx = p->rowwise().maxCoeff();
  p->colwise() -= mx;
  *p = p->array().exp().matrix();
  const Eigen::VectorXd inv = p->rowwise().sum().cwiseInverse();
  *p = inv.asDiagonal() * *p;
  Matrix out;
  out.noalias() = *p * v.value();
  return make_op(std::move(out), {q, k, v}, [p, scale](Node& self) {
    Node* nq = self.parents[0].get();
    Node* nk = self.parents[1].get();
    Node* nv = self.parents[2].get();
    if (nv->requires_grad) nv->grad_buffer().noalias() += p->transpose() * self.grad;
    if (!nq->requires_grad && !nk->requires_grad) return;
    const Eigen::VectorXd dots = self.grad.cwiseProduct(self.value).rowwise().sum();
    Matrix ds;
    ds.noalias() = self.grad * nv->value.transpose();
    ds.colwise() -= dots;
    ds = ds.cwiseProduct(*p) * scale;
    if (nq->requires_grad) nq->grad_buffer().noalias() += ds * nk->value;
    if (nk->requires_grad) nk->grad_buffer().noalias() += ds.transpose() * nq->value;
  });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  check(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols: out of range");
  return make_op(a.value().middleCols(start, count), {a}, [start, count](Node& self) {
    self.parents[0]->grad_buffer().middleCols(start, count) += self.grad;
  });
}

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  check(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows: out of range");
  return make_op(a.value().middleRows(start, count), {a}, [start, count](Node& self) {
    self.parents[0]->grad_buffer().middleRows(start, count) += self.grad;
  });
}

Var concat_cols(std::span<const Var> parts) {
  check(!parts.empty(), "concat_cols: no inputs");
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    check(p.rows() == parts[0].rows(), "concat_cols: row mismatch");
    cols += p.cols();
  }
  Matrix out(parts[0].rows(), cols);
  Eigen::Index c = 0;
  for (const Var& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return make_op(std::move(out), std::vector<Var>(parts.begin(), parts.end()), [](Node& self) {
    Eigen::Index c0 = 0;
    for (auto& p : self.parents) {
      if (p->requires_grad) p->grad_buffer() += self.grad.middleCols(c0, p->value.cols());
      c0 += p->value.cols();
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  check(!parts.empty(), "concat_rows: no inputs");
  Eigen::Index rows = 0;
  for (const Var& p : parts) {
    check(p.cols() == parts[0].cols(), "concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix out(rows, parts[0].cols());
  Eigen::Index r = 0;
  for (const Var& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return make_op(std::move(out), std::vector<Var>(parts.begin(), parts.end()), [](Node& self) {
    Eigen::Index r0 = 0;
    for (auto& p : self.parents) {
      if (p->requires_grad) p->grad_buffer() += self.grad.middleRows(r0, p->value.rows());
      r0 += p->value.rows();
    }
  });
}

Var sparse_apply(const SparsePtr& s, const Var& a) {
  check(s->cols() == a.rows(), "sparse_apply: operator/input mismatch");
  Matrix out;
  out.noalias() = (*s) * a.value();
  return make_op(std::move(out), {a}, [s](Node& self) {
    self.parents[0]->grad_buffer().noalias() += s->transpose() * self.grad;
  });
}

Var im2col3x3(const Var& a, int height, int width) {
  check(a.rows() == static_cast<Eigen::Index>(height) * width, "im2col3x3: row count != H*W");
  const Eigen::Index c = a.cols();
  Matrix out = Matrix::Zero(a.rows(), 9 * c);
  for (int r = 0; r < height; ++r)
    for (int q = 0; q < width; ++q)
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          const int rr = r + dr, qq = q + dc;
          if (rr < 0 || rr >= height || qq < 0 || qq >= width) continue;
          const int k = (dr + 1) * 3 + (dc + 1);
          out.row(r * width + q).segment(k * c, c) = a.value().row(rr * width + qq);
        }
  return make_op(std::move(out), {a}, [height, width, c](Node& self) {
    Matrix& g = self.parents[0]->grad_buffer();
    for (int r = 0; r < height; ++r)
      for (int q = 0; q < width; ++q)
        for (int dr = -1; dr <= 1; ++dr)
          for (int dc = -1; dc <= 1; ++dc) {
            const int rr = r + dr, qq = q + dc;
            if (rr < 0 || rr >= height || qq < 0 || qq >= width) continue;
            const int k = (dr + 1) * 3 + (dc + 1);
            g.row(rr * width + qq) += self.grad.row(r * width + q).segment(k * c, c);
          }
  });
}

Var sum(const Var& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return make_op(std::move(out), {a}, [](Node& self) { self.parents[0]->grad_buffer().array() += self.grad(0, 0); });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  check(n > 0, "mean: empty input");
  return scale(sum(a), 1.0 / n);
}

Var weighted_sum(std::span<const Var> scalars, std::span<const double> weights) {
  check(scalars.size() == weights.size() && !scalars.empty(), "weighted_sum: size mismatch");
  Matrix out = Matrix::Zero(1, 1);
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    check(scalars[i].rows() == 1 && scalars[i].cols() == 1, "weighted_sum: inputs must be scalars");
    out(0, 0) += weights[i] * scalars[i].scalar();
  }
  std::vector<double> w(weights.begin(), weights.end());
  return make_op(std::move(out), std::vector<Var>(scalars.begin(), scalars.end()), [w](Node& self) {
    for (std::size_t i = 0; i < self.parents.size(); ++i)
      if (self.parents[i]->requires_grad) self.parents[i]->grad_buffer()(0, 0) += w[i] * self.grad(0, 0);
  });
}

}  // namespace mapfm::ag
