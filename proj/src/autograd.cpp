#include "refcomp/autograd.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace refcomp::nn {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

bool any_requires(const Graph& g, std::span<const Var> parents) {
  for (auto p : parents)
    if (g.requires_grad(p)) return true;
  return false;
}

}  // namespace

const Mat& Var::value() const { return graph->value(*this); }

Var Graph::constant(Mat value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Graph::leaf(Mat value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = grad_enabled_;
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Graph::param(int param_id, const Mat& value, bool trainable) {
  for (auto [pid, nid] : params_)
    if (pid == param_id) return {this, nid};
  Node n;
  n.borrowed = &value;
  n.requires_grad = grad_enabled_ && trainable;
  nodes_.push_back(std::move(n));
  const int nid = static_cast<int>(nodes_.size() - 1);
  params_.emplace_back(param_id, nid);
  return {this, nid};
}

Var Graph::emit(Mat value, std::initializer_list<Var> parents, BackwardFn fn) {
  return emit(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(fn));
}

Var Graph::emit(Mat value, std::span<const Var> parents, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  if (grad_enabled_ && any_requires(*this, parents)) {
    n.requires_grad = true;
    n.backward = std::move(fn);
  }
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

void Graph::accumulate(Var target, const Mat& g) { accumulate_expr(target, g); }

void Graph::backward(Var out, Scalar seed) {
  if (!grad_enabled_) throw std::logic_error("backward on a graph without gradients");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  auto& root = nodes_[static_cast<size_t>(out.id)];
  if (!root.requires_grad) return;
  root.grad = Mat::Constant(root.val().rows(), root.val().cols(), seed);
  for (int i = out.id; i >= 0; --i) {
    auto& n = nodes_[static_cast<size_t>(i)];
    if (n.backward && n.grad.size() != 0) n.backward(*this, i);
  }
}

std::vector<std::pair<int, const Mat*>> Graph::param_grads() const {
  std::vector<std::pair<int, const Mat*>> out;
  for (auto [pid, nid] : params_) {
    const auto& n = nodes_[static_cast<size_t>(nid)];
    if (n.requires_grad && n.grad.size() != 0) out.emplace_back(pid, &n.grad);
  }
  return out;
}

// ---- ops -------------------------------------------------------------------

Var matmul(Var a, Var b) {
  require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Mat v;
  v.noalias() = a.value() * b.value();
  return a.graph->emit(std::move(v), {a, b}, [a, b](Graph& g, int self) {
    const Mat& go = g.out_grad(self);
    if (g.requires_grad(a)) g.accumulate_expr(a, go * b.value().transpose());
    if (g.requires_grad(b)) g.accumulate_expr(b, a.value().transpose() * go);
  });
}

Var matmul_nt(Var a, Var b) {
  require(a.cols() == b.cols(), "matmul_nt: inner dimensions differ");
  Mat v;
  v.noalias() = a.value() * b.value().transpose();
  return a.graph->emit(std::move(v), {a, b}, [a, b](Graph& g, int self) {
    const Mat& go = g.out_grad(self);
    if (g.requires_grad(a)) g.accumulate_expr(a, go * b.value());
    if (g.requires_grad(b)) g.accumulate_expr(b, go.transpose() * a.value());
  });
}

Var add(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  return a.graph->emit(a.value() + b.value(), {a, b}, [a, b](Graph& g, int self) {
    const Mat& go = g.out_grad(self);
    g.accumulate(a, go);
    g.accumulate(b, go);
  });
}

Var sub(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  return a.graph->emit(a.value() - b.value(), {a, b}, [a, b](Graph& g, int self) {
    const Mat& go = g.out_grad(self);
    g.accumulate(a, go);
    g.accumulate_expr(b, -go);
  });
}

Var mul(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
  return a.graph->emit(a.value().cwiseProduct(b.value()), {a, b}, [a, b](Graph& g, int self) {
    const Mat& go = g.out_grad(self);
    if (g.requires_grad(a)) g.accumulate_expr(a, go.cwiseProduct(b.value()));
    if (g.requires_grad(b)) g.accumulate_expr(b, go.cwiseProduct(a.value()));
  });
}

Var scale(Var a, Scalar s) {
  return a.graph->emit(a.value() * s, {a}, [a, s](Graph& g, int self) { g.accumulate_expr(a, g.out_grad(self) * s); });
}

Var add_row(Var a, Var r) {
  require(r.rows() == 1 && r.cols() == a.cols(), "add_row: row vector width mismatch");
  Mat v = a.value();
  v.rowwise() += r.value().row(0);
  return a.graph->emit(std::move(v), {a, r}, [a, r](Graph& g, int self) {
    const Mat& go = g.out_grad(self);
    g.accumulate(a, go);
    if (g.requires_grad(r)) g.accumulate_expr(r, go.colwise().sum());
  });
}

Var silu(Var a) {
  const Mat& x = a.value();
  Mat sig = (1.0 + (-x.array()).exp()).inverse().matrix();
  Mat v = x.cwiseProduct(sig);
  return a.graph->emit(std::move(v), {a}, [a, sig = std::move(sig)](Graph& g, int self) {
    const Mat& x = a.value();
    Mat d = (sig.array() * (1.0 + x.array() * (1.0 - sig.array()))).matrix();
    g.accumulate_expr(a, g.out_grad(self).cwiseProduct(d));
  });
}

Var layer_norm(Var a, Var gamma, Var beta, Scalar eps) {
  const Mat& x = a.value();
  const auto c = x.cols();
  require(gamma.cols() == c && beta.cols() == c && gamma.rows() == 1 && beta.rows() == 1,
          "layer_norm: affine parameter width mismatch");
  Mat xhat(x.rows(), c);
  Eigen::VectorXd inv_std(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Scalar mean = x.row(i).mean();
    const Scalar var = (x.row(i).array() - mean).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (x.row(i).array() - mean) * inv_std(i);
  }
  Mat v = xhat;
  v.array().rowwise() *= gamma.value().row(0).array();
  v.rowwise() += beta.value().row(0);
  return a.graph->emit(std::move(v), {a, gamma, beta},
                       [a, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& g, int self) {
                         const Mat& go = g.out_grad(self);
                         if (g.requires_grad(beta)) g.accumulate_expr(beta, go.colwise().sum());
                         if (g.requires_grad(gamma)) g.accumulate_expr(gamma, go.cwiseProduct(xhat).colwise().sum());
                         if (!g.requires_grad(a)) return;
                         Mat gx = go;
                         gx.array().rowwise() *= gamma.value().row(0).array();
                         Mat out(gx.rows(), gx.cols());
                         for (Eigen::Index i = 0; i < gx.rows(); ++i) {
                           const Scalar m1 = gx.row(i).mean();
                           const Scalar m2 = gx.row(i).cwiseProduct(xhat.row(i)).mean();
                           out.row(i) = inv_std(i) * (gx.row(i).array() - m1 - xhat.row(i).array() * m2);
                         }
                         g.accumulate(a, out);
                       });
}

Var softmax_rows(Var a) {
  const Mat& x = a.value();
  Mat v(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Scalar m = x.row(i).maxCoeff();
    v.row(i) = (x.row(i).array() - m).exp();
    v.row(i) /= v.row(i).sum();
  }
  Mat saved = v;
  return a.graph->emit(std::move(v), {a}, [a, y = std::move(saved)](Graph& g, int self) {
    const Mat& go = g.out_grad(self);
    Mat d = y.cwiseProduct(go);
    Eigen::VectorXd s = d.rowwise().sum();
    d -= y.cwiseProduct(s.replicate(1, y.cols()));
    g.accumulate(a, d);
  });
}

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const auto c = parts[0].cols();
  Eigen::Index rows = 0;
  for (auto p : parts) {
    require(p.cols() == c, "concat_rows: width mismatch");
    rows += p.rows();
  }
  Mat v(rows, c);
  Eigen::Index r = 0;
  for (auto p : parts) {
    v.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return parts[0].graph->emit(std::move(v), parts, [ps](Graph& g, int self) {
    const Mat& go = g.out_grad(self);
    Eigen::Index r = 0;
    for (auto p : ps) {
      if (g.requires_grad(p)) g.accumulate_expr(p, go.middleRows(r, p.rows()));
      r += p.rows();
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const auto n = parts[0].rows();
  Eigen::Index cols = 0;
  for (auto p : parts) {
    require(p.rows() == n, "concat_cols: height mismatch");
    cols += p.cols();
  }
  Mat v(n, cols);
  Eigen::Index c = 0;
  for (auto p : parts) {
    v.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return parts[0].graph->emit(std::move(v), parts, [ps](Graph& g, int self) {
    const Mat& go = g.out_grad(self);
    Eigen::Index c = 0;
    for (auto p : ps) {
      if (g.requires_grad(p)) g.accumulate_expr(p, go.middleCols(c, p.cols()));
      c += p.cols();
    }
  });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols: range out of bounds");
  return a.graph->emit(a.value().middleCols(start, count), {a}, [a, start, count](Graph& g, int self) {
    Mat full = Mat::Zero(a.rows(), a.cols());
    full.middleCols(start, count) = g.out_grad(self);
    g.accumulate(a, full);
  });
}

Var gather_rows(Var a, std::span<const int> rows) {
  Mat v(static_cast<Eigen::Index>(rows.size()), a.cols());
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= a.rows()) throw std::out_of_range("gather_rows: index out of range");
    v.row(static_cast<Eigen::Index>(i)) = a.value().row(rows[i]);
  }
  std::vector<int> idx(rows.begin(), rows.end());
  return a.graph->emit(std::move(v), {a}, [a, idx = std::move(idx)](Graph& g, int self) {
    const Mat& go = g.out_grad(self);
    Mat full = Mat::Zero(a.rows(), a.cols());
    for (size_t i = 0; i < idx.size(); ++i) full.row(idx[i]) += go.row(static_cast<Eigen::Index>(i));
    g.accumulate(a, full);
  });
}

Var rearrange(Var a, Eigen::Index rows, Eigen::Index cols, std::span<const int> index) {
  require(static_cast<Eigen::Index>(index.size()) == rows * cols, "rearrange: index size mismatch");
  const Mat& x = a.value();
  Mat v(rows, cols);
  for (size_t i = 0; i < index.size(); ++i) v.data()[i] = x.data()[index[i]];
  std::vector<int> idx(index.begin(), index.end());
  return a.graph->emit(std::move(v), {a}, [a, idx = std::move(idx)](Graph& g, int self) {
    const Mat& go = g.out_grad(self);
    Mat full = Mat::Zero(a.rows(), a.cols());
    for (size_t i = 0; i < idx.size(); ++i) full.data()[idx[i]] += go.data()[i];
    g.accumulate(a, full);
  });
}

Var mse(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "mse: shape mismatch");
  const auto n = static_cast<Scalar>(a.value().size());
  Mat diff = a.value() - b.value();
  Mat v(1, 1);
  v(0, 0) = diff.squaredNorm() / n;
  return a.graph->emit(std::move(v), {a, b}, [a, b, diff = std::move(diff), n](Graph& g, int self) {
    const Scalar go = g.out_grad(self)(0, 0);
    if (g.requires_grad(a)) g.accumulate_expr(a, diff * (2.0 * go / n));
    if (g.requires_grad(b)) g.accumulate_expr(b, diff * (-2.0 * go / n));
  });
}

Var sum(Var a) {
  Mat v(1, 1);
  v(0, 0) = a.value().sum();
  return a.graph->emit(std::move(v), {a}, [a](Graph& g, int self) {
    g.accumulate(a, Mat::Constant(a.rows(), a.cols(), g.out_grad(self)(0, 0)));
  });
}

}  // namespace refcomp::nn
