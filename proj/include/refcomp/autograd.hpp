#pragma once

#include <Eigen/Dense>

#include <functional>
#include <span>
#include <utility>
#include <vector>

namespace refcomp::nn {

using Scalar = double;
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
struct Var {
  Graph* graph = nullptr;
  int id = -1;

  const Mat& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  explicit operator bool() const { return graph != nullptr; }
};

/// Tape-based reverse-mode differentiation over row-major matrices. Nodes are
/// appended in evaluation order, so backward() is a reverse sweep.
///
/// With grad disabled the graph only evaluates; no closures are recorded.
class Graph {
 public:
  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Mat value);
  /// A leaf that receives a gradient (gradient checks, inputs under test).
  Var leaf(Mat value);
  /// Borrow a trainable parameter. Repeated calls with the same id return the
  /// same node so gradients accumulate across uses.
  Var param(int param_id, const Mat& value, bool trainable = true);

  const Mat& value(Var v) const { return node(v).val(); }
  /// Gradient of the last backward() target. Zero-sized if never reached.
  const Mat& grad(Var v) const { return node(v).grad; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }

  /// Seeds d(out)/d(out) = seed * ones and sweeps the tape.
  void backward(Var out, Scalar seed = 1.0);

  /// (param id, gradient) for every trainable parameter touched by the graph.
  std::vector<std::pair<int, const Mat*>> param_grads() const;

  std::size_t size() const { return nodes_.size(); }

  // Used by the op implementations.
  using BackwardFn = std::function<void(Graph&, int self)>;
  Var emit(Mat value, std::initializer_list<Var> parents, BackwardFn fn);
  Var emit(Mat value, std::span<const Var> parents, BackwardFn fn);
  void accumulate(Var target, const Mat& g);
  template <typename Expr>
  void accumulate_expr(Var target, const Expr& g) {
    auto& n = nodes_[static_cast<size_t>(target.id)];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }
  const Mat& out_grad(int self) const { return nodes_[static_cast<size_t>(self)].grad; }

 private:
  struct Node {
    Mat value;
    const Mat* borrowed = nullptr;
    Mat grad;
    bool requires_grad = false;
    BackwardFn backward;
    const Mat& val() const { return borrowed ? *borrowed : value; }
  };
  const Node& node(Var v) const { return nodes_[static_cast<size_t>(v.id)]; }

  bool grad_enabled_;
  std::vector<Node> nodes_;
  std::vector<std::pair<int, int>> params_;  // (param id, node id)
};

// ---- ops -------------------------------------------------------------------

Var matmul(Var a, Var b);     // a * b
Var matmul_nt(Var a, Var b);  // a * b^T
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // elementwise
Var scale(Var a, Scalar s);
/// a (n x c) + r (1 x c) broadcast over rows.
Var add_row(Var a, Var r);
Var silu(Var a);
Var layer_norm(Var a, Var gamma, Var beta, Scalar eps = 1e-5);
Var softmax_rows(Var a);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
Var gather_rows(Var a, std::span<const int> rows);
/// out.data[i] = a.data[index[i]] with out shaped rows x cols.
Var rearrange(Var a, Eigen::Index rows, Eigen::Index cols, std::span<const int> index);
/// Mean of squared differences; 1 x 1.
Var mse(Var a, Var b);
/// Sum of all entries; 1 x 1.
Var sum(Var a);

}  // namespace refcomp::nn
