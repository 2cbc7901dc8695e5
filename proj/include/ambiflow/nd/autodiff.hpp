#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "ambiflow/nd/tensor.hpp"

namespace ambiflow::nd {

class Var;

/// Maps the output gradient to one gradient per input. `needs[i]` is false
/// for inputs that do not require a gradient; their slot may stay empty.
using BackwardFn = std::function<std::vector<Var>(const Var& grad_out, std::span<const bool> needs)>;

struct Node {
  const char* op = "leaf";
  Tensor value;
  Tensor grad;  // accumulated by backward() on leaves
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
  bool requires_grad = false;
  /// The backward rule is itself built from differentiable ops.
  bool twice_differentiable = true;

  bool is_leaf() const { return inputs.empty(); }
};

/// Handle to a node of the computation graph.
///
/// Graphs are built implicitly: every op on Vars that require a gradient
/// records a node pointing at its inputs. Copies of a Var share the node.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Var scalar(double v) { return Var(Tensor::scalar(v)); }

  const Tensor& value() const { return node_->value; }
  /// In-place access for optimizers; only valid on leaves.
  Tensor& mutable_value();
  const Tensor& grad() const { return node_->grad; }
  Tensor& mutable_grad() { return node_->grad; }
  void zero_grad();

  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  double item() const { return node_->value.item(); }
  const char* op() const { return node_->op; }
  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Disables graph recording for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Records an op node; checks the result for non-finite values.
Var make_op(const char* op, Tensor value, std::vector<Var> inputs, BackwardFn backward,
            bool twice_differentiable = true);

// Elementwise with row/column broadcasting (each dim equal or 1).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double k);
Var add_scalar(const Var& a, double k);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator-(const Var& a) { return neg(a); }
inline Var operator*(double k, const Var& a) { return scale(a, k); }
inline Var operator*(const Var& a, double k) { return scale(a, k); }
inline Var operator+(const Var& a, double k) { return add_scalar(a, k); }
inline Var operator-(const Var& a, double k) { return add_scalar(a, -k); }

Var matmul(const Var& a, const Var& b, bool transpose_a = false, bool transpose_b = false);
Var transpose(const Var& a);

Var exp(const Var& a);
Var log(const Var& a);
Var arctan(const Var& a);
Var square(const Var& a);
Var sqrt(const Var& a);
Var abs(const Var& a);
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope);
/// max(a, 0); alias of relu kept for loss formulas.
inline Var clamp_min_zero(const Var& a) { return relu(a); }
/// g * (a > 0 ? 1 : slope): the backward of (leaky) relu, differentiable in g.
Var step_mul(const Var& g, const Var& a, double slope);

Var sum(const Var& a);
Var mean(const Var& a);
/// Sum over rows: (r x c) -> (1 x c).
Var sum_rows(const Var& a);
/// Sum over columns: (r x c) -> (r x 1).
Var sum_cols(const Var& a);
Var broadcast_to(const Var& a, std::size_t rows, std::size_t cols);
/// Reduces a broadcast gradient back to (rows x cols).
Var sum_to(const Var& a, std::size_t rows, std::size_t cols);

Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_cols(const Var& a, std::size_t begin, std::size_t count);
Var slice_rows(const Var& a, std::size_t begin, std::size_t count);
std::vector<Var> split_cols(const Var& a, const std::vector<std::size_t>& sizes);
Var pad_cols(const Var& a, std::size_t begin, std::size_t total);
Var pad_rows(const Var& a, std::size_t begin, std::size_t total);
/// out[:, j] = a[:, index[j]].
Var gather_cols(const Var& a, std::vector<std::size_t> index);
/// out[:, index[j]] += a[:, j], result has `cols` columns.
Var scatter_cols(const Var& a, std::vector<std::size_t> index, std::size_t cols);
Var gather_rows(const Var& a, std::vector<std::size_t> index);
Var scatter_rows(const Var& a, std::vector<std::size_t> index, std::size_t rows);
/// Row i becomes rows [i*times, (i+1)*times).
Var repeat_rows(const Var& a, std::size_t times);
/// Sums consecutive groups of `group` rows.
Var segment_sum_rows(const Var& a, std::size_t group);
inline Var segment_mean_rows(const Var& a, std::size_t group) {
  return scale(segment_sum_rows(a, group), 1.0 / static_cast<double>(group));
}

/// Identity in value, blocks every gradient flowing into `a`.
Var stop_gradient(const Var& a);

Var l1_norm(const Var& a);
Var l2_norm_sq(const Var& a);

/// Nodes reachable from `out` that require a gradient, inputs before users.
std::vector<Node*> topological_order(const Var& out);

/// Accumulates d(out)/d(leaf) into every reachable leaf's grad().
void backward(const Var& out);

/// Gradients of scalar `out` with respect to `wrt`. With create_graph the
/// result is itself differentiable (restricted to twice-differentiable ops).
std::vector<Var> grad(const Var& out, const std::vector<Var>& wrt, bool create_graph = false);

/// d/d(wrt) of sum(d(out)/d(wrt)); for scalar wrt this is the second derivative.
Var grad_of_grad(const Var& out, const Var& wrt);

}  // namespace ambiflow::nd
