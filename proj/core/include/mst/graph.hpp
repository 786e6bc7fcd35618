#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mst/random.hpp"
#include "mst/tensor.hpp"

namespace mst {

/// A trainable tensor plus its gradient accumulator.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
  void zero_grad() { grad = Tensor(value.shape()); }
};

class Graph;

/// Handle to a node of a Graph. Cheap to copy; only valid while the graph
/// that produced it is alive and has not been reset.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  /// Gradient accumulated by the last backward pass(es). Zero tensor if the
  /// node did not receive any.
  const Tensor& grad() const;
  bool requires_grad() const;
  Graph& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  friend class Graph;
  Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Tape of executed operations. Nodes are appended in execution order, so
/// reverse id order is a valid reverse topological order.
///
/// Leaf gradients accumulate across backward() calls; interior gradients
/// are cleared at the start of each call. reset() drops the whole tape.
///
/// Single-threaded by contract. Separate graphs share nothing mutable, so
/// they may run on separate threads over the same (read-only) Parameters.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  /// With `track_gradients` false, parameters bind as constants and no
  /// backward closures are kept (inference only).
  explicit Graph(bool track_gradients = true) : track_(track_gradients) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf holding a copy of `value`.
  Var input(Tensor value, bool requires_grad = false);
  /// Leaf bound to a parameter. The value is referenced, not copied; the
  /// same parameter bound twice yields the same node.
  Var param(const Parameter& p);

  /// Appends an interior node. Used by op implementations.
  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);

  void backward(Var root);

  /// Adds this graph's parameter-leaf gradients into Parameter::grad,
  /// scaled by `scale`. Parameters are visited in binding order.
  void accumulate_param_grads(std::span<Parameter* const> params, double scale = 1.0) const;
  /// Gradient of a bound parameter, or nullptr when it was never bound.
  const Tensor* param_grad(const Parameter& p) const;

  void reset();
  std::size_t size() const { return nodes_.size(); }

  // Accessors used by op implementations.
  const Tensor& value(std::size_t id) const;
  Tensor& grad(std::size_t id);
  const Tensor& grad_or_zero(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t input_id(std::size_t id, std::size_t k) const { return nodes_[id].inputs[k]; }

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    Tensor grad;
    bool requires_grad = false;
    bool leaf = true;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    const Tensor& value() const { return external ? *external : owned; }
  };

  Var make_var(std::size_t id) { return Var(this, id); }

  std::deque<Node> nodes_;  // deque: references from value() survive appends
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
  std::vector<const Parameter*> bound_params_;
  mutable Tensor zero_;
  bool track_ = true;
};

// ---------------------------------------------------------------------------
// Differentiable operations. All operands must belong to the same graph.

/// a[m x k] * b[k x n]. A rank-1 `a` of length k is treated as 1 x k and the
/// result is rank-1 of length n.
Var matmul(Var a, Var b);
Var transpose(Var a);

/// Elementwise sum. `b` may also be a vector of length a.cols(), broadcast
/// over every leading position of `a`.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var abs(Var a);
Var relu(Var a);

/// Softmax over the last axis, max-subtracted. NaN inputs propagate.
Var softmax_rows(Var x);

inline constexpr double kLayerNormEps = 1e-5;
/// Per-row normalization with population variance, then gain/bias.
Var layer_norm(Var x, Var gain, Var bias, double eps = kLayerNormEps);

/// Concatenate along the last axis; leading extents must agree.
Var concat_last(std::span<const Var> parts);
/// Stack rank-2 blocks (or rank-1 rows) vertically; column counts must agree.
Var concat_rows(std::span<const Var> parts);
/// Same values, new shape of equal size.
Var reshape(Var x, Shape shape);
/// Rows [lo, hi) of a rank-2 tensor.
Var slice_rows(Var x, std::size_t lo, std::size_t hi);
/// Columns [lo, hi) of a rank-2 tensor.
Var slice_cols(Var x, std::size_t lo, std::size_t hi);
/// Column-wise max over rows: [N x D] -> [D]. Ties go to the lowest row.
Var max_over_positions(Var x);
/// Rows of `table` selected by `ids`.
Var gather_rows(Var table, std::span<const std::size_t> ids);

/// Inverted dropout: kept entries are scaled by 1/(1-p). Identity when
/// !training or p == 0. Throws ConfigError for p outside [0, 1).
Var dropout(Var x, double p, bool training, Rng& rng);

Var sum(Var x);
Var mean(Var x);

/// Mean squared error over all elements.
Var mse_loss(Var pred, Var target);
/// -log softmax(logits)[label] for a rank-1 logits vector.
Var cross_entropy(Var logits, std::size_t label);

/// Scaled dot-product attention where query j only sees keys in the
/// clipped window [j - r, j + r], r = (width - 1) / 2. q, k, v are N x Dh and
/// logits are divided by sqrt(Dh). When `weights` is non-null it receives the
/// dense N x N attention matrix (zeros outside each window).
Var window_attention(Var q, Var k, Var v, std::size_t width, Tensor* weights = nullptr);

}  // namespace mst
