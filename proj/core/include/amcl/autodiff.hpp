#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "amcl/tensor.hpp"

namespace amcl {

enum class OpKind {
  input,
  parameter,
  dense,
  conv2d,
  relu,
  maxpool2x2,
  softmax,
  softmax_cross_entropy,
  neg_log_clamped,
  sum,
  weighted_sum,
  add,
  scale,
  mul,
  sigmoid,
  concat,
  global_avg_pool,
  channel_scale,
  flatten,
  select_rows,
};

const char* op_name(OpKind kind) noexcept;

/// Handle to a node in a Graph. Handles go stale when the graph is cleared.
struct Var {
  std::size_t id = 0;
  std::uint64_t generation = 0;
};

/// Define-by-run tape. Every op is evaluated eagerly when recorded, so the
/// insertion order is a valid topological order by construction.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  Graph();

  /// Constant leaf. With `requires_grad` the node gradient is kept and can be
  /// read back after backward() (used to probe input sensitivities).
  Var input(Tensor value, bool requires_grad = false);

  /// Leaf bound to a model parameter. backward() accumulates into
  /// `param.grad()`; the tensor must outlive the graph.
  Var parameter(Tensor& param);

  const Tensor& value(Var v) const;
  /// Node gradient from the most recent backward(); empty if the node does
  /// not require grad.
  std::span<const double> grad(Var v) const;
  bool requires_grad(Var v) const;
  OpKind kind(Var v) const;
  std::span<const std::size_t> inputs(Var v) const;

  /// Reverse sweep from a scalar node. Node gradients are recomputed from
  /// scratch, parameter gradients are accumulated (call zero_grad to reset).
  void backward(Var loss);

  void clear();
  std::size_t size() const noexcept { return nodes_.size(); }

  // Kernel-side access used by the op implementations.
  Var record(OpKind kind, std::vector<std::size_t> inputs, Tensor value, BackwardFn backward);
  const Tensor& node_value(std::size_t id) const { return nodes_[id].value; }
  bool node_requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Lazily allocated, zero-initialised gradient buffer of node `id`.
  std::vector<double>& node_grad(std::size_t id);
  std::size_t resolve(Var v) const;

 private:
  struct Node {
    OpKind kind;
    std::vector<std::size_t> inputs;
    Tensor value;
    std::vector<double> grad;
    BackwardFn backward;
    Tensor* param = nullptr;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  std::uint64_t generation_;
};

/// Floor applied to probabilities before any logarithm.
inline constexpr double kProbabilityFloor = 1e-12;

namespace ops {

/// x [B, in], w [out, in], b [out] -> [B, out]
Var dense(Graph& g, Var x, Var w, Var b);

/// x [B, C, H, W], w [O, C, k, k], b [O] -> [B, O, H, W]. Only stride 1 with
/// "same" zero padding (pad = (k - 1) / 2, odd k) is supported.
Var conv2d(Graph& g, Var x, Var w, Var b, std::size_t stride = 1,
           std::optional<std::size_t> pad = std::nullopt);

Var relu(Graph& g, Var x);
Var sigmoid(Graph& g, Var x);

/// 2x2 window, stride 2, over the last two axes of a rank-4 tensor.
Var maxpool2x2(Graph& g, Var x);

/// Max-subtracted softmax along `axis`.
Var softmax(Graph& g, Var x, std::size_t axis);

/// Fused softmax + weighted negative log-likelihood over logits [B, C]:
///   sum_{b,c} weights[b,c] * min(-log(kProbabilityFloor), lse_b - z_bc)
/// Entries hitting the floor contribute no gradient, matching the clamp.
Var softmax_cross_entropy(Graph& g, Var logits, const Tensor& weights);

/// Element-wise -log(max(p, kProbabilityFloor)).
Var neg_log_clamped(Graph& g, Var p);

Var sum(Graph& g, Var x);
/// sum(weights * x) with constant weights of the same shape.
Var weighted_sum(Graph& g, Var x, const Tensor& weights);
Var add(Graph& g, Var a, Var b);
Var scale(Graph& g, Var a, double factor);
Var mul(Graph& g, Var a, Var b);

/// Concatenate along `axis` (all other extents must agree).
Var concat(Graph& g, std::span<const Var> parts, std::size_t axis);

/// [B, C, H, W] -> [B, C]; rank-2 inputs pass through unchanged.
Var global_avg_pool(Graph& g, Var x);

/// x [B, C, ...] scaled per (batch, channel) by gate [B, C].
Var channel_scale(Graph& g, Var x, Var gate);

/// [B, ...] -> [B, prod(...)]
Var flatten(Graph& g, Var x);

/// Row b (leading axis) of the result is row b of sources[source_of_row[b]].
Var select_rows(Graph& g, std::span<const Var> sources, std::span<const std::size_t> source_of_row);

}  // namespace ops
}  // namespace amcl
