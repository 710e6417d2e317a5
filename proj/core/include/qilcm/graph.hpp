#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qilcm/tensor.hpp"

namespace qilcm::diff {

using NodeId = std::uint32_t;

enum class OpKind {
  leaf,
  constant,
  matmul,
  elu,
  softmax,
  hadamard,
  concat,
  add,
  sub,
  scale_add,
  scale,
  add_scalar,
  sum,
  mean,
  add_rowvec,
  sub_rowvec,
  mul_rowvec,
  square,
  sqrt,
  log,
  recip,
  clamp_min,
  reshape,
  gather_rows,
  chamfer,
};

const char* op_name(OpKind kind);

class Graph;

/// Result of a backward pass: one gradient tensor per differentiable node
/// that the loss reaches, and a zero tensor for every unreached leaf.
class Gradients {
 public:
  bool contains(NodeId id) const {
    return id < grads_.size() && grads_[id].has_value();
  }
  const Tensor& at(NodeId id) const;

 private:
  friend class Graph;
  std::vector<std::optional<Tensor>> grads_;
};

/// Define-by-run computation graph with reverse-mode differentiation.
///
/// Nodes are appended in execution order, which is therefore a topological
/// order; backward() walks it in exact reverse. Each node caches the locals
/// its vector-Jacobian product needs. A Graph is confined to one thread for
/// its lifetime; the Tensors it hands out are immutable and freely shareable.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Differentiable input (parameter). backward() always reports a
  /// gradient for it, zero if the loss never touches it.
  NodeId leaf(Tensor value);
  /// Non-differentiable input (data).
  NodeId constant(Tensor value);

  NodeId matmul(NodeId a, NodeId b);
  /// Elementwise exponential linear unit: x if x > 0 else exp(x) - 1.
  NodeId elu(NodeId x);
  /// Softmax over a vector, max-subtracted for overflow safety.
  NodeId softmax(NodeId x);
  NodeId hadamard(NodeId a, NodeId b);
  /// Concatenate along `axis` (0 = rows, 1 = cols); other dims must agree.
  NodeId concat(NodeId a, NodeId b, int axis);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  /// a + alpha * b, shapes equal.
  NodeId scale_add(NodeId a, NodeId b, double alpha);
  NodeId scale(NodeId a, double alpha);
  NodeId add_scalar(NodeId a, double c);
  NodeId sum(NodeId x);
  NodeId mean(NodeId x);
  /// Matrix [n x d] op vector of d values applied to every row.
  NodeId add_rowvec(NodeId m, NodeId v);
  NodeId sub_rowvec(NodeId m, NodeId v);
  NodeId mul_rowvec(NodeId m, NodeId v);
  NodeId square(NodeId x);
  /// Elementwise sqrt; the subgradient at 0 is taken as 0 so that
  /// zero-variance dimensions stay finite.
  NodeId sqrt(NodeId x);
  NodeId log(NodeId x);
  NodeId recip(NodeId x);
  NodeId clamp_min(NodeId x, double lo);
  NodeId reshape(NodeId x, std::vector<std::size_t> shape);
  /// Rows of `table` selected by `idx`; gradients scatter-add back.
  NodeId gather_rows(NodeId table, std::vector<std::size_t> idx);
  /// Chamfer pseudo-distance between the row sets of two matrices:
  /// sum of squared nearest-neighbour distances in both directions.
  /// Gradients route to the argmin element only, ties to the lowest index.
  NodeId chamfer(NodeId a, NodeId b);

  const Tensor& value(NodeId id) const;
  bool requires_grad(NodeId id) const;
  OpKind kind(NodeId id) const;
  std::span<const NodeId> inputs(NodeId id) const;
  std::size_t size() const { return nodes_.size(); }

  /// Reverse-mode pass from a scalar loss node. Deterministic: two runs on
  /// the same graph produce bitwise-identical gradients.
  Gradients backward(NodeId loss) const;

 private:
  struct Backprop;
  struct Node {
    OpKind kind;
    Tensor value;
    bool requires_grad = false;
    std::vector<NodeId> ins;
    std::function<void(std::span<const double>, Backprop&)> vjp;
  };

  const Node& node(NodeId id) const;
  NodeId push(Node n);
  NodeId unary(OpKind kind, NodeId x, Tensor out,
               std::function<void(std::span<const double>, Backprop&)> vjp);

  std::vector<Node> nodes_;
};

}  // namespace qilcm::diff
