#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <string>
#include <vector>

#include "drda/tensor.hpp"

namespace drda {

// Reverse-mode autodiff over a tape of tensor nodes. Forward values are
// computed eagerly as nodes are built; the tape order is a topological
// order, so backward is a single reverse sweep that visits each node once.
//
// All arithmetic is 64-bit. Every op validates shapes and checks its
// output for NaN/Inf; backward checks every accumulated gradient.

using NodeId = std::size_t;

enum class Op : std::uint8_t {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kMatMul,
  kTranspose,
  kAddRowVec,   // matrix + row-vector broadcast over rows (bias add)
  kRowCenter,   // out_ij = m_ij - v_i
  kRelu,
  kLog,
  kLogClamped,  // log(max(x, 1e-12)); clamp events counted
  kExp,
  kSqrt,
  kAddScalar,
  kMulScalar,
  kRowSoftmax,
  kRowLogSumExp,
  kGather,      // out_i = m[i, index_i]
  kRowSum,
  kSumAll,
  kMeanAll,
};

const char* op_name(Op op);

class Graph {
 public:
  static constexpr double kLogFloor = 1e-12;

  NodeId constant(Tensor value);
  NodeId param(Tensor value);  // trainable leaf
  // Constant leaf holding a frozen copy of x's current value (stop-gradient).
  NodeId detach(NodeId x);

  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId div(NodeId a, NodeId b);
  NodeId matmul(NodeId a, NodeId b);
  NodeId transpose(NodeId a);
  NodeId add_rowvec(NodeId m, NodeId v);
  NodeId row_center(NodeId m, NodeId v);
  NodeId relu(NodeId a);
  NodeId log(NodeId a);
  NodeId log_clamped(NodeId a);
  NodeId exp(NodeId a);
  NodeId sqrt(NodeId a);
  NodeId add_scalar(NodeId a, double c);
  NodeId mul_scalar(NodeId a, double c);
  NodeId row_softmax(NodeId a);
  NodeId row_logsumexp(NodeId a);
  NodeId gather(NodeId m, std::vector<int> index);
  NodeId row_sum(NodeId a);
  NodeId sum_all(NodeId a);
  NodeId mean_all(NodeId a);

  const Tensor& value(NodeId id) const;
  const Tensor& grad(NodeId id) const;
  bool is_trainable(NodeId id) const;
  std::size_t size() const { return nodes_.size(); }
  std::size_t clamp_warnings() const { return clamp_warnings_; }

  // Replaces a leaf's value (finite-difference probes, parameter sweeps).
  void set_leaf_value(NodeId id, const Tensor& value);
  // Re-runs forward over all non-leaf nodes in tape order.
  void recompute_forward();

  // Zeroes all gradients, seeds d(root)/d(root) = 1, sweeps the tape in
  // reverse. root must be scalar.
  void backward(NodeId root);

  // Backward + gradient map for every trainable leaf (zeros when the root
  // does not depend on a leaf).
  std::map<NodeId, Tensor> evaluate_with_gradients(NodeId root);

  // Max over leaf coordinates of |analytic - central| / (|analytic| + |central| + 1e-12).
  double finite_difference_check(NodeId root, NodeId leaf, double step);

 private:
  struct Node {
    Op op = Op::kLeaf;
    NodeId a = kNoInput;
    NodeId b = kNoInput;
    double scalar = 0.0;
    std::vector<int> index;
    bool trainable = false;
    bool needs_grad = false;
    Tensor value;
    Tensor grad;
  };

  static constexpr NodeId kNoInput = static_cast<NodeId>(-1);

  NodeId push(Node node);
  void compute(Node& node);
  void backprop_node(const Node& node);
  const Node& at(NodeId id) const;
  Node& at(NodeId id);

  // deque keeps value/grad references stable while new nodes are appended
  std::deque<Node> nodes_;
  std::size_t clamp_warnings_ = 0;
};

}  // namespace drda
