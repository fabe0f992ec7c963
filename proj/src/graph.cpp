#include "drda/graph.hpp"

#include <algorithm>
#include <cmath>

#include "drda/error.hpp"

namespace drda {

namespace {

// C (+)= op(A) x op(B), plain loops in ikj order.
void matmul_acc(const Tensor& A, bool transA, const Tensor& B, bool transB,
                Tensor& C, bool accumulate) {
  const std::size_t n = transA ? A.cols() : A.rows();
  const std::size_t m = transA ? A.rows() : A.cols();
  const std::size_t k = transB ? B.rows() : B.cols();
  if ((transB ? B.cols() : B.rows()) != m) {
    throw contract_error("matmul: inner dimensions disagree, " + A.shape_str() + " x " +
                         B.shape_str());
  }
  if (!accumulate) std::fill(C.vec().begin(), C.vec().end(), 0.0);
  const double* a = A.data();
  const double* b = B.data();
  double* c = C.data();
  const std::size_t acols = A.cols();
  const std::size_t bcols = B.cols();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t l = 0; l < m; ++l) {
      const double av = transA ? a[l * acols + i] : a[i * acols + l];
      if (av == 0.0) continue;
      const double* brow = transB ? nullptr : b + l * bcols;
      double* crow = c + i * k;
      if (transB) {
        for (std::size_t j = 0; j < k; ++j) crow[j] += av * b[j * bcols + l];
      } else {
        for (std::size_t j = 0; j < k; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kDiv: return "div";
    case Op::kMatMul: return "matmul";
    case Op::kTranspose: return "transpose";
    case Op::kAddRowVec: return "add_rowvec";
    case Op::kRowCenter: return "row_center";
    case Op::kRelu: return "relu";
    case Op::kLog: return "log";
    case Op::kLogClamped: return "log_clamped";
    case Op::kExp: return "exp";
    case Op::kSqrt: return "sqrt";
    case Op::kAddScalar: return "add_scalar";
    case Op::kMulScalar: return "mul_scalar";
    case Op::kRowSoftmax: return "row_softmax";
    case Op::kRowLogSumExp: return "row_logsumexp";
    case Op::kGather: return "gather";
    case Op::kRowSum: return "row_sum";
    case Op::kSumAll: return "sum_all";
    case Op::kMeanAll: return "mean_all";
  }
  return "?";
}

const Graph::Node& Graph::at(NodeId id) const {
  if (id >= nodes_.size()) throw contract_error("Graph: invalid node id");
  return nodes_[id];
}

Graph::Node& Graph::at(NodeId id) {
  if (id >= nodes_.size()) throw contract_error("Graph: invalid node id");
  return nodes_[id];
}

NodeId Graph::push(Node node) {
  if (node.op != Op::kLeaf) {
    node.needs_grad = (node.a != kNoInput && at(node.a).needs_grad) ||
                      (node.b != kNoInput && at(node.b).needs_grad);
    compute(node);
  } else {
    node.needs_grad = node.trainable;
  }
  if (!node.value.all_finite()) {
    throw numeric_error(std::string("non-finite forward value in op '") + op_name(node.op) +
                        "' (node " + std::to_string(nodes_.size()) + ")");
  }
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

NodeId Graph::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId Graph::param(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.trainable = true;
  return push(std::move(n));
}

NodeId Graph::detach(NodeId x) { return constant(at(x).value); }

#define DRDA_BINOP(name, opk)                     \
  NodeId Graph::name(NodeId a, NodeId b) {        \
    Node n;                                       \
    n.op = opk;                                   \
    n.a = a;                                      \
    n.b = b;                                      \
    return push(std::move(n));                    \
  }

DRDA_BINOP(add, Op::kAdd)
DRDA_BINOP(sub, Op::kSub)
DRDA_BINOP(mul, Op::kMul)
DRDA_BINOP(div, Op::kDiv)
DRDA_BINOP(matmul, Op::kMatMul)
DRDA_BINOP(add_rowvec, Op::kAddRowVec)
DRDA_BINOP(row_center, Op::kRowCenter)
#undef DRDA_BINOP

#define DRDA_UNOP(name, opk)              \
  NodeId Graph::name(NodeId a) {          \
    Node n;                               \
    n.op = opk;                           \
    n.a = a;                              \
    return push(std::move(n));            \
  }

DRDA_UNOP(transpose, Op::kTranspose)
DRDA_UNOP(relu, Op::kRelu)
DRDA_UNOP(log, Op::kLog)
DRDA_UNOP(log_clamped, Op::kLogClamped)
DRDA_UNOP(exp, Op::kExp)
DRDA_UNOP(sqrt, Op::kSqrt)
DRDA_UNOP(row_softmax, Op::kRowSoftmax)
DRDA_UNOP(row_logsumexp, Op::kRowLogSumExp)
DRDA_UNOP(row_sum, Op::kRowSum)
DRDA_UNOP(sum_all, Op::kSumAll)
DRDA_UNOP(mean_all, Op::kMeanAll)
#undef DRDA_UNOP

NodeId Graph::add_scalar(NodeId a, double c) {
  Node n;
  n.op = Op::kAddScalar;
  n.a = a;
  n.scalar = c;
  return push(std::move(n));
}

NodeId Graph::mul_scalar(NodeId a, double c) {
  Node n;
  n.op = Op::kMulScalar;
  n.a = a;
  n.scalar = c;
  return push(std::move(n));
}

NodeId Graph::gather(NodeId m, std::vector<int> index) {
  Node n;
  n.op = Op::kGather;
  n.a = m;
  n.index = std::move(index);
  return push(std::move(n));
}

void Graph::compute(Node& node) {
  if (node.op == Op::kLeaf) return;
  const Tensor& A = at(node.a).value;
  switch (node.op) {
    case Op::kLeaf:
      return;
    case Op::kAdd:
    case Op::kSub:
    case Op::kMul:
    case Op::kDiv: {
      const Tensor& B = at(node.b).value;
      if (!A.same_shape(B)) {
        throw contract_error(std::string(op_name(node.op)) + ": shape mismatch " +
                             A.shape_str() + " vs " + B.shape_str());
      }
      if (node.value.numel() != A.numel()) node.value = Tensor(A.shape());
      const std::size_t n = A.numel();
      for (std::size_t i = 0; i < n; ++i) {
        switch (node.op) {
          case Op::kAdd: node.value[i] = A[i] + B[i]; break;
          case Op::kSub: node.value[i] = A[i] - B[i]; break;
          case Op::kMul: node.value[i] = A[i] * B[i]; break;
          default: node.value[i] = A[i] / B[i]; break;
        }
      }
      return;
    }
    case Op::kMatMul: {
      const Tensor& B = at(node.b).value;
      if (A.rank() != 2 || B.rank() != 2) {
        throw contract_error("matmul: operands must be matrices");
      }
      if (node.value.numel() != A.rows() * B.cols()) {
        node.value = Tensor({A.rows(), B.cols()});
      }
      matmul_acc(A, false, B, false, node.value, false);
      return;
    }
    case Op::kTranspose: {
      if (A.rank() != 2) throw contract_error("transpose: operand must be a matrix");
      if (node.value.numel() != A.numel() || node.value.rank() != 2 ||
          node.value.rows() != A.cols()) {
        node.value = Tensor({A.cols(), A.rows()});
      }
      for (std::size_t i = 0; i < A.rows(); ++i) {
        for (std::size_t j = 0; j < A.cols(); ++j) node.value.at(j, i) = A.at(i, j);
      }
      return;
    }
    case Op::kAddRowVec: {
      const Tensor& v = at(node.b).value;
      if (A.rank() != 2 || v.numel() != A.cols()) {
        throw contract_error("add_rowvec: need matrix " + A.shape_str() +
                             " and row vector of length " + std::to_string(A.cols()));
      }
      if (node.value.numel() != A.numel() || !node.value.same_shape(A)) node.value = Tensor(A.shape());
      for (std::size_t i = 0; i < A.rows(); ++i) {
        for (std::size_t j = 0; j < A.cols(); ++j) node.value.at(i, j) = A.at(i, j) + v[j];
      }
      return;
    }
    case Op::kRowCenter: {
      const Tensor& v = at(node.b).value;
      if (A.rank() != 2 || v.numel() != A.rows()) {
        throw contract_error("row_center: need matrix " + A.shape_str() +
                             " and column vector of length " + std::to_string(A.rows()));
      }
      if (node.value.numel() != A.numel() || !node.value.same_shape(A)) node.value = Tensor(A.shape());
      for (std::size_t i = 0; i < A.rows(); ++i) {
        for (std::size_t j = 0; j < A.cols(); ++j) node.value.at(i, j) = A.at(i, j) - v[i];
      }
      return;
    }
    case Op::kRelu:
    case Op::kLog:
    case Op::kLogClamped:
    case Op::kExp:
    case Op::kSqrt: {
      if (node.value.numel() != A.numel() || !node.value.same_shape(A)) node.value = Tensor(A.shape());
      const std::size_t n = A.numel();
      for (std::size_t i = 0; i < n; ++i) {
        switch (node.op) {
          case Op::kRelu: node.value[i] = A[i] > 0.0 ? A[i] : 0.0; break;
          case Op::kLog: node.value[i] = std::log(A[i]); break;
          case Op::kLogClamped:
            if (A[i] < kLogFloor) {
              ++clamp_warnings_;
              node.value[i] = std::log(kLogFloor);
            } else {
              node.value[i] = std::log(A[i]);
            }
            break;
          case Op::kExp: node.value[i] = std::exp(A[i]); break;
          default: node.value[i] = std::sqrt(A[i]); break;
        }
      }
      return;
    }
    case Op::kAddScalar:
    case Op::kMulScalar: {
      if (node.value.numel() != A.numel() || !node.value.same_shape(A)) node.value = Tensor(A.shape());
      const std::size_t n = A.numel();
      for (std::size_t i = 0; i < n; ++i) {
        node.value[i] = node.op == Op::kAddScalar ? A[i] + node.scalar : A[i] * node.scalar;
      }
      return;
    }
    case Op::kRowSoftmax: {
      if (A.rank() != 2) throw contract_error("row_softmax: operand must be a matrix");
      if (node.value.numel() != A.numel() || !node.value.same_shape(A)) node.value = Tensor(A.shape());
      for (std::size_t i = 0; i < A.rows(); ++i) {
        double mx = A.at(i, 0);
        for (std::size_t j = 1; j < A.cols(); ++j) mx = std::max(mx, A.at(i, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < A.cols(); ++j) {
          const double e = std::exp(A.at(i, j) - mx);
          node.value.at(i, j) = e;
          sum += e;
        }
        for (std::size_t j = 0; j < A.cols(); ++j) node.value.at(i, j) /= sum;
      }
      return;
    }
    case Op::kRowLogSumExp: {
      if (A.rank() != 2) throw contract_error("row_logsumexp: operand must be a matrix");
      if (node.value.numel() != A.rows() || node.value.rank() != 1) {
        node.value = Tensor({A.rows()});
      }
      for (std::size_t i = 0; i < A.rows(); ++i) {
        double mx = A.at(i, 0);
        for (std::size_t j = 1; j < A.cols(); ++j) mx = std::max(mx, A.at(i, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < A.cols(); ++j) sum += std::exp(A.at(i, j) - mx);
        node.value[i] = mx + std::log(sum);
      }
      return;
    }
    case Op::kGather: {
      if (A.rank() != 2) throw contract_error("gather: operand must be a matrix");
      if (node.index.size() != A.rows()) {
        throw contract_error("gather: index length must equal row count");
      }
      for (int ix : node.index) {
        if (ix < 0 || static_cast<std::size_t>(ix) >= A.cols()) {
          throw contract_error("gather: index out of range");
        }
      }
      if (node.value.numel() != A.rows() || node.value.rank() != 1) {
        node.value = Tensor({A.rows()});
      }
      for (std::size_t i = 0; i < A.rows(); ++i) {
        node.value[i] = A.at(i, static_cast<std::size_t>(node.index[i]));
      }
      return;
    }
    case Op::kRowSum: {
      if (A.rank() != 2) throw contract_error("row_sum: operand must be a matrix");
      if (node.value.numel() != A.rows() || node.value.rank() != 1) {
        node.value = Tensor({A.rows()});
      }
      for (std::size_t i = 0; i < A.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < A.cols(); ++j) s += A.at(i, j);
        node.value[i] = s;
      }
      return;
    }
    case Op::kSumAll:
    case Op::kMeanAll: {
      if (node.value.numel() != 1 || node.value.rank() != 0) node.value = Tensor::scalar(0.0);
      double s = 0.0;
      for (std::size_t i = 0; i < A.numel(); ++i) s += A[i];
      node.value[0] = node.op == Op::kSumAll ? s : s / static_cast<double>(A.numel());
      return;
    }
  }
}

const Tensor& Graph::value(NodeId id) const { return at(id).value; }

const Tensor& Graph::grad(NodeId id) const {
  const Node& n = at(id);
  if (n.grad.numel() == 0) {
    throw contract_error("Graph::grad: no gradient stored for node " + std::to_string(id));
  }
  return n.grad;
}

bool Graph::is_trainable(NodeId id) const { return at(id).trainable; }

void Graph::set_leaf_value(NodeId id, const Tensor& value) {
  Node& n = at(id);
  if (n.op != Op::kLeaf) throw contract_error("set_leaf_value: node is not a leaf");
  if (!n.value.same_shape(value)) throw contract_error("set_leaf_value: shape mismatch");
  n.value = value;
}

void Graph::recompute_forward() {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    if (n.op == Op::kLeaf) continue;
    compute(n);
    if (!n.value.all_finite()) {
      throw numeric_error(std::string("non-finite forward value in op '") + op_name(n.op) +
                          "' (node " + std::to_string(i) + ")");
    }
  }
}

void Graph::backprop_node(const Node& node) {
  const Tensor& g = node.grad;
  Node& na = at(node.a);
  Tensor& ga = na.grad;
  const Tensor& A = na.value;
  const bool wa = na.needs_grad;
  switch (node.op) {
    case Op::kLeaf:
      return;
    case Op::kAdd:
    case Op::kSub: {
      Node& nb = at(node.b);
      if (wa) {
        for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
      }
      if (nb.needs_grad) {
        const double sgn = node.op == Op::kAdd ? 1.0 : -1.0;
        for (std::size_t i = 0; i < g.numel(); ++i) nb.grad[i] += sgn * g[i];
      }
      return;
    }
    case Op::kMul: {
      Node& nb = at(node.b);
      const Tensor& B = nb.value;
      if (wa) {
        for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * B[i];
      }
      if (nb.needs_grad) {
        for (std::size_t i = 0; i < g.numel(); ++i) nb.grad[i] += g[i] * A[i];
      }
      return;
    }
    case Op::kDiv: {
      Node& nb = at(node.b);
      const Tensor& B = nb.value;
      if (wa) {
        for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] / B[i];
      }
      if (nb.needs_grad) {
        for (std::size_t i = 0; i < g.numel(); ++i) nb.grad[i] -= g[i] * A[i] / (B[i] * B[i]);
      }
      return;
    }
    case Op::kMatMul: {
      Node& nb = at(node.b);
      if (wa) matmul_acc(g, false, nb.value, true, ga, true);
      if (nb.needs_grad) matmul_acc(A, true, g, false, nb.grad, true);
      return;
    }
    case Op::kTranspose: {
      if (wa) {
        for (std::size_t i = 0; i < A.rows(); ++i) {
          for (std::size_t j = 0; j < A.cols(); ++j) ga.at(i, j) += g.at(j, i);
        }
      }
      return;
    }
    case Op::kAddRowVec: {
      Node& nb = at(node.b);
      if (wa) {
        for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
      }
      if (nb.needs_grad) {
        for (std::size_t i = 0; i < g.rows(); ++i) {
          for (std::size_t j = 0; j < g.cols(); ++j) nb.grad[j] += g.at(i, j);
        }
      }
      return;
    }
    case Op::kRowCenter: {
      Node& nb = at(node.b);
      if (wa) {
        for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
      }
      if (nb.needs_grad) {
        for (std::size_t i = 0; i < g.rows(); ++i) {
          for (std::size_t j = 0; j < g.cols(); ++j) nb.grad[i] -= g.at(i, j);
        }
      }
      return;
    }
    case Op::kRelu: {
      if (wa) {
        for (std::size_t i = 0; i < g.numel(); ++i) {
          if (A[i] > 0.0) ga[i] += g[i];
        }
      }
      return;
    }
    case Op::kLog: {
      if (wa) {
        for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] / A[i];
      }
      return;
    }
    case Op::kLogClamped: {
      if (wa) {
        for (std::size_t i = 0; i < g.numel(); ++i) {
          if (A[i] >= kLogFloor) ga[i] += g[i] / A[i];
        }
      }
      return;
    }
    case Op::kExp: {
      if (wa) {
        for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * node.value[i];
      }
      return;
    }
    case Op::kSqrt: {
      if (wa) {
        for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * 0.5 / node.value[i];
      }
      return;
    }
    case Op::kAddScalar: {
      if (wa) {
        for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
      }
      return;
    }
    case Op::kMulScalar: {
      if (wa) {
        for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * node.scalar;
      }
      return;
    }
    case Op::kRowSoftmax: {
      if (wa) {
        const Tensor& s = node.value;
        for (std::size_t i = 0; i < s.rows(); ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < s.cols(); ++j) dot += g.at(i, j) * s.at(i, j);
          for (std::size_t j = 0; j < s.cols(); ++j) {
            ga.at(i, j) += s.at(i, j) * (g.at(i, j) - dot);
          }
        }
      }
      return;
    }
    case Op::kRowLogSumExp: {
      if (wa) {
        for (std::size_t i = 0; i < A.rows(); ++i) {
          const double lse = node.value[i];
          for (std::size_t j = 0; j < A.cols(); ++j) {
            ga.at(i, j) += g[i] * std::exp(A.at(i, j) - lse);
          }
        }
      }
      return;
    }
    case Op::kGather: {
      if (wa) {
        for (std::size_t i = 0; i < A.rows(); ++i) {
          ga.at(i, static_cast<std::size_t>(node.index[i])) += g[i];
        }
      }
      return;
    }
    case Op::kRowSum: {
      if (wa) {
        for (std::size_t i = 0; i < A.rows(); ++i) {
          for (std::size_t j = 0; j < A.cols(); ++j) ga.at(i, j) += g[i];
        }
      }
      return;
    }
    case Op::kSumAll: {
      if (wa) {
        for (std::size_t i = 0; i < A.numel(); ++i) ga[i] += g[0];
      }
      return;
    }
    case Op::kMeanAll: {
      if (wa) {
        const double s = g[0] / static_cast<double>(A.numel());
        for (std::size_t i = 0; i < A.numel(); ++i) ga[i] += s;
      }
      return;
    }
  }
}

void Graph::backward(NodeId root) {
  Node& r = at(root);
  if (r.value.numel() != 1) {
    throw contract_error("backward: root must be scalar, got shape " + r.value.shape_str());
  }
  for (Node& n : nodes_) {
    if (n.needs_grad) {
      if (n.grad.numel() != n.value.numel() || !n.grad.same_shape(n.value)) {
        n.grad = Tensor::zeros(n.value.shape());
      } else {
        std::fill(n.grad.vec().begin(), n.grad.vec().end(), 0.0);
      }
    }
  }
  if (!r.needs_grad) return;  // no trainable leaf feeds the root
  r.grad[0] = 1.0;
  for (std::size_t i = root + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    if (!n.needs_grad || n.op == Op::kLeaf) continue;
    if (!n.grad.all_finite()) {
      throw numeric_error(std::string("non-finite gradient at op '") + op_name(n.op) +
                          "' (node " + std::to_string(i) + ")");
    }
    // Nodes off the root's path carry an exactly-zero gradient; skipping
    // them keeps unrelated subgraphs bit-inert.
    bool all_zero = true;
    for (std::size_t j = 0; j < n.grad.numel() && all_zero; ++j) {
      all_zero = n.grad[j] == 0.0;
    }
    if (all_zero) continue;
    backprop_node(n);
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (n.trainable && !n.grad.all_finite()) {
      throw numeric_error("non-finite gradient at leaf (node " + std::to_string(i) + ")");
    }
  }
}

std::map<NodeId, Tensor> Graph::evaluate_with_gradients(NodeId root) {
  backward(root);
  std::map<NodeId, Tensor> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (!n.trainable) continue;
    out.emplace(i, n.grad.numel() ? n.grad : Tensor::zeros(n.value.shape()));
  }
  return out;
}

double Graph::finite_difference_check(NodeId root, NodeId leaf, double step) {
  if (step <= 0.0) throw contract_error("finite_difference_check: step must be > 0");
  Node& l = at(leaf);
  if (l.op != Op::kLeaf) throw contract_error("finite_difference_check: node is not a leaf");
  if (at(root).value.numel() != 1) {
    throw contract_error("finite_difference_check: root must be scalar");
  }
  backward(root);
  const Tensor analytic = l.needs_grad && l.grad.numel()
                              ? l.grad
                              : Tensor::zeros(l.value.shape());
  Tensor saved = l.value;
  double worst = 0.0;
  for (std::size_t i = 0; i < saved.numel(); ++i) {
    l.value[i] = saved[i] + step;
    recompute_forward();
    const double fp = at(root).value[0];
    l.value[i] = saved[i] - step;
    recompute_forward();
    const double fm = at(root).value[0];
    l.value[i] = saved[i];
    const double central = (fp - fm) / (2.0 * step);
    const double rel =
        std::abs(analytic[i] - central) / (std::abs(analytic[i]) + std::abs(central) + 1e-12);
    worst = std::max(worst, rel);
  }
  l.value = saved;
  recompute_forward();
  return worst;
}

}  // namespace drda
