#pragma once

#include "drda/graph.hpp"
#include "drda/tensor.hpp"

namespace drda {

// Entropic optimal-transport coupling between n samples and k anchors.
struct TransportPlan {
  Tensor coupling;      // n x k, nonnegative
  Tensor row_marginal;  // n
  Tensor col_marginal;  // k
  double epsilon = 0.0;
  int iterations_used = 0;
  bool converged = false;
  double marginal_residual = 0.0;
};

// Log-domain Sinkhorn with dual potentials. mu and nu must be nonnegative
// with equal positive total mass (within 1e-9). Stops when the L1 marginal
// residual drops below tol; otherwise returns the max_iter plan with
// converged = false.
TransportPlan sinkhorn_plan(const Tensor& cost, const Tensor& mu, const Tensor& nu,
                            double epsilon, int max_iter, double tol);

// KL(pi || mu (x) nu) over the plan's support.
double plan_kl_to_product(const TransportPlan& plan);

// <pi, cost> + epsilon * KL(pi || mu (x) nu), with epsilon from the plan.
double entropic_cost(const TransportPlan& plan, const Tensor& cost);

// Same value as a graph node, differentiable w.r.t. the cost entries with
// the plan held fixed.
NodeId entropic_cost_node(Graph& g, NodeId cost, const TransportPlan& plan);

// Row-normalized coupling; errors on a zero row (unreachable sample).
Tensor soft_assignments(const TransportPlan& plan);

}  // namespace drda
