#include "drda/sinkhorn.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include "drda/error.hpp"

namespace drda {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// logsumexp over a strided slice; -inf entries carry zero weight.
double logsumexp(const std::vector<double>& terms) {
  double mx = kNegInf;
  for (double t : terms) mx = std::max(mx, t);
  if (mx == kNegInf) return kNegInf;
  double s = 0.0;
  for (double t : terms) s += std::exp(t - mx);
  return mx + std::log(s);
}

}  // namespace

TransportPlan sinkhorn_plan(const Tensor& cost, const Tensor& mu, const Tensor& nu,
                            double epsilon, int max_iter, double tol) {
  if (cost.rank() != 2) throw contract_error("sinkhorn_plan: cost must be a matrix");
  const std::size_t n = cost.rows();
  const std::size_t k = cost.cols();
  if (mu.numel() != n || nu.numel() != k) {
    throw contract_error("sinkhorn_plan: marginal sizes do not match cost " + cost.shape_str());
  }
  if (epsilon <= 0.0) throw contract_error("sinkhorn_plan: epsilon must be > 0");
  if (max_iter < 1) throw contract_error("sinkhorn_plan: max_iter must be >= 1");
  require_finite(cost, "sinkhorn_plan cost");
  double mass_mu = 0.0, mass_nu = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (mu[i] < 0.0) throw contract_error("sinkhorn_plan: negative mu entry");
    mass_mu += mu[i];
  }
  for (std::size_t j = 0; j < k; ++j) {
    if (nu[j] < 0.0) throw contract_error("sinkhorn_plan: negative nu entry");
    mass_nu += nu[j];
  }
  if (mass_mu <= 0.0) throw contract_error("sinkhorn_plan: total mass must be positive");
  if (std::abs(mass_mu - mass_nu) > 1e-9) {
    throw contract_error("sinkhorn_plan: mass mismatch between mu and nu");
  }

  std::vector<double> log_mu(n), log_nu(k);
  for (std::size_t i = 0; i < n; ++i) log_mu[i] = mu[i] > 0.0 ? std::log(mu[i]) : kNegInf;
  for (std::size_t j = 0; j < k; ++j) log_nu[j] = nu[j] > 0.0 ? std::log(nu[j]) : kNegInf;

  std::vector<double> u(n, 0.0), v(k, 0.0);
  std::vector<double> terms;

  TransportPlan plan;
  plan.coupling = Tensor({n, k});
  plan.row_marginal = Tensor({n});
  plan.col_marginal = Tensor({k});
  for (std::size_t i = 0; i < n; ++i) plan.row_marginal[i] = mu[i];
  for (std::size_t j = 0; j < k; ++j) plan.col_marginal[j] = nu[j];
  plan.epsilon = epsilon;

  auto fill_coupling = [&]() {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        const double e = log_mu[i] + log_nu[j] + u[i] + v[j] - cost.at(i, j) / epsilon;
        plan.coupling.at(i, j) = e == kNegInf ? 0.0 : std::exp(e);
      }
    }
  };

  auto residual = [&]() {
    double r = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < k; ++j) s += plan.coupling.at(i, j);
      r += std::abs(s - mu[i]);
    }
    for (std::size_t j = 0; j < k; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += plan.coupling.at(i, j);
      r += std::abs(s - nu[j]);
    }
    return r;
  };

  for (int it = 1; it <= max_iter; ++it) {
    terms.resize(k);
    for (std::size_t i = 0; i < n; ++i) {
      if (mu[i] == 0.0) continue;
      for (std::size_t j = 0; j < k; ++j) terms[j] = log_nu[j] + v[j] - cost.at(i, j) / epsilon;
      u[i] = -logsumexp(terms);
    }
    terms.resize(n);
    for (std::size_t j = 0; j < k; ++j) {
      if (nu[j] == 0.0) continue;
      for (std::size_t i = 0; i < n; ++i) terms[i] = log_mu[i] + u[i] - cost.at(i, j) / epsilon;
      v[j] = -logsumexp(terms);
    }
    plan.iterations_used = it;
    fill_coupling();
    plan.marginal_residual = residual();
    if (plan.marginal_residual < tol) {
      plan.converged = true;
      break;
    }
  }
  require_finite(plan.coupling, "sinkhorn_plan coupling");
  return plan;
}

double plan_kl_to_product(const TransportPlan& plan) {
  const Tensor& pi = plan.coupling;
  double kl = 0.0;
  for (std::size_t i = 0; i < pi.rows(); ++i) {
    for (std::size_t j = 0; j < pi.cols(); ++j) {
      const double p = pi.at(i, j);
      if (p <= 0.0) continue;
      const double ref = plan.row_marginal[i] * plan.col_marginal[j];
      kl += p * (std::log(p) - std::log(ref));
    }
  }
  return kl;
}

double entropic_cost(const TransportPlan& plan, const Tensor& cost) {
  const Tensor& pi = plan.coupling;
  if (cost.rank() != 2 || !cost.same_shape(pi)) {
    throw contract_error("entropic_cost: cost shape " + cost.shape_str() +
                         " does not match coupling " + pi.shape_str());
  }
  double transport = 0.0;
  for (std::size_t i = 0; i < pi.numel(); ++i) transport += pi[i] * cost[i];
  return plan.epsilon == 0.0 ? transport : transport + plan.epsilon * plan_kl_to_product(plan);
}

NodeId entropic_cost_node(Graph& g, NodeId cost, const TransportPlan& plan) {
  if (!g.value(cost).same_shape(plan.coupling)) {
    throw contract_error("entropic_cost_node: cost shape does not match coupling");
  }
  const NodeId pi = g.constant(plan.coupling);
  const NodeId transport = g.sum_all(g.mul(cost, pi));
  const double kl_term = plan.epsilon == 0.0 ? 0.0 : plan.epsilon * plan_kl_to_product(plan);
  return g.add_scalar(transport, kl_term);
}

Tensor soft_assignments(const TransportPlan& plan) {
  const Tensor& pi = plan.coupling;
  Tensor q(pi.shape());
  for (std::size_t i = 0; i < pi.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < pi.cols(); ++j) s += pi.at(i, j);
    if (s <= 0.0) {
      throw numeric_error("soft_assignments: zero coupling row " + std::to_string(i) +
                          " (unreachable sample)");
    }
    for (std::size_t j = 0; j < pi.cols(); ++j) q.at(i, j) = pi.at(i, j) / s;
  }
  return q;
}

}  // namespace drda
