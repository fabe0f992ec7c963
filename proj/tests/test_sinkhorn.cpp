#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "drda/error.hpp"
#include "drda/sinkhorn.hpp"

using namespace drda;

namespace {

// Brute-force LP oracle: with uniform marginals the optimum over the
// Birkhoff polytope is attained at a vertex, i.e. a permutation scaled by
// 1/n. Enumerates all permutations.
double lp_optimum_uniform(const Tensor& cost) {
  const std::size_t n = cost.rows();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += cost.at(i, perm[i]);
    best = std::min(best, total / static_cast<double>(n));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

double transport_cost(const TransportPlan& plan, const Tensor& cost) {
  double t = 0.0;
  for (std::size_t i = 0; i < cost.numel(); ++i) t += plan.coupling[i] * cost[i];
  return t;
}

double plan_entropy(const TransportPlan& plan) {
  double h = 0.0;
  for (std::size_t i = 0; i < plan.coupling.numel(); ++i) {
    const double p = plan.coupling[i];
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

Tensor uniform_vec(std::size_t n) { return Tensor::full({n}, 1.0 / static_cast<double>(n)); }

double marginal_residual(const TransportPlan& plan, const Tensor& mu, const Tensor& nu) {
  double r = 0.0;
  for (std::size_t i = 0; i < mu.numel(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < nu.numel(); ++j) s += plan.coupling.at(i, j);
    r += std::abs(s - mu[i]);
  }
  for (std::size_t j = 0; j < nu.numel(); ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < mu.numel(); ++i) s += plan.coupling.at(i, j);
    r += std::abs(s - nu[j]);
  }
  return r;
}

}  // namespace

TEST_CASE("1x1 coupling is forced by the marginals") {
  const TransportPlan plan = sinkhorn_plan(Tensor({1, 1}, {7.3}), Tensor({1}, {1.0}),
                                           Tensor({1}, {1.0}), 0.5, 100, 1e-10);
  CHECK(plan.coupling.at(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(plan.converged);
}

TEST_CASE("entropy-dominated limit approaches the product measure") {
  const Tensor cost({2, 2}, {0.0, 1.0, 1.0, 0.0});
  const TransportPlan plan = sinkhorn_plan(cost, uniform_vec(2), uniform_vec(2), 1e4, 500, 1e-12);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(plan.coupling[i] == doctest::Approx(0.25).epsilon(1e-4));
  }
}

TEST_CASE("small-epsilon 2x2 instance matches the LP vertex") {
  const Tensor cost({2, 2}, {0.0, 1.0, 1.0, 0.0});
  const TransportPlan plan =
      sinkhorn_plan(cost, uniform_vec(2), uniform_vec(2), 1e-3, 5000, 1e-10);
  CHECK(plan.coupling.at(0, 0) == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(plan.coupling.at(0, 1) == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(plan.coupling.at(1, 1) == doctest::Approx(0.5).epsilon(1e-6));
  const double lp = lp_optimum_uniform(cost);
  CHECK(lp == 0.0);
  CHECK(std::abs(transport_cost(plan, cost) - lp) < 1e-2);
}

TEST_CASE("entropic cost equals the direct re-evaluation") {
  const Tensor cost({2, 2}, {0.0, 1.0, 1.0, 0.0});
  const TransportPlan plan =
      sinkhorn_plan(cost, uniform_vec(2), uniform_vec(2), 1e-3, 5000, 1e-10);
  // independent evaluation of <pi,C> + eps * KL(pi || mu x nu)
  double direct = 0.0;
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      const double p = plan.coupling.at(i, j);
      direct += p * cost.at(i, j);
      if (p > 0.0) direct += plan.epsilon * p * std::log(p / 0.25);
    }
  }
  CHECK(entropic_cost(plan, cost) == doctest::Approx(direct).epsilon(1e-10));
}

TEST_CASE("epsilon 0 reduces the cost to the inner product") {
  TransportPlan plan;
  plan.coupling = Tensor({2, 2}, {0.4, 0.1, 0.2, 0.3});
  plan.row_marginal = Tensor({2}, {0.5, 0.5});
  plan.col_marginal = Tensor({2}, {0.6, 0.4});
  plan.epsilon = 0.0;
  const Tensor cost({2, 2}, {1.0, 2.0, 3.0, 4.0});
  CHECK(entropic_cost(plan, cost) ==
        doctest::Approx(0.4 + 0.2 + 0.6 + 1.2).epsilon(1e-12));
}

TEST_CASE("KL term vanishes exactly on the product coupling") {
  TransportPlan plan;
  plan.row_marginal = Tensor({2}, {0.3, 0.7});
  plan.col_marginal = Tensor({3}, {0.5, 0.25, 0.25});
  plan.coupling = Tensor({2, 3});
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      plan.coupling.at(i, j) = plan.row_marginal[i] * plan.col_marginal[j];
    }
  }
  plan.epsilon = 0.7;
  CHECK(plan_kl_to_product(plan) == doctest::Approx(0.0).epsilon(1e-15));
  double inner = 0.0;
  const Tensor cost({2, 3}, {1, 2, 3, 4, 5, 6});
  for (std::size_t i = 0; i < 6; ++i) inner += plan.coupling[i] * cost[i];
  CHECK(entropic_cost(plan, cost) == doctest::Approx(inner).epsilon(1e-12));
}

TEST_CASE("soft assignments") {
  TransportPlan plan;
  plan.coupling = Tensor({2, 2}, {0.25, 0.25, 0.25, 0.25});
  CHECK(soft_assignments(plan).vec() == std::vector<double>{0.5, 0.5, 0.5, 0.5});

  plan.coupling = Tensor({2, 2}, {0.5, 0.0, 0.0, 0.5});
  const Tensor q = soft_assignments(plan);
  CHECK(q.at(0, 0) == 1.0);
  CHECK(q.at(1, 1) == 1.0);

  std::mt19937_64 rng(5);
  plan.coupling = random_uniform({3, 2}, 0.01, 1.0, rng);
  const Tensor qr = soft_assignments(plan);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(qr.at(i, 0) + qr.at(i, 1) == doctest::Approx(1.0).epsilon(1e-12));
  }

  plan.coupling = Tensor({2, 2}, {0.0, 0.0, 0.5, 0.5});
  CHECK_THROWS_AS(soft_assignments(plan), numeric_error);
}

TEST_CASE("mass mismatch and negative inputs are rejected") {
  const Tensor cost({2, 2}, {0.0, 1.0, 1.0, 0.0});
  CHECK_THROWS_AS(
      sinkhorn_plan(cost, Tensor({2}, {0.6, 0.5}), uniform_vec(2), 0.1, 100, 1e-6),
      contract_error);
  CHECK_THROWS_AS(
      sinkhorn_plan(cost, Tensor({2}, {-0.5, 1.5}), uniform_vec(2), 0.1, 100, 1e-6),
      contract_error);
  CHECK_THROWS_AS(sinkhorn_plan(cost, uniform_vec(2), uniform_vec(2), 0.0, 100, 1e-6),
                  contract_error);
}

TEST_CASE("non-convergence is flagged, not fatal") {
  const Tensor cost({2, 2}, {0.0, 2.0, 3.0, 1.0});
  const Tensor mu({2}, {0.7, 0.3});
  const Tensor nu({2}, {0.4, 0.6});
  const TransportPlan plan = sinkhorn_plan(cost, mu, nu, 0.01, 1, 1e-14);
  CHECK_FALSE(plan.converged);
  CHECK(plan.iterations_used == 1);
}

TEST_CASE("marginal feasibility on random instances up to 64x10") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 8; ++trial) {
    const std::size_t n = 8 + static_cast<std::size_t>(rng() % 57);
    const std::size_t k = 2 + static_cast<std::size_t>(rng() % 9);
    const Tensor cost = random_uniform({n, k}, 0.0, 3.0, rng);
    const TransportPlan plan =
        sinkhorn_plan(cost, uniform_vec(n), uniform_vec(k), 0.05, 20000, 1e-7);
    CHECK(plan.converged);
    CHECK(marginal_residual(plan, uniform_vec(n), uniform_vec(k)) < 1e-6);
  }
}

TEST_CASE("LP consistency on small integer-cost instances") {
  std::mt19937_64 rng(7);
  // all 2x2 {0..3} cost matrices, then random 4x4 draws
  for (int a = 0; a < 4; ++a) {
    for (int b = 0; b < 4; ++b) {
      for (int c = 0; c < 4; ++c) {
        for (int d = 0; d < 4; ++d) {
          const Tensor cost({2, 2}, {double(a), double(b), double(c), double(d)});
          const TransportPlan plan =
              sinkhorn_plan(cost, uniform_vec(2), uniform_vec(2), 1e-3, 20000, 1e-10);
          CHECK(std::abs(transport_cost(plan, cost) - lp_optimum_uniform(cost)) < 1e-2);
        }
      }
    }
  }
  for (int trial = 0; trial < 40; ++trial) {
    Tensor cost({4, 4});
    for (std::size_t i = 0; i < 16; ++i) cost[i] = static_cast<double>(rng() % 4);
    const TransportPlan plan =
        sinkhorn_plan(cost, uniform_vec(4), uniform_vec(4), 1e-3, 40000, 1e-10);
    CHECK(std::abs(transport_cost(plan, cost) - lp_optimum_uniform(cost)) < 1e-2);
  }
}

TEST_CASE("entropy is monotone in epsilon") {
  std::mt19937_64 rng(11);
  const Tensor cost = random_uniform({6, 4}, 0.0, 2.0, rng);
  double prev = -1.0;
  for (double eps : {0.01, 0.05, 0.1, 0.5, 1.0, 5.0}) {
    const TransportPlan plan =
        sinkhorn_plan(cost, uniform_vec(6), uniform_vec(4), eps, 50000, 1e-10);
    const double h = plan_entropy(plan);
    CHECK(h >= prev - 1e-9);
    prev = h;
  }
}

TEST_CASE("row permutation symmetry") {
  std::mt19937_64 rng(13);
  const std::size_t n = 5, k = 3;
  const Tensor cost = random_uniform({n, k}, 0.0, 2.0, rng);
  Tensor mu({n}, {0.1, 0.3, 0.2, 0.25, 0.15});
  const Tensor nu = uniform_vec(k);
  const TransportPlan base = sinkhorn_plan(cost, mu, nu, 0.1, 20000, 1e-10);

  const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
  Tensor pcost({n, k});
  Tensor pmu({n});
  for (std::size_t i = 0; i < n; ++i) {
    pmu[i] = mu[perm[i]];
    for (std::size_t j = 0; j < k; ++j) pcost.at(i, j) = cost.at(perm[i], j);
  }
  const TransportPlan permuted = sinkhorn_plan(pcost, pmu, nu, 0.1, 20000, 1e-10);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      CHECK(permuted.coupling.at(i, j) ==
            doctest::Approx(base.coupling.at(perm[i], j)).epsilon(1e-10));
    }
  }
}

TEST_CASE("entropic cost node is differentiable w.r.t. the cost only") {
  std::mt19937_64 rng(17);
  const Tensor cost_values = random_uniform({3, 2}, 0.1, 2.0, rng);
  // moderate epsilon keeps every coupling entry large enough for the
  // central-difference probe to resolve
  const TransportPlan plan =
      sinkhorn_plan(cost_values, uniform_vec(3), uniform_vec(2), 0.5, 10000, 1e-10);
  Graph g;
  const NodeId cost = g.param(cost_values);
  const NodeId loss = entropic_cost_node(g, cost, plan);
  CHECK(g.value(loss).item() == doctest::Approx(entropic_cost(plan, cost_values)).epsilon(1e-12));
  // d loss / d C_ij = pi_ij exactly (plan held fixed)
  g.backward(loss);
  for (std::size_t i = 0; i < plan.coupling.numel(); ++i) {
    CHECK(g.grad(cost)[i] == doctest::Approx(plan.coupling[i]).epsilon(1e-12));
  }
  CHECK(g.finite_difference_check(loss, cost, 1e-5) < 1e-6);
}

TEST_CASE("zero-mass marginal entries produce empty rows") {
  const Tensor cost({3, 2}, {0.0, 1.0, 1.0, 0.0, 0.5, 0.5});
  const Tensor mu({3}, {0.5, 0.0, 0.5});
  const TransportPlan plan = sinkhorn_plan(cost, mu, uniform_vec(2), 0.1, 10000, 1e-10);
  CHECK(plan.coupling.at(1, 0) == 0.0);
  CHECK(plan.coupling.at(1, 1) == 0.0);
  CHECK(plan.converged);
}
