#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "drda/error.hpp"
#include "drda/radial.hpp"
#include "drda/stiefel.hpp"

using namespace drda;

namespace {

Tensor rotate_rows(const Tensor& rows, const Tensor& rotation) {
  Tensor out({rows.rows(), rows.cols()});
  for (std::size_t i = 0; i < rows.rows(); ++i) {
    for (std::size_t j = 0; j < rows.cols(); ++j) {
      double s = 0.0;
      for (std::size_t l = 0; l < rows.cols(); ++l) s += rows.at(i, l) * rotation.at(l, j);
      out.at(i, j) = s;
    }
  }
  return out;
}

Tensor random_rotation(std::size_t d, std::mt19937_64& rng) {
  return qr_orthonormalize(random_uniform({d, d}, -1.0, 1.0, rng));
}

RadialStructure structure_of(const Tensor& features, const std::vector<int>& labels,
                             std::size_t k, DomainTag tag) {
  RadialStructure st = RadialStructure::empty(k, features.cols(), tag);
  const LocalAnchors la = local_anchors(features, labels, k);
  st.global_anchor = global_anchor(features);
  st.local_anchors = la.anchors;
  st.counts = la.counts;
  return st;
}

}  // namespace

TEST_CASE("global anchor is the row mean") {
  CHECK(global_anchor(Tensor({2, 2}, {0, 0, 2, 2})).vec() == std::vector<double>{1.0, 1.0});
  CHECK(global_anchor(Tensor({1, 3}, {4, 5, 6})).vec() == std::vector<double>{4.0, 5.0, 6.0});
  std::mt19937_64 rng(1);
  const Tensor features = random_uniform({100, 3}, -2.0, 2.0, rng);
  const Tensor mean = global_anchor(features);
  for (std::size_t j = 0; j < 3; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < 100; ++i) s += features.at(i, j);
    CHECK(mean[j] == doctest::Approx(s / 100.0).epsilon(1e-12));
  }
}

TEST_CASE("local anchors are per-class means with missing flags") {
  const Tensor features({3, 2}, {0, 0, 2, 0, 5, 5});
  const LocalAnchors la = local_anchors(features, {0, 0, 1}, 2);
  CHECK(la.anchors.at(0, 0) == 1.0);
  CHECK(la.anchors.at(0, 1) == 0.0);
  CHECK(la.anchors.at(1, 0) == 5.0);
  CHECK(la.counts.vec() == std::vector<double>{2.0, 1.0});
  CHECK(la.present == std::vector<char>{1, 1});

  const LocalAnchors single = local_anchors(features, {0, 0, 0}, 3);
  CHECK(single.present == std::vector<char>{1, 0, 0});

  CHECK_THROWS_AS(local_anchors(features, {0, 0, 2}, 2), contract_error);
}

TEST_CASE("local anchors match a brute-force grouping oracle") {
  std::mt19937_64 rng(2);
  const std::size_t n = 60, d = 4, k = 5;
  const Tensor features = random_uniform({n, d}, -3.0, 3.0, rng);
  std::vector<int> labels(n);
  for (auto& l : labels) l = static_cast<int>(rng() % k);
  const LocalAnchors la = local_anchors(features, labels, k);
  for (std::size_t c = 0; c < k; ++c) {
    std::vector<double> sum(d, 0.0);
    double count = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (labels[i] != static_cast<int>(c)) continue;
      count += 1.0;
      for (std::size_t j = 0; j < d; ++j) sum[j] += features.at(i, j);
    }
    CHECK(la.counts[c] == count);
    if (count > 0) {
      for (std::size_t j = 0; j < d; ++j) {
        CHECK(la.anchors.at(c, j) == doctest::Approx(sum[j] / count).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("ema update") {
  RadialStructure prev = RadialStructure::empty(2, 2, DomainTag::kSource);
  prev.global_anchor = Tensor({2}, {0.0, 0.0});
  prev.local_anchors = Tensor({2, 2}, {0.0, 0.0, 4.0, 4.0});
  prev.counts = Tensor({2}, {3.0, 3.0});

  const Tensor batch_anchors({2, 2}, {2.0, 2.0, 0.0, 0.0});
  const Tensor batch_counts({2}, {2.0, 0.0});

  SUBCASE("eta 1 replaces present classes") {
    const RadialStructure next = ema_update(prev, batch_anchors, batch_counts, 1.0);
    CHECK(next.local_anchors.at(0, 0) == 2.0);
    CHECK(next.local_anchors.at(1, 0) == 4.0);  // absent class untouched
    CHECK(next.counts.vec() == std::vector<double>{5.0, 3.0});
  }
  SUBCASE("eta 0 is a no-op on anchors") {
    const RadialStructure next = ema_update(prev, batch_anchors, batch_counts, 0.0);
    CHECK(next.local_anchors.vec() == prev.local_anchors.vec());
    CHECK(next.global_anchor.vec() == prev.global_anchor.vec());
  }
  SUBCASE("eta 0.5 interpolates") {
    const RadialStructure next = ema_update(prev, batch_anchors, batch_counts, 0.5);
    CHECK(next.local_anchors.at(0, 0) == doctest::Approx(1.0));
    CHECK(next.local_anchors.at(0, 1) == doctest::Approx(1.0));
    // global moves toward the count-weighted batch mean (= class-0 anchor)
    CHECK(next.global_anchor[0] == doctest::Approx(1.0));
  }
  SUBCASE("eta outside [0,1] rejected") {
    CHECK_THROWS_AS(ema_update(prev, batch_anchors, batch_counts, 1.5), contract_error);
  }
  SUBCASE("first observation adopts the batch anchor") {
    RadialStructure fresh = RadialStructure::empty(2, 2, DomainTag::kSource);
    fresh.counts = Tensor({2}, {0.0, 5.0});
    fresh.local_anchors = Tensor({2, 2}, {0.0, 0.0, 9.0, 9.0});
    const RadialStructure next = ema_update(fresh, batch_anchors, batch_counts, 0.25);
    CHECK(next.local_anchors.at(0, 0) == 2.0);
  }
}

TEST_CASE("ema with eta=1 on a full-coverage batch reproduces the batch anchors") {
  std::mt19937_64 rng(3);
  const std::size_t n = 40, d = 3, k = 4;
  const Tensor features = random_uniform({n, d}, -2.0, 2.0, rng);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % k);
  const LocalAnchors la = local_anchors(features, labels, k);

  RadialStructure prev = RadialStructure::empty(k, d, DomainTag::kSource);
  prev.counts = Tensor::full({k}, 1.0);
  prev.local_anchors = random_uniform({k, d}, -5.0, 5.0, rng);
  const RadialStructure next = ema_update(prev, la.anchors, la.counts, 1.0);
  for (std::size_t i = 0; i < k * d; ++i) {
    CHECK(next.local_anchors[i] == doctest::Approx(la.anchors[i]).epsilon(1e-14));
  }
}

TEST_CASE("egocentric vectors") {
  RadialStructure st = RadialStructure::empty(2, 2, DomainTag::kSource);
  st.global_anchor = Tensor({2}, {1.0, 1.0});
  st.local_anchors = Tensor({2, 2}, {1.0, 1.0, 3.0, 0.0});
  st.counts = Tensor({2}, {1.0, 1.0});
  const Tensor v = egocentric(st);
  CHECK(v.at(0, 0) == 0.0);
  CHECK(v.at(0, 1) == 0.0);
  CHECK(v.at(1, 0) == 2.0);
  CHECK(v.at(1, 1) == -1.0);

  // translation of the whole structure cancels
  RadialStructure shifted = st;
  for (std::size_t j = 0; j < 2; ++j) {
    shifted.global_anchor[j] += 10.0;
    shifted.local_anchors.at(0, j) += 10.0;
    shifted.local_anchors.at(1, j) += 10.0;
  }
  CHECK(egocentric(shifted).vec() == v.vec());

  st.counts[1] = 0.0;
  CHECK_THROWS_AS(egocentric(st), contract_error);
}

TEST_CASE("intra distance: frozen oracle values") {
  CHECK(intra_distance(Tensor({2}, {3.0, 4.0}), Tensor({2}, {3.0, 4.0}), 1.0) == 0.0);
  CHECK(intra_distance(Tensor({2}, {1.0, 0.0}), Tensor({2}, {0.0, 1.0}), 1.0) ==
        doctest::Approx(2.0).epsilon(1e-14));
  CHECK(intra_distance(Tensor({2}, {1.0, 0.0}), Tensor({2}, {-1.0, 0.0}), 0.0) ==
        doctest::Approx(2.0).epsilon(1e-14));
  CHECK_THROWS_AS(intra_distance(Tensor({2}, {0.0, 0.0}), Tensor({2}, {1.0, 0.0}), 1.0),
                  contract_error);
}

TEST_CASE("global loss") {
  CHECK(global_loss(Tensor({2}, {1.0, 2.0}), Tensor({2}, {1.0, 2.0})) == 0.0);
  CHECK(global_loss(Tensor({2}, {0.0, 0.0}), Tensor({2}, {3.0, 4.0})) == doctest::Approx(5.0));
  std::mt19937_64 rng(4);
  const Tensor a = random_uniform({6}, -2.0, 2.0, rng);
  const Tensor b = random_uniform({6}, -2.0, 2.0, rng);
  double sq = 0.0;
  for (std::size_t i = 0; i < 6; ++i) sq += (a[i] - b[i]) * (a[i] - b[i]);
  CHECK(global_loss(a, b) == doctest::Approx(std::sqrt(sq)).epsilon(1e-12));
  CHECK_THROWS_AS(global_loss(a, Tensor({3}, {1, 2, 3})), contract_error);
}

TEST_CASE("phi basics") {
  const Tensor v({2, 2}, {1.0, 0.0, 0.0, 1.0});
  CHECK(local_loss_phi(v, v, 1.0) == 0.0);
  CHECK(local_loss_phi(Tensor({1, 2}, {1.0, 0.0}), Tensor({1, 2}, {0.0, 1.0}), 1.0) ==
        doctest::Approx(2.0).epsilon(1e-14));
}

TEST_CASE("phi is invariant under a joint rotation") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t k = 4, d = 3;
    const Tensor vs = random_uniform({k, d}, -2.0, 2.0, rng);
    const Tensor vt = random_uniform({k, d}, -2.0, 2.0, rng);
    const Tensor rot = random_rotation(d, rng);
    const double base = local_loss_phi(vs, vt, 1.0);
    const double rotated = local_loss_phi(rotate_rows(vs, rot), rotate_rows(vt, rot), 1.0);
    CHECK(std::abs(base - rotated) < 1e-10);
  }
}

TEST_CASE("gw fixed plan: zero on identical structures, isometry invariant") {
  std::mt19937_64 rng(6);
  const std::size_t k = 5, d = 3;
  const Tensor vs = random_uniform({k, d}, -2.0, 2.0, rng);
  CHECK(gw_fixed_plan(vs, vs, 1.0) == 0.0);

  const Tensor vt = random_uniform({k, d}, -2.0, 2.0, rng);
  const double base = gw_fixed_plan(vs, vt, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor rs = random_rotation(d, rng);
    const Tensor rt = random_rotation(d, rng);
    const double moved = gw_fixed_plan(rotate_rows(vs, rs), rotate_rows(vt, rt), 1.0);
    CHECK(std::abs(base - moved) < 1e-10);
  }
}

TEST_CASE("gw with angular-only c is scale invariant") {
  const Tensor vs({2, 2}, {1.0, 0.0, 0.0, 1.0});
  const Tensor vt({2, 2}, {2.0, 0.0, 0.0, 2.0});
  CHECK(gw_fixed_plan(vs, vt, 0.0) == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("structure phi skips missing classes and renormalizes") {
  RadialStructure s = RadialStructure::empty(3, 2, DomainTag::kSource);
  s.global_anchor = Tensor({2}, {0.0, 0.0});
  s.local_anchors = Tensor({3, 2}, {1, 0, 0, 1, 9, 9});
  s.counts = Tensor({3}, {1.0, 1.0, 0.0});
  RadialStructure t = RadialStructure::empty(3, 2, DomainTag::kTarget);
  t.global_anchor = Tensor({2}, {0.0, 0.0});
  t.local_anchors = Tensor({3, 2}, {0, 1, 0, 1, 0, 0});
  t.counts = Tensor({3}, {1.0, 1.0, 0.0});
  const IntraOpts opts{1.0, true, 0.0};
  // class 2 missing in both; mean over classes 0 and 1
  const double expect =
      0.5 * (intra_distance(Tensor({2}, {1.0, 0.0}), Tensor({2}, {0.0, 1.0}), 1.0) + 0.0);
  CHECK(structure_phi(s, t, opts) == doctest::Approx(expect).epsilon(1e-14));

  t.counts = Tensor({3}, {0.0, 0.0, 0.0});
  CHECK_THROWS_AS(structure_phi(s, t, opts), contract_error);
}

TEST_CASE("full pipeline is invariant to translating one domain") {
  std::mt19937_64 rng(7);
  const std::size_t n = 50, d = 3, k = 4;
  const Tensor features = random_uniform({n, d}, -2.0, 2.0, rng);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % k);
  Tensor shifted = features;
  for (std::size_t i = 0; i < n; ++i) {
    shifted.at(i, 0) += 7.0;
    shifted.at(i, 2) -= 3.0;
  }
  const RadialStructure a = structure_of(features, labels, k, DomainTag::kSource);
  const RadialStructure b = structure_of(shifted, labels, k, DomainTag::kTarget);
  CHECK(global_loss(a.global_anchor, b.global_anchor) > 1.0);
  for (std::size_t i = 0; i < k * d; ++i) {
    CHECK(std::abs(egocentric(a)[i] - egocentric(b)[i]) < 1e-10);
  }
  const IntraOpts opts{1.0, true, 0.0};
  CHECK(structure_phi(a, b, opts) < 1e-10);
  CHECK(gw_fixed_plan(egocentric(a), egocentric(b), 1.0) < 1e-10);
}

TEST_CASE("structure CSV snapshot") {
  RadialStructure s = RadialStructure::empty(2, 2, DomainTag::kSource);
  s.global_anchor = Tensor({2}, {0.5, -0.5});
  s.local_anchors = Tensor({2, 2}, {1, 2, 3, 4});
  s.counts = Tensor({2}, {2.0, 0.0});
  std::ostringstream out;
  write_structure_csv(out, {s});
  const std::string text = out.str();
  CHECK(text.find("domain,class_id,x_0,x_1\n") == 0);
  CHECK(text.find("source,-1,0.5,-0.5") != std::string::npos);
  CHECK(text.find("source,0,1,2") != std::string::npos);
  // missing class skipped
  CHECK(text.find("source,1,") == std::string::npos);
}

TEST_CASE("graph builders agree with value-level results and pass FD checks") {
  std::mt19937_64 rng(8);
  const std::size_t n = 12, d = 3, k = 3;
  const Tensor features = random_uniform({n, d}, -2.0, 2.0, rng);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % k);

  RadialStructure prev = RadialStructure::empty(k, d, DomainTag::kSource);
  prev.counts = Tensor::full({k}, 4.0);
  prev.local_anchors = random_uniform({k, d}, -1.0, 1.0, rng);
  prev.global_anchor = random_uniform({d}, -1.0, 1.0, rng);

  Graph g;
  const NodeId feat = g.param(features);
  const AnchorNodes anch = ema_anchor_nodes(g, feat, labels, prev, 0.6);

  // node values equal the value-level EMA update
  const LocalAnchors batch = local_anchors(features, labels, k);
  const RadialStructure expect = ema_update(prev, batch.anchors, batch.counts, 0.6);
  for (std::size_t i = 0; i < k * d; ++i) {
    CHECK(g.value(anch.local)[i] == doctest::Approx(expect.local_anchors[i]).epsilon(1e-12));
    CHECK(anch.updated.local_anchors[i] == g.value(anch.local)[i]);
  }
  for (std::size_t j = 0; j < d; ++j) {
    CHECK(g.value(anch.global)[j] == doctest::Approx(expect.global_anchor[j]).epsilon(1e-12));
  }

  // differentiable pipeline: global loss + phi + OT cost against a fixed
  // second structure
  const Tensor other_anchors = random_uniform({k, d}, -1.0, 1.0, rng);
  const NodeId other_global = g.constant(random_uniform({1, d}, -0.5, 0.5, rng));
  const NodeId other_local = g.constant(other_anchors);
  std::vector<int> all_classes = {0, 1, 2};
  const NodeId vs = egocentric_node(g, anch.local, anch.global, all_classes, k);
  const NodeId vt = egocentric_node(g, other_local, other_global, all_classes, k);
  const IntraOpts opts{1.0, true, 1e-8};
  const NodeId phi = phi_node(g, vs, vt, opts);
  CHECK(g.value(phi).item() ==
        doctest::Approx(local_loss_phi(g.value(vs), g.value(vt), opts)).epsilon(1e-12));

  const NodeId lg = global_loss_node(g, anch.global, other_global);
  const Tensor gt = g.value(anch.global);
  Tensor gvec({d});
  for (std::size_t j = 0; j < d; ++j) gvec[j] = gt[j];
  Tensor ovec({d});
  for (std::size_t j = 0; j < d; ++j) ovec[j] = g.value(other_global)[j];
  CHECK(g.value(lg).item() == doctest::Approx(global_loss(gvec, ovec)).epsilon(1e-12));

  const NodeId cost = squared_distance_cost_node(g, feat, other_anchors);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < k; ++c) {
      double sq = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = features.at(i, j) - other_anchors.at(c, j);
        sq += diff * diff;
      }
      CHECK(g.value(cost).at(i, c) == doctest::Approx(sq).epsilon(1e-12));
    }
  }

  const NodeId root =
      g.add(g.add(phi, lg), g.mul_scalar(g.mean_all(cost), 0.25));
  CHECK(g.finite_difference_check(root, feat, 1e-6) < 1e-4);
}
