#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "drda/graph.hpp"
#include "drda/tensor.hpp"

namespace drda {

enum class DomainTag { kSource, kTarget };

const char* domain_tag_name(DomainTag tag);

// One domain's radial summary: global anchor (domain centroid) plus one
// local anchor per class. A class with cumulative count 0 has never been
// observed and its anchor row is meaningless (flagged missing, not zero).
struct RadialStructure {
  Tensor global_anchor;  // {d}
  Tensor local_anchors;  // {k, d}
  Tensor counts;         // {k}, cumulative per-class sample weight
  DomainTag domain_tag = DomainTag::kSource;

  std::size_t num_classes() const { return counts.numel(); }
  std::size_t dim() const { return global_anchor.numel(); }
  bool has_class(std::size_t c) const { return counts[c] > 0.0; }

  static RadialStructure empty(std::size_t k, std::size_t d, DomainTag tag);
};

struct LocalAnchors {
  Tensor anchors;  // {k, d}; rows of absent classes are zero-filled
  Tensor counts;   // {k}
  std::vector<char> present;
};

// Options for the intra-structure distance c(v_i, v_j). `angular` off drops
// the bracketed cosine term, keeping only the 0.5 * lambda_dist * |v_i-v_j|^2
// part. `norm_guard` > 0 stabilizes the cosine against collapsed anchors
// during training; with guard 0 a zero-norm vector is an error.
struct IntraOpts {
  double lambda_dist = 1.0;
  bool angular = true;
  double norm_guard = 0.0;
};

Tensor global_anchor(const Tensor& features);
LocalAnchors local_anchors(const Tensor& features, const std::vector<int>& labels,
                           std::size_t k);

// Eq-style EMA refresh: classes present in the batch move toward the batch
// anchor with weight eta, absent classes stay put. The batch mean (count-
// weighted mean of batch anchors) refreshes the global anchor by the same
// rule. A class first observed in this batch adopts the batch anchor as is.
RadialStructure ema_update(const RadialStructure& prev, const Tensor& batch_anchors,
                           const Tensor& batch_counts, double eta);

// v_k = a_k - a for every class; structure-incomplete error if any class
// is missing.
Tensor egocentric(const RadialStructure& structure);
// Same, restricted to the listed classes.
Tensor egocentric_rows(const RadialStructure& structure, const std::vector<int>& classes);

double intra_distance(const Tensor& v_i, const Tensor& v_j, double lambda_dist);
double intra_distance(const Tensor& v_i, const Tensor& v_j, const IntraOpts& opts);

double global_loss(const Tensor& a_s, const Tensor& a_t);

// Mean of c over corresponding rows of the two egocentric stacks.
double local_loss_phi(const Tensor& v_s, const Tensor& v_t, double lambda_dist);
double local_loss_phi(const Tensor& v_s, const Tensor& v_t, const IntraOpts& opts);

// phi over the classes present in both structures, renormalized; throws if
// no class is common.
double structure_phi(const RadialStructure& s, const RadialStructure& t,
                     const IntraOpts& opts);

// Fixed-correspondence structure discrepancy sum_ij |c_s(i,j) - c_t(i,j)|^2,
// a logged diagnostic (invariant to independent per-domain isometries).
double gw_fixed_plan(const Tensor& v_s, const Tensor& v_t, double lambda_dist);
double gw_fixed_plan(const Tensor& v_s, const Tensor& v_t, const IntraOpts& opts);

// Anchor snapshot as CSV (domain,class_id,x_0..x_{d-1}); the global anchor
// uses class_id -1, missing classes are skipped.
void write_structure_csv(std::ostream& out, const std::vector<RadialStructure>& structures);

// ---- differentiable builders (training path) ----

struct AnchorNodes {
  NodeId local;   // {k, d}; rows of never-seen classes are zero constants
  NodeId global;  // {1, d}
  RadialStructure updated;  // value-level structure, equal to the node values
};

// Builds the EMA-updated anchors as graph nodes over the batch features so
// that gradients reach the features with weight eta / M_k, and returns the
// matching value-level structure.
AnchorNodes ema_anchor_nodes(Graph& g, NodeId features, const std::vector<int>& labels,
                             const RadialStructure& prev, double eta);

// |a_s - a_t| with a tiny guard inside the square root (exact for any
// separation above 1e-8, finite gradient at zero).
NodeId global_loss_node(Graph& g, NodeId a_s, NodeId a_t);

// Egocentric rows for the listed classes: selector * anchors - global.
NodeId egocentric_node(Graph& g, NodeId local, NodeId global,
                       const std::vector<int>& classes, std::size_t k);

// Mean of c over corresponding rows of two {k', d} egocentric nodes.
NodeId phi_node(Graph& g, NodeId v_s, NodeId v_t, const IntraOpts& opts);

// Squared-Euclidean cost matrix between feature rows and fixed anchors.
NodeId squared_distance_cost_node(Graph& g, NodeId features, const Tensor& anchors);

}  // namespace drda
