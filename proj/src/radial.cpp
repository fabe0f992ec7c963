#include "drda/radial.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

#include "drda/error.hpp"

namespace drda {

namespace {

double dot(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t i = 0; i < d; ++i) s += a[i] * b[i];
  return s;
}

double row_c(const double* vi, const double* vj, std::size_t d, const IntraOpts& opts) {
  double value = 0.0;
  if (opts.angular) {
    const double ni = std::sqrt(dot(vi, vi, d));
    const double nj = std::sqrt(dot(vj, vj, d));
    if (opts.norm_guard == 0.0 && (ni == 0.0 || nj == 0.0)) {
      throw contract_error("intra_distance: zero-norm egocentric vector");
    }
    value += 1.0 - dot(vi, vj, d) / ((ni + opts.norm_guard) * (nj + opts.norm_guard));
  }
  double sq = 0.0;
  for (std::size_t i = 0; i < d; ++i) sq += (vi[i] - vj[i]) * (vi[i] - vj[i]);
  return value + 0.5 * opts.lambda_dist * sq;
}

}  // namespace

const char* domain_tag_name(DomainTag tag) {
  return tag == DomainTag::kSource ? "source" : "target";
}

RadialStructure RadialStructure::empty(std::size_t k, std::size_t d, DomainTag tag) {
  if (k < 1 || d < 1) throw contract_error("RadialStructure: k and d must be >= 1");
  return RadialStructure{Tensor({d}), Tensor({k, d}), Tensor({k}), tag};
}

Tensor global_anchor(const Tensor& features) {
  if (features.rank() != 2 || features.rows() < 1) {
    throw contract_error("global_anchor: empty domain");
  }
  const std::size_t n = features.rows(), d = features.cols();
  Tensor mean({d});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) mean[j] += features.at(i, j);
  }
  for (std::size_t j = 0; j < d; ++j) mean[j] /= static_cast<double>(n);
  return mean;
}

LocalAnchors local_anchors(const Tensor& features, const std::vector<int>& labels,
                           std::size_t k) {
  if (features.rank() != 2) throw contract_error("local_anchors: features must be a matrix");
  const std::size_t n = features.rows(), d = features.cols();
  if (labels.size() != n) throw contract_error("local_anchors: label count mismatch");
  LocalAnchors out{Tensor({k, d}), Tensor({k}), std::vector<char>(k, 0)};
  for (std::size_t i = 0; i < n; ++i) {
    const int c = labels[i];
    if (c < 0 || static_cast<std::size_t>(c) >= k) {
      throw contract_error("local_anchors: label " + std::to_string(c) + " out of [0," +
                           std::to_string(k) + ")");
    }
    out.counts[c] += 1.0;
    for (std::size_t j = 0; j < d; ++j) out.anchors.at(c, j) += features.at(i, j);
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (out.counts[c] > 0.0) {
      out.present[c] = 1;
      for (std::size_t j = 0; j < d; ++j) out.anchors.at(c, j) /= out.counts[c];
    }
  }
  return out;
}

RadialStructure ema_update(const RadialStructure& prev, const Tensor& batch_anchors,
                           const Tensor& batch_counts, double eta) {
  if (eta < 0.0 || eta > 1.0) throw contract_error("ema_update: eta must lie in [0,1]");
  const std::size_t k = prev.num_classes(), d = prev.dim();
  if (batch_anchors.rank() != 2 || batch_anchors.rows() != k || batch_anchors.cols() != d ||
      batch_counts.numel() != k) {
    throw contract_error("ema_update: batch shapes do not match structure");
  }
  RadialStructure next = prev;
  double total = 0.0;
  Tensor batch_mean({d});
  for (std::size_t c = 0; c < k; ++c) {
    const double m = batch_counts[c];
    if (m <= 0.0) continue;
    total += m;
    for (std::size_t j = 0; j < d; ++j) batch_mean[j] += m * batch_anchors.at(c, j);
    const double w = prev.has_class(c) ? eta : 1.0;
    for (std::size_t j = 0; j < d; ++j) {
      next.local_anchors.at(c, j) =
          w * batch_anchors.at(c, j) + (1.0 - w) * prev.local_anchors.at(c, j);
    }
    next.counts[c] = prev.counts[c] + m;
  }
  if (total > 0.0) {
    const bool fresh = [&] {
      for (std::size_t c = 0; c < k; ++c) {
        if (prev.has_class(c)) return false;
      }
      return true;
    }();
    const double w = fresh ? 1.0 : eta;
    for (std::size_t j = 0; j < d; ++j) {
      batch_mean[j] /= total;
      next.global_anchor[j] = w * batch_mean[j] + (1.0 - w) * prev.global_anchor[j];
    }
  }
  return next;
}

Tensor egocentric(const RadialStructure& structure) {
  std::vector<int> all(structure.num_classes());
  for (std::size_t c = 0; c < all.size(); ++c) all[c] = static_cast<int>(c);
  return egocentric_rows(structure, all);
}

Tensor egocentric_rows(const RadialStructure& structure, const std::vector<int>& classes) {
  const std::size_t d = structure.dim();
  Tensor v({classes.size(), d});
  for (std::size_t r = 0; r < classes.size(); ++r) {
    const std::size_t c = static_cast<std::size_t>(classes[r]);
    if (c >= structure.num_classes() || !structure.has_class(c)) {
      throw contract_error("egocentric: structure incomplete, class " + std::to_string(c) +
                           " missing");
    }
    for (std::size_t j = 0; j < d; ++j) {
      v.at(r, j) = structure.local_anchors.at(c, j) - structure.global_anchor[j];
    }
  }
  return v;
}

double intra_distance(const Tensor& v_i, const Tensor& v_j, double lambda_dist) {
  return intra_distance(v_i, v_j, IntraOpts{lambda_dist, true, 0.0});
}

double intra_distance(const Tensor& v_i, const Tensor& v_j, const IntraOpts& opts) {
  if (v_i.numel() != v_j.numel()) throw contract_error("intra_distance: dimension mismatch");
  if (opts.lambda_dist < 0.0) throw contract_error("intra_distance: lambda_dist must be >= 0");
  return row_c(v_i.data(), v_j.data(), v_i.numel(), opts);
}

double global_loss(const Tensor& a_s, const Tensor& a_t) {
  if (a_s.numel() != a_t.numel()) throw contract_error("global_loss: dimension mismatch");
  double sq = 0.0;
  for (std::size_t i = 0; i < a_s.numel(); ++i) sq += (a_s[i] - a_t[i]) * (a_s[i] - a_t[i]);
  return std::sqrt(sq);
}

double local_loss_phi(const Tensor& v_s, const Tensor& v_t, double lambda_dist) {
  return local_loss_phi(v_s, v_t, IntraOpts{lambda_dist, true, 0.0});
}

double local_loss_phi(const Tensor& v_s, const Tensor& v_t, const IntraOpts& opts) {
  if (v_s.rank() != 2 || !v_s.same_shape(v_t)) {
    throw contract_error("local_loss_phi: stacks must be matrices of equal shape");
  }
  const std::size_t k = v_s.rows(), d = v_s.cols();
  if (k == 0) throw contract_error("local_loss_phi: empty correspondence");
  double sum = 0.0;
  for (std::size_t r = 0; r < k; ++r) {
    sum += row_c(v_s.data() + r * d, v_t.data() + r * d, d, opts);
  }
  return sum / static_cast<double>(k);
}

double structure_phi(const RadialStructure& s, const RadialStructure& t,
                     const IntraOpts& opts) {
  if (s.num_classes() != t.num_classes() || s.dim() != t.dim()) {
    throw contract_error("structure_phi: structures disagree on k or d");
  }
  std::vector<int> common;
  for (std::size_t c = 0; c < s.num_classes(); ++c) {
    if (s.has_class(c) && t.has_class(c)) common.push_back(static_cast<int>(c));
  }
  if (common.empty()) throw contract_error("structure_phi: no common classes");
  return local_loss_phi(egocentric_rows(s, common), egocentric_rows(t, common), opts);
}

double gw_fixed_plan(const Tensor& v_s, const Tensor& v_t, double lambda_dist) {
  return gw_fixed_plan(v_s, v_t, IntraOpts{lambda_dist, true, 0.0});
}

double gw_fixed_plan(const Tensor& v_s, const Tensor& v_t, const IntraOpts& opts) {
  if (v_s.rank() != 2 || !v_s.same_shape(v_t)) {
    throw contract_error("gw_fixed_plan: stacks must be matrices of equal shape");
  }
  const std::size_t k = v_s.rows(), d = v_s.cols();
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      if (i == j) continue;  // c(v, v) = 0 in both domains
      const double cs = row_c(v_s.data() + i * d, v_s.data() + j * d, d, opts);
      const double ct = row_c(v_t.data() + i * d, v_t.data() + j * d, d, opts);
      sum += (cs - ct) * (cs - ct);
    }
  }
  return sum;
}

void write_structure_csv(std::ostream& out, const std::vector<RadialStructure>& structures) {
  if (structures.empty()) throw contract_error("write_structure_csv: no structures");
  const std::size_t d = structures.front().dim();
  out << "domain,class_id";
  for (std::size_t j = 0; j < d; ++j) out << ",x_" << j;
  out << "\n";
  char buf[32];
  auto emit = [&](const char* domain, int cls, const double* row) {
    out << domain << "," << cls;
    for (std::size_t j = 0; j < d; ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", row[j]);
      out << "," << buf;
    }
    out << "\n";
  };
  for (const RadialStructure& s : structures) {
    emit(domain_tag_name(s.domain_tag), -1, s.global_anchor.data());
    for (std::size_t c = 0; c < s.num_classes(); ++c) {
      if (!s.has_class(c)) continue;
      emit(domain_tag_name(s.domain_tag), static_cast<int>(c),
           s.local_anchors.data() + c * d);
    }
  }
}

AnchorNodes ema_anchor_nodes(Graph& g, NodeId features, const std::vector<int>& labels,
                             const RadialStructure& prev, double eta) {
  const Tensor& z = g.value(features);
  if (z.rank() != 2) throw contract_error("ema_anchor_nodes: features must be a matrix");
  const std::size_t n = z.rows(), d = z.cols(), k = prev.num_classes();
  if (prev.dim() != d) throw contract_error("ema_anchor_nodes: dimension mismatch");
  if (eta < 0.0 || eta > 1.0) throw contract_error("ema_anchor_nodes: eta must lie in [0,1]");

  Tensor counts({k});
  for (int c : labels) {
    if (c < 0 || static_cast<std::size_t>(c) >= k) {
      throw contract_error("ema_anchor_nodes: label out of range");
    }
    counts[c] += 1.0;
  }

  // Per-class feature weights and the constant carry-over term.
  Tensor weights({k, n});
  Tensor carry({k, d});
  for (std::size_t c = 0; c < k; ++c) {
    const bool in_batch = counts[c] > 0.0;
    const double w = !in_batch ? 0.0 : (prev.has_class(c) ? eta / counts[c] : 1.0 / counts[c]);
    if (in_batch) {
      for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] == static_cast<int>(c)) weights.at(c, i) = w;
      }
    }
    const double keep = !in_batch ? (prev.has_class(c) ? 1.0 : 0.0)
                                  : (prev.has_class(c) ? 1.0 - eta : 0.0);
    for (std::size_t j = 0; j < d; ++j) {
      carry.at(c, j) = keep * prev.local_anchors.at(c, j);
    }
  }
  const NodeId local = g.add(g.matmul(g.constant(weights), features), g.constant(carry));

  bool fresh = true;
  for (std::size_t c = 0; c < k; ++c) {
    if (prev.has_class(c)) fresh = false;
  }
  const double gw = fresh ? 1.0 : eta;
  Tensor grow({1, n});
  for (std::size_t i = 0; i < n; ++i) grow.at(0, i) = gw / static_cast<double>(n);
  Tensor gcarry({1, d});
  for (std::size_t j = 0; j < d; ++j) gcarry.at(0, j) = (1.0 - gw) * prev.global_anchor[j];
  const NodeId global = g.add(g.matmul(g.constant(grow), features), g.constant(gcarry));

  AnchorNodes out;
  out.local = local;
  out.global = global;
  out.updated = prev;
  out.updated.local_anchors = g.value(local);
  const Tensor& gval = g.value(global);
  for (std::size_t j = 0; j < d; ++j) out.updated.global_anchor[j] = gval[j];
  for (std::size_t c = 0; c < k; ++c) out.updated.counts[c] = prev.counts[c] + counts[c];
  // never-seen classes keep a zero anchor row but remain flagged missing
  for (std::size_t c = 0; c < k; ++c) {
    if (!out.updated.has_class(c)) {
      for (std::size_t j = 0; j < d; ++j) out.updated.local_anchors.at(c, j) = 0.0;
    }
  }
  return out;
}

NodeId global_loss_node(Graph& g, NodeId a_s, NodeId a_t) {
  const NodeId diff = g.sub(a_s, a_t);
  const NodeId sq = g.sum_all(g.mul(diff, diff));
  // 1e-24 is invisible above |a_s - a_t| ~ 1e-8 and keeps the gradient
  // finite when the anchors coincide.
  return g.sqrt(g.add_scalar(sq, 1e-24));
}

NodeId egocentric_node(Graph& g, NodeId local, NodeId global,
                       const std::vector<int>& classes, std::size_t k) {
  if (classes.empty()) throw contract_error("egocentric_node: no classes selected");
  Tensor sel({classes.size(), k});
  for (std::size_t r = 0; r < classes.size(); ++r) {
    const int c = classes[r];
    if (c < 0 || static_cast<std::size_t>(c) >= k) {
      throw contract_error("egocentric_node: class out of range");
    }
    sel.at(r, static_cast<std::size_t>(c)) = 1.0;
  }
  const NodeId picked = g.matmul(g.constant(sel), local);
  return g.add_rowvec(picked, g.mul_scalar(global, -1.0));
}

NodeId phi_node(Graph& g, NodeId v_s, NodeId v_t, const IntraOpts& opts) {
  const Tensor& vs = g.value(v_s);
  if (vs.rank() != 2 || !vs.same_shape(g.value(v_t))) {
    throw contract_error("phi_node: stacks must be matrices of equal shape");
  }
  const NodeId diff = g.sub(v_s, v_t);
  NodeId c = g.mul_scalar(g.row_sum(g.mul(diff, diff)), 0.5 * opts.lambda_dist);
  if (opts.angular) {
    const NodeId dots = g.row_sum(g.mul(v_s, v_t));
    // 1e-30 inside the square root keeps the sqrt gradient finite when a
    // row is exactly zero; it is invisible for any norm above 1e-15.
    const NodeId ns =
        g.add_scalar(g.sqrt(g.add_scalar(g.row_sum(g.mul(v_s, v_s)), 1e-30)), opts.norm_guard);
    const NodeId nt =
        g.add_scalar(g.sqrt(g.add_scalar(g.row_sum(g.mul(v_t, v_t)), 1e-30)), opts.norm_guard);
    const NodeId cos = g.div(dots, g.mul(ns, nt));
    c = g.add(c, g.add_scalar(g.mul_scalar(cos, -1.0), 1.0));
  }
  return g.mean_all(c);
}

NodeId squared_distance_cost_node(Graph& g, NodeId features, const Tensor& anchors) {
  const Tensor& z = g.value(features);
  if (z.rank() != 2 || anchors.rank() != 2 || anchors.cols() != z.cols()) {
    throw contract_error("squared_distance_cost_node: shape mismatch");
  }
  const std::size_t k = anchors.rows();
  Tensor asq({k});
  for (std::size_t c = 0; c < k; ++c) {
    double s = 0.0;
    for (std::size_t j = 0; j < anchors.cols(); ++j) s += anchors.at(c, j) * anchors.at(c, j);
    asq[c] = s;
  }
  const NodeId cross = g.mul_scalar(g.matmul(features, g.transpose(g.constant(anchors))), -2.0);
  const NodeId with_asq = g.add_rowvec(cross, g.constant(asq));
  const NodeId rowsq = g.row_sum(g.mul(features, features));
  return g.row_center(with_asq, g.mul_scalar(rowsq, -1.0));
}

}  // namespace drda
