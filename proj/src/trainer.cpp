#include "drda/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "drda/error.hpp"

namespace drda {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();
constexpr double kNormGuard = 1e-8;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double l2_norm_sq(const Tensor& t) {
  double s = 0.0;
  for (std::size_t i = 0; i < t.numel(); ++i) s += t[i] * t[i];
  return s;
}

// mean_i sum_j Q_ij log(Q_ij / P_ij), with the same 1e-12 floor the
// consensus term uses.
double kl_mean(const Tensor& q, const Tensor& p) {
  double total = 0.0;
  for (std::size_t i = 0; i < q.rows(); ++i) {
    for (std::size_t j = 0; j < q.cols(); ++j) {
      const double qv = q.at(i, j);
      if (qv <= 0.0) continue;
      total += qv * (std::log(qv) - std::log(std::max(p.at(i, j), 1e-12)));
    }
  }
  return total / static_cast<double>(q.rows());
}

RadialStructure structure_from_full_pass(const Tensor& features, const std::vector<int>& labels,
                                         std::size_t k, DomainTag tag) {
  RadialStructure st = RadialStructure::empty(k, features.cols(), tag);
  const LocalAnchors la = local_anchors(features, labels, k);
  st.global_anchor = global_anchor(features);
  st.local_anchors = la.anchors;
  st.counts = la.counts;
  return st;
}

}  // namespace

const char* const kMetricsHeader =
    "iteration,p,lr,transfer_weight,L_ce,L_global,phi,L_ot,L_R,align_grad_norm,"
    "target_accuracy,phi_s_gt,phi_t_gt,phi_gt_gt,gw_fixed,wasserstein,kl_qp";

std::string metrics_row_csv(const MetricsRow& r) {
  std::string line = std::to_string(r.iteration);
  for (double v : {r.p, r.lr, r.transfer_weight, r.ce, r.global, r.phi, r.ot, r.consensus,
                   r.align_grad_norm, r.target_accuracy, r.phi_s_gt, r.phi_t_gt, r.phi_gt_gt,
                   r.gw_fixed, r.wasserstein, r.kl_qp}) {
    line += ",";
    line += fmt(v);
  }
  return line;
}

void TrainConfig::validate() const {
  auto nonneg = [](double v, const char* name) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw contract_error(std::string("TrainConfig: ") + name + " must be finite and >= 0");
    }
  };
  nonneg(lambda_T, "lambda_T");
  nonneg(lambda_phi, "lambda_phi");
  nonneg(lambda_ot, "lambda_ot");
  nonneg(lambda_R, "lambda_R");
  nonneg(lambda_dist, "lambda_dist");
  nonneg(eta0, "eta0");
  nonneg(gamma, "gamma");
  nonneg(beta, "beta");
  nonneg(alpha, "alpha");
  if (eta_ema < 0.0 || eta_ema > 1.0) throw contract_error("TrainConfig: eta_ema outside [0,1]");
  if (epsilon_ot <= 0.0) throw contract_error("TrainConfig: epsilon_ot must be > 0");
  if (ot_max_iter < 1) throw contract_error("TrainConfig: ot_max_iter must be >= 1");
  if (ot_tol <= 0.0) throw contract_error("TrainConfig: ot_tol must be > 0");
  if (momentum < 0.0 || momentum >= 1.0) throw contract_error("TrainConfig: momentum outside [0,1)");
  if (task_lr_scale <= 0.0) throw contract_error("TrainConfig: task_lr_scale must be > 0");
  if (temperature <= 0.0) throw contract_error("TrainConfig: temperature must be > 0");
  if (burn_in < 0.0 || burn_in >= 1.0) throw contract_error("TrainConfig: burn_in outside [0,1)");
  if (entropy_sign != 1.0 && entropy_sign != -1.0) {
    throw contract_error("TrainConfig: entropy_sign must be +1 or -1");
  }
  if (batch_size < 1) throw contract_error("TrainConfig: batch_size must be >= 1");
  if (log_interval < 1) throw contract_error("TrainConfig: log_interval must be >= 1");
  if (hidden.empty()) throw contract_error("TrainConfig: need at least one hidden layer");
  if (bottleneck < 1) throw contract_error("TrainConfig: bottleneck must be >= 1");
}

double lr_schedule(double p, double eta0, double gamma, double beta) {
  if (p < 0.0 || p > 1.0) throw contract_error("lr_schedule: p outside [0,1]");
  return eta0 * std::pow(1.0 + gamma * p, -beta);
}

double transfer_weight(double p, double alpha) {
  if (p < 0.0 || p > 1.0) throw contract_error("transfer_weight: p outside [0,1]");
  return 2.0 / (1.0 + std::exp(-alpha * p)) - 1.0;
}

std::vector<int> pseudo_labels(const Tensor& posteriors) {
  if (posteriors.rank() != 2) throw contract_error("pseudo_labels: posteriors must be a matrix");
  std::vector<int> out(posteriors.rows());
  for (std::size_t i = 0; i < posteriors.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < posteriors.cols(); ++j) {
      if (posteriors.at(i, j) > posteriors.at(i, best)) best = j;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

BatchSampler::BatchSampler(std::size_t n, const std::vector<int>* labels,
                           std::size_t num_classes, std::uint64_t seed)
    : rng_(seed) {
  if (labels != nullptr && !labels->empty()) {
    by_class_.resize(num_classes);
    for (std::size_t i = 0; i < n; ++i) by_class_[(*labels)[i]].push_back(i);
  } else {
    by_class_.resize(1);
    by_class_[0].resize(n);
    for (std::size_t i = 0; i < n; ++i) by_class_[0][i] = i;
  }
  pools_.resize(by_class_.size());
  cursor_.assign(by_class_.size(), 0);
  for (std::size_t c = 0; c < by_class_.size(); ++c) refill_pool(c);
}

void BatchSampler::refill_pool(std::size_t c) {
  pools_[c] = by_class_[c];
  std::shuffle(pools_[c].begin(), pools_[c].end(), rng_);
  cursor_[c] = 0;
}

std::vector<std::size_t> BatchSampler::next(std::size_t batch_size) {
  std::vector<std::size_t> out;
  out.reserve(batch_size);
  const std::size_t groups = by_class_.size();
  for (std::size_t b = 0; b < batch_size; ++b) {
    std::size_t tries = 0;
    while (by_class_[rotation_].empty() && tries++ < groups) rotation_ = (rotation_ + 1) % groups;
    if (by_class_[rotation_].empty()) throw contract_error("BatchSampler: empty dataset");
    if (cursor_[rotation_] >= pools_[rotation_].size()) refill_pool(rotation_);
    out.push_back(pools_[rotation_][cursor_[rotation_]++]);
    rotation_ = (rotation_ + 1) % groups;
  }
  return out;
}

struct Trainer::GradSet {
  std::vector<std::pair<Tensor, Tensor>> extractor;
  Tensor cls_weight;
  Tensor cls_bias;
};

Trainer::Trainer(TrainConfig config, DomainDataset source, DomainDataset target)
    : config_(std::move(config)),
      source_data_(std::move(source)),
      target_data_(std::move(target)) {
  config_.validate();
  if (!source_data_.labeled()) throw contract_error("Trainer: source must be labeled");
  if (source_data_.dim() != target_data_.dim()) {
    throw contract_error("Trainer: domains disagree on feature dimensionality");
  }
  if (source_data_.num_classes != target_data_.num_classes) {
    throw contract_error("Trainer: domains disagree on class count");
  }
  std::mt19937_64 master(config_.seed);
  std::mt19937_64 param_rng(master());
  const std::uint64_t source_seed = master();
  const std::uint64_t target_seed = master();
  params_ = init_model(source_data_.dim(), config_.hidden, config_.bottleneck,
                       source_data_.num_classes, config_.temperature, param_rng);
  stiefel_ = stiefel_init_identity(config_.bottleneck);
  stiefel_.learning_rate_scale = config_.task_lr_scale;
  for (const LayerParams& l : params_.extractor) {
    vel_extractor_.emplace_back(Tensor::zeros(l.weight.shape()), Tensor::zeros(l.bias.shape()));
  }
  vel_cls_weight_ = Tensor::zeros(params_.classifier.weight.shape());
  vel_cls_bias_ = Tensor::zeros(params_.classifier.bias.shape());
  source_sampler_ = BatchSampler(source_data_.size(), &source_data_.labels,
                                 source_data_.num_classes, source_seed);
  target_sampler_ = BatchSampler(target_data_.size(), nullptr, 0, target_seed);
  init_structures();
}

void Trainer::init_structures() {
  const std::size_t k = source_data_.num_classes;
  const ForwardValues fs = eval_forward_source(params_, source_data_.features);
  source_ = structure_from_full_pass(fs.features, source_data_.labels, k, DomainTag::kSource);
  const ForwardValues ft = eval_forward_target(params_, stiefel_, target_data_.features);
  source_.domain_tag = DomainTag::kSource;
  target_ = structure_from_full_pass(ft.features, pseudo_labels(ft.posteriors), k,
                                     DomainTag::kTarget);
}

double Trainer::progress() const {
  return config_.max_iters == 0
             ? 0.0
             : static_cast<double>(iteration_) / static_cast<double>(config_.max_iters);
}

void Trainer::apply_sgd(Tensor& value, Tensor& velocity, const Tensor& grad, double lr) {
  for (std::size_t i = 0; i < value.numel(); ++i) {
    velocity[i] = config_.momentum * velocity[i] + grad[i];
    value[i] -= lr * velocity[i];
  }
}

Batch Trainer::make_source_batch() {
  const std::vector<std::size_t> idx = source_sampler_.next(config_.batch_size);
  Batch b;
  b.x = Tensor({idx.size(), source_data_.dim()});
  b.labels.reserve(idx.size());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    for (std::size_t j = 0; j < source_data_.dim(); ++j) {
      b.x.at(r, j) = source_data_.features.at(idx[r], j);
    }
    b.labels.push_back(source_data_.labels[idx[r]]);
  }
  return b;
}

Batch Trainer::make_target_batch() {
  const std::vector<std::size_t> idx = target_sampler_.next(config_.batch_size);
  Batch b;
  b.x = Tensor({idx.size(), target_data_.dim()});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    for (std::size_t j = 0; j < target_data_.dim(); ++j) {
      b.x.at(r, j) = target_data_.features.at(idx[r], j);
    }
  }
  return b;
}

double Trainer::target_accuracy() const {
  if (!target_data_.labeled()) throw contract_error("target_accuracy: unlabeled target");
  const ForwardValues ft = eval_forward_target(params_, stiefel_, target_data_.features);
  const std::vector<int> pred = pseudo_labels(ft.posteriors);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == target_data_.labels[i]) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

MetricsRow Trainer::step(bool log_diagnostics) {
  const Batch src = make_source_batch();
  const Batch tgt = make_target_batch();
  return step_with_batches(src, tgt, log_diagnostics);
}

MetricsRow Trainer::step_with_batches(const Batch& source_batch, const Batch& target_batch,
                                      bool log_diagnostics) {
  if (source_batch.x.rank() != 2 || source_batch.x.rows() == 0 ||
      target_batch.x.rank() != 2 || target_batch.x.rows() == 0) {
    throw contract_error("train_step: batches must be non-empty");
  }
  const std::size_t k = source_data_.num_classes;
  const double p = progress();
  const double lr = lr_schedule(p, config_.eta0, config_.gamma, config_.beta);
  const double gate = p >= config_.burn_in ? transfer_weight(p, config_.alpha) : 0.0;
  const double w_T = gate * config_.lambda_T;
  const double w_phi = gate * config_.lambda_phi;
  const double w_ot = config_.no_ot ? 0.0 : gate * config_.lambda_ot;
  const double w_R = config_.no_consensus ? 0.0 : gate * config_.lambda_R;

  Graph g;
  const ParamNodes nodes = make_param_nodes(g, params_, &stiefel_);

  auto guarded = [](const char* term, auto&& fn) {
    try {
      return fn();
    } catch (const numeric_error& e) {
      throw numeric_error(std::string(term) + ": " + e.what());
    }
  };

  const ForwardNodes fs = guarded("forward_source", [&] {
    return forward_source(g, nodes, source_batch.x, config_.temperature);
  });
  const ForwardNodes ft = guarded("forward_target", [&] {
    return forward_target(g, nodes, target_batch.x, config_.temperature);
  });
  const std::vector<int> target_pseudo = pseudo_labels(g.value(ft.posteriors));

  const AnchorNodes anch_s = guarded("anchor_update", [&] {
    return ema_anchor_nodes(g, fs.features, source_batch.labels, source_, config_.eta_ema);
  });
  const AnchorNodes anch_t = guarded("anchor_update", [&] {
    return ema_anchor_nodes(g, ft.features, target_pseudo, target_, config_.eta_ema);
  });

  const NodeId ce = guarded("L_ce", [&] {
    return tempered_cross_entropy_node(g, fs.logits, source_batch.labels, config_.temperature);
  });
  const NodeId lglobal = guarded("L_global", [&] {
    return global_loss_node(g, anch_s.global, anch_t.global);
  });

  std::vector<int> common;
  for (std::size_t c = 0; c < k; ++c) {
    if (anch_s.updated.has_class(c) && anch_t.updated.has_class(c)) {
      common.push_back(static_cast<int>(c));
    }
  }
  const IntraOpts train_opts{config_.lambda_dist, !config_.no_angular, kNormGuard};
  std::optional<NodeId> phi;
  if (!common.empty()) {
    phi = guarded("phi", [&] {
      const NodeId vs = egocentric_node(g, anch_s.local, anch_s.global, common, k);
      const NodeId vt = egocentric_node(g, anch_t.local, anch_t.global, common, k);
      return phi_node(g, vs, vt, train_opts);
    });
  }

  // Entropic OT enclosures per domain; the plan and the anchors are frozen,
  // gradients reach theta only through the cost matrix.
  struct OtPart {
    std::optional<NodeId> loss;
    Tensor q;  // n x k soft assignments (zero columns for absent classes)
    double transport = kNan;
  };
  auto build_ot = [&](NodeId features, const RadialStructure& st) {
    OtPart part;
    std::vector<int> present;
    for (std::size_t c = 0; c < k; ++c) {
      if (st.has_class(c)) present.push_back(static_cast<int>(c));
    }
    const Tensor& z = g.value(features);
    part.q = Tensor({z.rows(), k});
    if (present.empty()) return part;
    Tensor anchors({present.size(), st.dim()});
    for (std::size_t r = 0; r < present.size(); ++r) {
      for (std::size_t j = 0; j < st.dim(); ++j) {
        anchors.at(r, j) = st.local_anchors.at(present[r], j);
      }
    }
    Tensor cost({z.rows(), present.size()});
    double scale = 0.0;
    for (std::size_t i = 0; i < z.rows(); ++i) {
      for (std::size_t r = 0; r < present.size(); ++r) {
        double sq = 0.0;
        for (std::size_t j = 0; j < z.cols(); ++j) {
          const double d = z.at(i, j) - anchors.at(r, j);
          sq += d * d;
        }
        cost.at(i, r) = sq;
        scale = std::max(scale, sq);
      }
    }
    if (scale <= 0.0) scale = 1.0;
    const Tensor mu = Tensor::full({z.rows()}, 1.0 / static_cast<double>(z.rows()));
    const Tensor nu = Tensor::full({present.size()}, 1.0 / static_cast<double>(present.size()));
    const TransportPlan plan = sinkhorn_plan(cost, mu, nu, config_.epsilon_ot * scale,
                                             config_.ot_max_iter, config_.ot_tol);
    const NodeId cost_node = squared_distance_cost_node(g, features, anchors);
    part.loss = entropic_cost_node(g, cost_node, plan);
    const Tensor q_present = soft_assignments(plan);
    for (std::size_t i = 0; i < z.rows(); ++i) {
      for (std::size_t r = 0; r < present.size(); ++r) {
        part.q.at(i, present[r]) = q_present.at(i, r);
      }
    }
    part.transport = 0.0;
    for (std::size_t i = 0; i < cost.numel(); ++i) {
      part.transport += plan.coupling[i] * cost[i];
    }
    return part;
  };
  const OtPart ot_s = guarded("L_ot", [&] { return build_ot(fs.features, anch_s.updated); });
  const OtPart ot_t = guarded("L_ot", [&] { return build_ot(ft.features, anch_t.updated); });
  std::optional<NodeId> ot_total;
  if (ot_s.loss && ot_t.loss) {
    ot_total = g.add(*ot_s.loss, *ot_t.loss);
  } else if (ot_s.loss) {
    ot_total = ot_s.loss;
  } else if (ot_t.loss) {
    ot_total = ot_t.loss;
  }

  // Consensus: posteriors recomputed from detached features so the term can
  // only move the classifier.
  std::optional<NodeId> consensus_total;
  std::optional<NodeId> consensus_t;
  {
    const NodeId ps_sg = tempered_posteriors(
        g, classifier_logits(g, nodes, g.detach(fs.features)), config_.temperature);
    const NodeId pt_sg = tempered_posteriors(
        g, classifier_logits(g, nodes, g.detach(ft.features)), config_.temperature);
    if (ot_s.loss) {
      consensus_total = guarded("L_R", [&] {
        return consensus_reg_node(g, ot_s.q, ps_sg, config_.entropy_sign);
      });
    }
    if (ot_t.loss) {
      consensus_t = guarded("L_R", [&] {
        return consensus_reg_node(g, ot_t.q, pt_sg, config_.entropy_sign);
      });
      consensus_total = consensus_total ? std::optional<NodeId>(g.add(*consensus_total,
                                                                      *consensus_t))
                                        : consensus_t;
    }
  }

  // Algorithm-1 roots. Zero-weight terms are left out entirely so a
  // degenerate configuration reduces to plain supervised training.
  NodeId theta_root = ce;
  if (w_T > 0.0) theta_root = g.add(theta_root, g.mul_scalar(lglobal, w_T));
  if (w_phi > 0.0 && phi) theta_root = g.add(theta_root, g.mul_scalar(*phi, w_phi));
  if (w_ot > 0.0 && ot_total) theta_root = g.add(theta_root, g.mul_scalar(*ot_total, w_ot));

  NodeId cls_root = ce;
  if (w_R > 0.0 && consensus_total) {
    cls_root = g.add(cls_root, g.mul_scalar(*consensus_total, w_R));
  }

  std::optional<NodeId> delta_root;
  if (!config_.no_stiefel && w_phi > 0.0 && phi) {
    delta_root = g.mul_scalar(*phi, w_phi);
  }

  // Collect all gradients before touching any parameter.
  std::optional<Tensor> delta_grad;
  if (delta_root) {
    g.backward(*delta_root);
    delta_grad = g.grad(nodes.stiefel);
  }
  g.backward(cls_root);
  GradSet cls_grads;
  cls_grads.cls_weight = g.grad(nodes.cls_weight);
  cls_grads.cls_bias = g.grad(nodes.cls_bias);
  g.backward(theta_root);
  GradSet theta_grads;
  for (const auto& [w, b] : nodes.extractor) {
    theta_grads.extractor.emplace_back(g.grad(w), g.grad(b));
  }

  MetricsRow row;
  row.iteration = iteration_;
  row.p = p;
  row.lr = lr;
  row.transfer_weight = gate;
  row.ce = g.value(ce).item();
  row.global = g.value(lglobal).item();
  row.phi = phi ? g.value(*phi).item() : kNan;
  row.ot = ot_total ? g.value(*ot_total).item() : kNan;
  row.consensus = consensus_total ? g.value(*consensus_total).item() : kNan;
  row.target_accuracy = kNan;
  row.phi_s_gt = kNan;
  row.phi_t_gt = kNan;
  row.phi_gt_gt = kNan;
  row.gw_fixed = kNan;
  row.wasserstein = ot_t.transport;
  row.kl_qp = ot_t.loss ? kl_mean(ot_t.q, g.value(ft.posteriors)) : kNan;

  // Norm of the gated alignment gradient over all trainable leaves; exactly
  // zero while the transfer terms are suppressed.
  row.align_grad_norm = 0.0;
  if (log_diagnostics) {
    std::optional<NodeId> align_root;
    auto accumulate = [&](NodeId term, double w) {
      const NodeId scaled = g.mul_scalar(term, w);
      align_root = align_root ? std::optional<NodeId>(g.add(*align_root, scaled)) : scaled;
    };
    if (w_T > 0.0) accumulate(lglobal, w_T);
    if (w_phi > 0.0 && phi) accumulate(*phi, w_phi);
    if (w_ot > 0.0 && ot_total) accumulate(*ot_total, w_ot);
    if (w_R > 0.0 && consensus_total) accumulate(*consensus_total, w_R);
    if (align_root) {
      const auto grads = g.evaluate_with_gradients(*align_root);
      double sq = 0.0;
      for (const auto& [id, grad] : grads) sq += l2_norm_sq(grad);
      row.align_grad_norm = std::sqrt(sq);
    }
  }

  // Apply updates (anchors always; parameters only under a positive rate).
  source_ = anch_s.updated;
  target_ = anch_t.updated;
  if (lr > 0.0) {
    const double task_lr = lr * config_.task_lr_scale;
    if (delta_grad && !config_.no_stiefel) {
      stiefel_ = riemannian_step(stiefel_, *delta_grad, task_lr);
    }
    for (std::size_t l = 0; l < params_.extractor.size(); ++l) {
      apply_sgd(params_.extractor[l].weight, vel_extractor_[l].first,
                theta_grads.extractor[l].first, lr);
      apply_sgd(params_.extractor[l].bias, vel_extractor_[l].second,
                theta_grads.extractor[l].second, lr);
    }
    apply_sgd(params_.classifier.weight, vel_cls_weight_, cls_grads.cls_weight, task_lr);
    apply_sgd(params_.classifier.bias, vel_cls_bias_, cls_grads.cls_bias, task_lr);
  }
  ++iteration_;

  if (log_diagnostics) {
    const IntraOpts diag_opts{config_.lambda_dist, true, kNormGuard};
    if (!common.empty()) {
      try {
        row.gw_fixed = gw_fixed_plan(egocentric_rows(source_, common),
                                     egocentric_rows(target_, common), diag_opts);
      } catch (const contract_error&) {
      }
    }
    const ForwardValues full_s = eval_forward_source(params_, source_data_.features);
    const RadialStructure gt_s = structure_from_full_pass(full_s.features, source_data_.labels,
                                                          k, DomainTag::kSource);
    try {
      row.phi_s_gt = structure_phi(source_, gt_s, diag_opts);
    } catch (const contract_error&) {
    }
    if (target_data_.labeled()) {
      const ForwardValues full_t = eval_forward_target(params_, stiefel_, target_data_.features);
      const RadialStructure gt_t = structure_from_full_pass(full_t.features, target_data_.labels,
                                                            k, DomainTag::kTarget);
      try {
        row.phi_t_gt = structure_phi(target_, gt_t, diag_opts);
      } catch (const contract_error&) {
      }
      try {
        row.phi_gt_gt = structure_phi(gt_s, gt_t, diag_opts);
      } catch (const contract_error&) {
      }
      const std::vector<int> pred = pseudo_labels(full_t.posteriors);
      std::size_t hit = 0;
      for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] == target_data_.labels[i]) ++hit;
      }
      row.target_accuracy = static_cast<double>(hit) / static_cast<double>(pred.size());
    }
  }
  return row;
}

FitResult Trainer::fit() {
  FitResult result;
  for (std::size_t iter = 0; iter < config_.max_iters; ++iter) {
    const bool log = (iter + 1) % config_.log_interval == 0;
    const MetricsRow row = step(log);
    if (log) result.metrics.push_back(row);
  }
  result.checkpoint =
      TrainerCheckpoint{params_, stiefel_, source_, target_};
  return result;
}

}  // namespace drda
