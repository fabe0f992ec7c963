#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "drda/data.hpp"
#include "drda/model.hpp"
#include "drda/radial.hpp"
#include "drda/sinkhorn.hpp"
#include "drda/stiefel.hpp"
#include "drda/tensor.hpp"

namespace drda {

struct TrainConfig {
  // objective weights
  double lambda_T = 200.0;
  double lambda_phi = 0.6;
  double lambda_ot = 0.0005;
  double lambda_R = 1.0;
  double lambda_dist = 1.0;
  // anchors and transport
  double eta_ema = 0.7;
  double epsilon_ot = 0.05;  // on max-normalized squared-Euclidean costs
  int ot_max_iter = 1000;
  double ot_tol = 1e-6;
  // schedules
  double eta0 = 0.01;
  double gamma = 10.0;
  double beta = 0.75;
  double alpha = 10.0;
  double momentum = 0.9;
  double task_lr_scale = 10.0;
  double temperature = 0.85;
  double burn_in = 0.0;
  double entropy_sign = 1.0;  // consensus entropy term sign switch
  // run shape
  std::size_t batch_size = 64;
  std::size_t max_iters = 5000;
  std::size_t log_interval = 50;
  std::uint64_t seed = 0;
  // architecture
  std::vector<std::size_t> hidden = {64, 64};
  std::size_t bottleneck = 16;
  // ablations
  bool no_angular = false;
  bool no_stiefel = false;
  bool no_consensus = false;
  bool no_ot = false;

  void validate() const;
};

struct MetricsRow {
  std::size_t iteration = 0;
  double p = 0.0;
  double lr = 0.0;
  double transfer_weight = 0.0;
  double ce = 0.0;
  double global = 0.0;
  double phi = 0.0;
  double ot = 0.0;
  double consensus = 0.0;
  double align_grad_norm = 0.0;
  // diagnostics; NaN when target labels are unavailable
  double target_accuracy = 0.0;
  double phi_s_gt = 0.0;
  double phi_t_gt = 0.0;
  double phi_gt_gt = 0.0;
  double gw_fixed = 0.0;
  double wasserstein = 0.0;
  double kl_qp = 0.0;
};

extern const char* const kMetricsHeader;
std::string metrics_row_csv(const MetricsRow& row);

// eta_p = eta0 * (1 + gamma p)^(-beta)
double lr_schedule(double p, double eta0, double gamma, double beta);
// lambda_p = 2 / (1 + exp(-alpha p)) - 1
double transfer_weight(double p, double alpha);
// Row-wise argmax; ties break to the lowest class id.
std::vector<int> pseudo_labels(const Tensor& posteriors);

struct Batch {
  Tensor x;
  std::vector<int> labels;  // empty for target batches
};

// Deterministic cycling sampler; class-balanced when labels are given.
class BatchSampler {
 public:
  BatchSampler() = default;
  BatchSampler(std::size_t n, const std::vector<int>* labels, std::size_t num_classes,
               std::uint64_t seed);
  std::vector<std::size_t> next(std::size_t batch_size);

 private:
  void refill_pool(std::size_t c);
  std::vector<std::vector<std::size_t>> by_class_;  // one pool when unbalanced
  std::vector<std::vector<std::size_t>> pools_;
  std::vector<std::size_t> cursor_;
  std::size_t rotation_ = 0;
  std::mt19937_64 rng_;
};

struct TrainerCheckpoint {
  ModelParams params;
  StiefelParam stiefel;
  RadialStructure source_structure;
  RadialStructure target_structure;
};

struct FitResult {
  TrainerCheckpoint checkpoint;
  std::vector<MetricsRow> metrics;
};

class Trainer {
 public:
  Trainer(TrainConfig config, DomainDataset source, DomainDataset target);

  // One Algorithm-1 step on explicit batches. `log_diagnostics` adds the
  // full-dataset structure diagnostics to the returned row.
  MetricsRow step_with_batches(const Batch& source_batch, const Batch& target_batch,
                               bool log_diagnostics);
  // Samples batches and advances one iteration.
  MetricsRow step(bool log_diagnostics);

  FitResult fit();

  const TrainConfig& config() const { return config_; }
  const ModelParams& params() const { return params_; }
  const StiefelParam& stiefel() const { return stiefel_; }
  const RadialStructure& source_structure() const { return source_; }
  const RadialStructure& target_structure() const { return target_; }
  std::size_t iteration() const { return iteration_; }

  Batch make_source_batch();
  Batch make_target_batch();

  // Accuracy of the current model on the full target set (target labels
  // required).
  double target_accuracy() const;

 private:
  struct GradSet;

  void init_structures();
  double progress() const;
  void apply_sgd(Tensor& value, Tensor& velocity, const Tensor& grad, double lr);

  TrainConfig config_;
  DomainDataset source_data_;
  DomainDataset target_data_;
  ModelParams params_;
  StiefelParam stiefel_;
  RadialStructure source_;
  RadialStructure target_;
  std::vector<std::pair<Tensor, Tensor>> vel_extractor_;
  Tensor vel_cls_weight_;
  Tensor vel_cls_bias_;
  BatchSampler source_sampler_;
  BatchSampler target_sampler_;
  std::size_t iteration_ = 0;
};

}  // namespace drda
