#pragma once

#include <random>
#include <utility>
#include <vector>

#include "drda/graph.hpp"
#include "drda/stiefel.hpp"
#include "drda/tensor.hpp"

namespace drda {

struct LayerParams {
  Tensor weight;  // in x out
  Tensor bias;    // out
};

// Feature extractor (ReLU hidden layers, linear bottleneck) plus a linear
// classifier over the bottleneck features.
struct ModelParams {
  std::vector<LayerParams> extractor;
  LayerParams classifier;  // weight: k x d, bias: k
  double temperature = 1.0;

  std::size_t input_dim() const { return extractor.front().weight.rows(); }
  std::size_t bottleneck_dim() const { return extractor.back().weight.cols(); }
  std::size_t num_classes() const { return classifier.weight.rows(); }
};

// Fan-in scaled uniform init, deterministic per rng state.
ModelParams init_model(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                       std::size_t bottleneck, std::size_t classes, double temperature,
                       std::mt19937_64& rng);

// Parameter leaves of one training-step graph.
struct ParamNodes {
  std::vector<std::pair<NodeId, NodeId>> extractor;  // (weight, bias)
  NodeId cls_weight = 0;
  NodeId cls_bias = 0;
  bool has_stiefel = false;
  NodeId stiefel = 0;
};

ParamNodes make_param_nodes(Graph& g, const ModelParams& params,
                            const StiefelParam* stiefel);

// z = G(x): hidden ReLU layers, linear last layer.
NodeId extractor_forward(Graph& g, const ParamNodes& nodes, NodeId x);
// logits = z W^T + b over the classifier parameters.
NodeId classifier_logits(Graph& g, const ParamNodes& nodes, NodeId z);
NodeId tempered_posteriors(Graph& g, NodeId logits, double temperature);

struct ForwardNodes {
  NodeId features;    // n x d (target: post-Stiefel)
  NodeId logits;      // n x k (un-tempered)
  NodeId posteriors;  // n x k, softmax(logits / t)
};

ForwardNodes forward_source(Graph& g, const ParamNodes& nodes, const Tensor& x,
                            double temperature);
// Target pathway: features pass through the Stiefel layer before the
// classifier and before any structure/transport computation.
ForwardNodes forward_target(Graph& g, const ParamNodes& nodes, const Tensor& x,
                            double temperature);

// mean over the batch of -log softmax(logits / t)[label]
NodeId tempered_cross_entropy_node(Graph& g, NodeId logits, const std::vector<int>& labels,
                                   double temperature);

// KL(Q || P) + entropy_sign * H(P), means over the batch. Q is a fixed
// soft-assignment matrix; gradients flow only through P.
NodeId consensus_reg_node(Graph& g, const Tensor& q, NodeId p, double entropy_sign);

// Value-level wrappers (scratch graph inside).
struct ForwardValues {
  Tensor features;
  Tensor logits;
  Tensor posteriors;
};
ForwardValues eval_forward_source(const ModelParams& params, const Tensor& x);
ForwardValues eval_forward_target(const ModelParams& params, const StiefelParam& stiefel,
                                  const Tensor& x);
double eval_tempered_cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                                   double temperature);
double eval_consensus_reg(const Tensor& q, const Tensor& p, double entropy_sign);

}  // namespace drda
