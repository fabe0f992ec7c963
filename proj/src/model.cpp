#include "drda/model.hpp"

#include <cmath>

#include "drda/error.hpp"

namespace drda {

ModelParams init_model(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                       std::size_t bottleneck, std::size_t classes, double temperature,
                       std::mt19937_64& rng) {
  if (input_dim < 1 || bottleneck < 1 || classes < 1) {
    throw contract_error("init_model: dimensions must be >= 1");
  }
  if (temperature <= 0.0) throw contract_error("init_model: temperature must be > 0");
  ModelParams p;
  p.temperature = temperature;
  std::vector<std::size_t> widths;
  widths.push_back(input_dim);
  for (std::size_t h : hidden) widths.push_back(h);
  widths.push_back(bottleneck);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(widths[l]));
    p.extractor.push_back(LayerParams{
        random_uniform({widths[l], widths[l + 1]}, -bound, bound, rng),
        random_uniform({widths[l + 1]}, -bound, bound, rng)});
  }
  const double cbound = 1.0 / std::sqrt(static_cast<double>(bottleneck));
  p.classifier = LayerParams{random_uniform({classes, bottleneck}, -cbound, cbound, rng),
                             random_uniform({classes}, -cbound, cbound, rng)};
  return p;
}

ParamNodes make_param_nodes(Graph& g, const ModelParams& params,
                            const StiefelParam* stiefel) {
  ParamNodes nodes;
  for (const LayerParams& layer : params.extractor) {
    nodes.extractor.emplace_back(g.param(layer.weight), g.param(layer.bias));
  }
  nodes.cls_weight = g.param(params.classifier.weight);
  nodes.cls_bias = g.param(params.classifier.bias);
  if (stiefel != nullptr) {
    nodes.has_stiefel = true;
    nodes.stiefel = g.param(stiefel->matrix);
  }
  return nodes;
}

NodeId extractor_forward(Graph& g, const ParamNodes& nodes, NodeId x) {
  NodeId h = x;
  for (std::size_t l = 0; l < nodes.extractor.size(); ++l) {
    h = g.add_rowvec(g.matmul(h, nodes.extractor[l].first), nodes.extractor[l].second);
    if (l + 1 < nodes.extractor.size()) h = g.relu(h);
  }
  return h;
}

NodeId classifier_logits(Graph& g, const ParamNodes& nodes, NodeId z) {
  return g.add_rowvec(g.matmul(z, g.transpose(nodes.cls_weight)), nodes.cls_bias);
}

NodeId tempered_posteriors(Graph& g, NodeId logits, double temperature) {
  if (temperature <= 0.0) throw contract_error("tempered_posteriors: temperature must be > 0");
  return g.row_softmax(g.mul_scalar(logits, 1.0 / temperature));
}

ForwardNodes forward_source(Graph& g, const ParamNodes& nodes, const Tensor& x,
                            double temperature) {
  const NodeId input = g.constant(x);
  const NodeId z = extractor_forward(g, nodes, input);
  const NodeId logits = classifier_logits(g, nodes, z);
  return ForwardNodes{z, logits, tempered_posteriors(g, logits, temperature)};
}

ForwardNodes forward_target(Graph& g, const ParamNodes& nodes, const Tensor& x,
                            double temperature) {
  if (!nodes.has_stiefel) {
    throw contract_error("forward_target: no Stiefel parameter in graph");
  }
  const NodeId input = g.constant(x);
  const NodeId z = g.matmul(extractor_forward(g, nodes, input), nodes.stiefel);
  const NodeId logits = classifier_logits(g, nodes, z);
  return ForwardNodes{z, logits, tempered_posteriors(g, logits, temperature)};
}

NodeId tempered_cross_entropy_node(Graph& g, NodeId logits, const std::vector<int>& labels,
                                   double temperature) {
  if (temperature <= 0.0) {
    throw contract_error("tempered_cross_entropy: temperature must be > 0");
  }
  const NodeId scaled = g.mul_scalar(logits, 1.0 / temperature);
  const NodeId lse = g.row_logsumexp(scaled);
  const NodeId picked = g.gather(scaled, labels);
  return g.mean_all(g.sub(lse, picked));
}

NodeId consensus_reg_node(Graph& g, const Tensor& q, NodeId p, double entropy_sign) {
  const Tensor& pv = g.value(p);
  if (q.rank() != 2 || !q.same_shape(pv)) {
    throw contract_error("consensus_reg: Q shape " + q.shape_str() +
                         " does not match P " + pv.shape_str());
  }
  const double n = static_cast<double>(q.rows());
  double q_log_q = 0.0;
  for (std::size_t i = 0; i < q.numel(); ++i) {
    if (q[i] > 0.0) q_log_q += q[i] * std::log(q[i]);
  }
  const NodeId log_p = g.log_clamped(p);
  const NodeId cross = g.mul_scalar(g.sum_all(g.mul(g.constant(q), log_p)), -1.0 / n);
  const NodeId kl = g.add_scalar(cross, q_log_q / n);
  const NodeId entropy = g.mul_scalar(g.sum_all(g.mul(p, log_p)), -1.0 / n);
  return g.add(kl, g.mul_scalar(entropy, entropy_sign));
}

ForwardValues eval_forward_source(const ModelParams& params, const Tensor& x) {
  Graph g;
  const ParamNodes nodes = make_param_nodes(g, params, nullptr);
  const ForwardNodes f = forward_source(g, nodes, x, params.temperature);
  return ForwardValues{g.value(f.features), g.value(f.logits), g.value(f.posteriors)};
}

ForwardValues eval_forward_target(const ModelParams& params, const StiefelParam& stiefel,
                                  const Tensor& x) {
  Graph g;
  const ParamNodes nodes = make_param_nodes(g, params, &stiefel);
  const ForwardNodes f = forward_target(g, nodes, x, params.temperature);
  return ForwardValues{g.value(f.features), g.value(f.logits), g.value(f.posteriors)};
}

double eval_tempered_cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                                   double temperature) {
  Graph g;
  const NodeId l = g.constant(logits);
  return g.value(tempered_cross_entropy_node(g, l, labels, temperature)).item();
}

double eval_consensus_reg(const Tensor& q, const Tensor& p, double entropy_sign) {
  Graph g;
  return g.value(consensus_reg_node(g, q, g.constant(p), entropy_sign)).item();
}

}  // namespace drda
