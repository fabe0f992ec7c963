#include "drda/checkpoint.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "drda/error.hpp"

namespace drda {

namespace {

using nlohmann::json;

json tensor_to_json(const Tensor& t) {
  return json{{"shape", t.shape()}, {"data", t.vec()}};
}

Tensor tensor_from_json(const json& j) {
  if (!j.is_object() || !j.contains("shape") || !j.contains("data")) {
    throw contract_error("checkpoint: malformed tensor entry");
  }
  return Tensor(j.at("shape").get<std::vector<std::size_t>>(),
                j.at("data").get<std::vector<double>>());
}

json structure_to_json(const RadialStructure& s) {
  return json{{"domain", domain_tag_name(s.domain_tag)},
              {"global_anchor", tensor_to_json(s.global_anchor)},
              {"local_anchors", tensor_to_json(s.local_anchors)},
              {"counts", tensor_to_json(s.counts)}};
}

RadialStructure structure_from_json(const json& j) {
  RadialStructure s;
  s.domain_tag = j.at("domain").get<std::string>() == "target" ? DomainTag::kTarget
                                                               : DomainTag::kSource;
  s.global_anchor = tensor_from_json(j.at("global_anchor"));
  s.local_anchors = tensor_from_json(j.at("local_anchors"));
  s.counts = tensor_from_json(j.at("counts"));
  if (s.local_anchors.rank() != 2 || s.local_anchors.rows() != s.counts.numel() ||
      s.local_anchors.cols() != s.global_anchor.numel()) {
    throw contract_error("checkpoint: inconsistent structure shapes");
  }
  return s;
}

}  // namespace

void atomic_write_file(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp + " for writing");
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  json layers = json::array();
  for (const LayerParams& l : ckpt.params.extractor) {
    layers.push_back(json{{"weight", tensor_to_json(l.weight)},
                          {"bias", tensor_to_json(l.bias)}});
  }
  json j{{"format", "drda-checkpoint-v1"},
         {"config_hash", ckpt.config_hash},
         {"temperature", ckpt.params.temperature},
         {"extractor", layers},
         {"classifier",
          json{{"weight", tensor_to_json(ckpt.params.classifier.weight)},
               {"bias", tensor_to_json(ckpt.params.classifier.bias)}}},
         {"stiefel",
          json{{"matrix", tensor_to_json(ckpt.stiefel.matrix)},
               {"learning_rate_scale", ckpt.stiefel.learning_rate_scale}}},
         {"source_structure", structure_to_json(ckpt.source_structure)},
         {"target_structure", structure_to_json(ckpt.target_structure)}};
  atomic_write_file(path, j.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw parse_error("checkpoint: cannot open " + path, 0);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw parse_error(std::string("checkpoint: invalid JSON: ") + e.what(), 0);
  }
  if (j.value("format", "") != "drda-checkpoint-v1") {
    throw parse_error("checkpoint: unknown format field", 0);
  }
  Checkpoint ckpt;
  try {
    ckpt.config_hash = j.value("config_hash", "");
    ckpt.params.temperature = j.at("temperature").get<double>();
    for (const json& layer : j.at("extractor")) {
      ckpt.params.extractor.push_back(LayerParams{tensor_from_json(layer.at("weight")),
                                                  tensor_from_json(layer.at("bias"))});
    }
    ckpt.params.classifier = LayerParams{tensor_from_json(j.at("classifier").at("weight")),
                                         tensor_from_json(j.at("classifier").at("bias"))};
    ckpt.stiefel.matrix = tensor_from_json(j.at("stiefel").at("matrix"));
    ckpt.stiefel.learning_rate_scale = j.at("stiefel").at("learning_rate_scale").get<double>();
    ckpt.source_structure = structure_from_json(j.at("source_structure"));
    ckpt.target_structure = structure_from_json(j.at("target_structure"));
  } catch (const json::exception& e) {
    throw parse_error(std::string("checkpoint: missing or mistyped field: ") + e.what(), 0);
  }
  if (ckpt.params.extractor.empty()) throw parse_error("checkpoint: empty extractor", 0);
  return ckpt;
}

}  // namespace drda
