#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "drda/data.hpp"
#include "drda/trainer.hpp"

namespace drda {

// Dataset selection: a synthetic generator spec or IDX file paths.
struct DataSpec {
  std::string kind = "blobs";  // blobs | moons | idx
  std::size_t classes = 5;
  std::size_t samples = 2000;
  std::size_t dim = 2;
  double spread = 0.35;
  double rotation_deg = 30.0;
  std::vector<double> translation = {2.0, 0.0};
  std::vector<double> priors;  // empty = uniform
  double noise = 0.0;
  std::uint64_t seed = 7;
  std::string source_images, source_labels, target_images, target_labels;
};

// One sweep axis for the sensitivity presets.
struct SweepSpec {
  std::string key;
  std::vector<double> values;
};

struct RunConfig {
  TrainConfig train;
  DataSpec data;
  std::string out_dir;
  bool eval_only = false;  // train command writes outputs without stepping
  std::string preset = "drda-default";
  std::optional<SweepSpec> sweep;

  void validate() const;
};

// Parses a flat-key JSON document. "preset" is applied over the defaults
// first, then explicit keys override it. Unknown keys are rejected.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

// Every effective key, defaults included; parsing the echo reproduces the
// config exactly.
std::string resolved_config_json(const RunConfig& config);

// FNV-1a hash of the resolved echo.
std::string config_hash(const RunConfig& config);

std::vector<std::string> preset_names();

// Builds the domain pair described by the spec.
std::pair<DomainDataset, DomainDataset> build_datasets(const DataSpec& spec);

}  // namespace drda
