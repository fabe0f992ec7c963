#include "drda/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include <json.hpp>

#include "drda/error.hpp"

namespace drda {

namespace {

using nlohmann::json;

struct Preset {
  json overrides;
  std::optional<SweepSpec> sweep;
};

const std::map<std::string, Preset>& presets() {
  static const std::map<std::string, Preset> table = [] {
    std::map<std::string, Preset> t;
    t["drda-default"] = Preset{json::object(), std::nullopt};
    t["source-only"] = Preset{
        json{{"lambda_T", 0.0}, {"lambda_phi", 0.0}, {"lambda_ot", 0.0}, {"lambda_R", 0.0}},
        std::nullopt};
    t["wo-angular"] = Preset{json{{"no_angular", true}}, std::nullopt};
    t["wo-stiefel"] = Preset{json{{"no_stiefel", true}}, std::nullopt};
    t["wo-consensus"] = Preset{json{{"no_consensus", true}}, std::nullopt};
    t["wo-ot"] = Preset{json{{"no_ot", true}}, std::nullopt};
    t["burn-in-25"] = Preset{json{{"burn_in", 0.25}}, std::nullopt};
    t["burn-in-50"] = Preset{json{{"burn_in", 0.5}}, std::nullopt};
    t["burn-in-75"] = Preset{json{{"burn_in", 0.75}}, std::nullopt};
    // alternative tuning reported by the sensitivity analysis
    t["drda-sens-tuned"] = Preset{
        json{{"lambda_T", 150.0}, {"lambda_phi", 3.0}, {"lambda_ot", 0.001}, {"lambda_R", 20.0}},
        std::nullopt};
    t["sens-lambdaT-grid"] =
        Preset{json::object(), SweepSpec{"lambda_T", {1, 50, 100, 150, 200, 250}}};
    t["sens-lambdaOT-grid"] = Preset{
        json::object(), SweepSpec{"lambda_ot", {5e-5, 1e-4, 5e-4, 1e-3, 5e-3, 1e-2}}};
    t["sens-lambdaPhi-grid"] =
        Preset{json::object(), SweepSpec{"lambda_phi", {0.1, 0.3, 0.6, 1.0, 3.0, 10.0}}};
    t["sens-lambdaR-grid"] =
        Preset{json::object(), SweepSpec{"lambda_R", {0.1, 1.0, 5.0, 10.0, 20.0, 50.0}}};
    return t;
  }();
  return table;
}

void apply_key(RunConfig& c, const std::string& key, const json& v) {
  try {
    // trainer
    if (key == "lambda_T") c.train.lambda_T = v.get<double>();
    else if (key == "lambda_phi") c.train.lambda_phi = v.get<double>();
    else if (key == "lambda_ot") c.train.lambda_ot = v.get<double>();
    else if (key == "lambda_R") c.train.lambda_R = v.get<double>();
    else if (key == "lambda_dist") c.train.lambda_dist = v.get<double>();
    else if (key == "eta_ema") c.train.eta_ema = v.get<double>();
    else if (key == "epsilon_ot") c.train.epsilon_ot = v.get<double>();
    else if (key == "ot_max_iter") c.train.ot_max_iter = v.get<int>();
    else if (key == "ot_tol") c.train.ot_tol = v.get<double>();
    else if (key == "eta0") c.train.eta0 = v.get<double>();
    else if (key == "gamma") c.train.gamma = v.get<double>();
    else if (key == "beta") c.train.beta = v.get<double>();
    else if (key == "alpha") c.train.alpha = v.get<double>();
    else if (key == "momentum") c.train.momentum = v.get<double>();
    else if (key == "task_lr_scale") c.train.task_lr_scale = v.get<double>();
    else if (key == "temperature") c.train.temperature = v.get<double>();
    else if (key == "burn_in") c.train.burn_in = v.get<double>();
    else if (key == "entropy_sign") c.train.entropy_sign = v.get<double>();
    else if (key == "batch_size") c.train.batch_size = v.get<std::size_t>();
    else if (key == "max_iters") c.train.max_iters = v.get<std::size_t>();
    else if (key == "log_interval") c.train.log_interval = v.get<std::size_t>();
    else if (key == "seed") c.train.seed = v.get<std::uint64_t>();
    else if (key == "hidden") c.train.hidden = v.get<std::vector<std::size_t>>();
    else if (key == "bottleneck") c.train.bottleneck = v.get<std::size_t>();
    else if (key == "no_angular") c.train.no_angular = v.get<bool>();
    else if (key == "no_stiefel") c.train.no_stiefel = v.get<bool>();
    else if (key == "no_consensus") c.train.no_consensus = v.get<bool>();
    else if (key == "no_ot") c.train.no_ot = v.get<bool>();
    // data
    else if (key == "data_kind") c.data.kind = v.get<std::string>();
    else if (key == "data_classes") c.data.classes = v.get<std::size_t>();
    else if (key == "data_samples") c.data.samples = v.get<std::size_t>();
    else if (key == "data_dim") c.data.dim = v.get<std::size_t>();
    else if (key == "data_spread") c.data.spread = v.get<double>();
    else if (key == "data_rotation_deg") c.data.rotation_deg = v.get<double>();
    else if (key == "data_translation") c.data.translation = v.get<std::vector<double>>();
    else if (key == "data_priors") c.data.priors = v.get<std::vector<double>>();
    else if (key == "data_noise") c.data.noise = v.get<double>();
    else if (key == "data_seed") c.data.seed = v.get<std::uint64_t>();
    else if (key == "data_source_images") c.data.source_images = v.get<std::string>();
    else if (key == "data_source_labels") c.data.source_labels = v.get<std::string>();
    else if (key == "data_target_images") c.data.target_images = v.get<std::string>();
    else if (key == "data_target_labels") c.data.target_labels = v.get<std::string>();
    // run
    else if (key == "out_dir") c.out_dir = v.get<std::string>();
    else if (key == "eval_only") c.eval_only = v.get<bool>();
    else throw contract_error("config: unknown key '" + key + "'");
  } catch (const json::exception& e) {
    throw contract_error("config: bad value for key '" + key + "': " + e.what());
  }
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void RunConfig::validate() const {
  train.validate();
  if (data.kind != "blobs" && data.kind != "moons" && data.kind != "idx") {
    throw contract_error("config: data_kind must be blobs, moons or idx");
  }
  if (data.kind == "blobs") {
    if (data.classes < 2) throw contract_error("config: data_classes must be >= 2");
    if (data.samples < data.classes) throw contract_error("config: data_samples < data_classes");
    if (data.dim < 2) throw contract_error("config: data_dim must be >= 2");
    if (data.spread <= 0.0) throw contract_error("config: data_spread must be > 0");
  } else if (data.kind == "moons") {
    if (data.samples < 2) throw contract_error("config: data_samples must be >= 2");
    if (data.noise < 0.0) throw contract_error("config: data_noise must be >= 0");
  } else {
    if (data.source_images.empty() || data.source_labels.empty() ||
        data.target_images.empty() || data.target_labels.empty()) {
      throw contract_error("config: idx data needs all four file paths");
    }
  }
  if (!data.translation.empty()) {
    const std::size_t want = data.kind == "moons" ? 2 : data.dim;
    if (data.kind != "idx" && data.translation.size() != want) {
      throw contract_error("config: data_translation dimension mismatch");
    }
  }
}

RunConfig parse_run_config(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw contract_error(std::string("config: invalid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw contract_error("config: top level must be an object");

  RunConfig c;
  if (doc.contains("preset")) {
    if (!doc["preset"].is_string()) throw contract_error("config: preset must be a string");
    c.preset = doc["preset"].get<std::string>();
  }
  const auto it = presets().find(c.preset);
  if (it == presets().end()) throw contract_error("config: unknown preset '" + c.preset + "'");
  for (const auto& [key, value] : it->second.overrides.items()) apply_key(c, key, value);
  c.sweep = it->second.sweep;
  for (const auto& [key, value] : doc.items()) {
    if (key == "preset") continue;
    apply_key(c, key, value);
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw contract_error("config: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_run_config(text);
}

std::string resolved_config_json(const RunConfig& c) {
  json j;
  j["preset"] = c.preset;
  j["lambda_T"] = c.train.lambda_T;
  j["lambda_phi"] = c.train.lambda_phi;
  j["lambda_ot"] = c.train.lambda_ot;
  j["lambda_R"] = c.train.lambda_R;
  j["lambda_dist"] = c.train.lambda_dist;
  j["eta_ema"] = c.train.eta_ema;
  j["epsilon_ot"] = c.train.epsilon_ot;
  j["ot_max_iter"] = c.train.ot_max_iter;
  j["ot_tol"] = c.train.ot_tol;
  j["eta0"] = c.train.eta0;
  j["gamma"] = c.train.gamma;
  j["beta"] = c.train.beta;
  j["alpha"] = c.train.alpha;
  j["momentum"] = c.train.momentum;
  j["task_lr_scale"] = c.train.task_lr_scale;
  j["temperature"] = c.train.temperature;
  j["burn_in"] = c.train.burn_in;
  j["entropy_sign"] = c.train.entropy_sign;
  j["batch_size"] = c.train.batch_size;
  j["max_iters"] = c.train.max_iters;
  j["log_interval"] = c.train.log_interval;
  j["seed"] = c.train.seed;
  j["hidden"] = c.train.hidden;
  j["bottleneck"] = c.train.bottleneck;
  j["no_angular"] = c.train.no_angular;
  j["no_stiefel"] = c.train.no_stiefel;
  j["no_consensus"] = c.train.no_consensus;
  j["no_ot"] = c.train.no_ot;
  j["data_kind"] = c.data.kind;
  j["data_classes"] = c.data.classes;
  j["data_samples"] = c.data.samples;
  j["data_dim"] = c.data.dim;
  j["data_spread"] = c.data.spread;
  j["data_rotation_deg"] = c.data.rotation_deg;
  j["data_translation"] = c.data.translation;
  j["data_priors"] = c.data.priors;
  j["data_noise"] = c.data.noise;
  j["data_seed"] = c.data.seed;
  j["data_source_images"] = c.data.source_images;
  j["data_source_labels"] = c.data.source_labels;
  j["data_target_images"] = c.data.target_images;
  j["data_target_labels"] = c.data.target_labels;
  j["out_dir"] = c.out_dir;
  j["eval_only"] = c.eval_only;
  return j.dump(2) + "\n";
}

std::string config_hash(const RunConfig& config) {
  const std::string text = resolved_config_json(config);
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<std::string> preset_names() {
  std::vector<std::string> names;
  for (const auto& [name, preset] : presets()) names.push_back(name);
  return names;
}

std::pair<DomainDataset, DomainDataset> build_datasets(const DataSpec& spec) {
  if (spec.kind == "blobs") {
    ShiftSpec shift;
    shift.rotation_angle = spec.rotation_deg * std::acos(-1.0) / 180.0;
    shift.translation = spec.translation;
    shift.class_priors = spec.priors;
    shift.noise_scale = spec.noise;
    return gen_gaussian_blobs(spec.classes, spec.samples, spec.dim, spec.spread, shift,
                              spec.seed);
  }
  if (spec.kind == "moons") {
    ShiftSpec shift;
    shift.rotation_angle = spec.rotation_deg * std::acos(-1.0) / 180.0;
    shift.translation = spec.translation;
    shift.noise_scale = 0.0;
    return gen_two_moons_pair(spec.samples, spec.noise, shift, spec.seed);
  }
  DomainDataset source = load_idx(spec.source_images, spec.source_labels);
  DomainDataset target = load_idx(spec.target_images, spec.target_labels);
  source.domain_tag = DomainTag::kSource;
  target.domain_tag = DomainTag::kTarget;
  const std::size_t k = std::max(source.num_classes, target.num_classes);
  source.num_classes = k;
  target.num_classes = k;
  return {std::move(source), std::move(target)};
}

}  // namespace drda
