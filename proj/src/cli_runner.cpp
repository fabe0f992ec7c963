#include "drda/cli_runner.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "drda/checkpoint.hpp"
#include "drda/config.hpp"
#include "drda/error.hpp"
#include "drda/trainer.hpp"

namespace drda {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// DRDA_OUT_ROOT reroots relative output directories.
fs::path resolve_out_dir(const std::string& out_dir) {
  fs::path p(out_dir);
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv("DRDA_OUT_ROOT"); root != nullptr && *root != '\0') {
    return fs::path(root) / p;
  }
  return p;
}

// Directory lock preventing concurrent writers; removed on destruction.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) : path_(dir / ".lock") {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (fs::exists(path_)) {
      throw contract_error("output directory is locked by another run: " + path_.string());
    }
    std::ofstream lock(path_);
    if (!lock) throw std::runtime_error("cannot create lockfile " + path_.string());
    lock << "locked\n";
  }
  ~DirLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
};

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string out = kMetricsHeader;
  out += "\n";
  for (const MetricsRow& row : rows) {
    out += metrics_row_csv(row);
    out += "\n";
  }
  return out;
}

double run_single(const RunConfig& config, const fs::path& out_dir) {
  auto [source, target] = build_datasets(config.data);
  TrainConfig tc = config.train;
  if (config.eval_only) tc.max_iters = 0;
  Trainer trainer(tc, std::move(source), std::move(target));
  FitResult result = trainer.fit();
  atomic_write_file((out_dir / "metrics.csv").string(), metrics_csv(result.metrics));
  Checkpoint ckpt{result.checkpoint.params, result.checkpoint.stiefel,
                  result.checkpoint.source_structure, result.checkpoint.target_structure,
                  config_hash(config)};
  save_checkpoint((out_dir / "checkpoint.json").string(), ckpt);
  double acc = std::numeric_limits<double>::quiet_NaN();
  if (!result.metrics.empty()) acc = result.metrics.back().target_accuracy;
  return acc;
}

struct EvalReport {
  json body;
};

EvalReport evaluate_checkpoint(const Checkpoint& ckpt, const DataSpec& data_spec) {
  auto [source, target] = build_datasets(data_spec);
  if (!target.labeled()) throw contract_error("eval: target dataset is unlabeled");

  const ForwardValues ft = eval_forward_target(ckpt.params, ckpt.stiefel, target.features);
  const std::vector<int> pred = pseudo_labels(ft.posteriors);
  const std::size_t k = target.num_classes;
  std::vector<std::size_t> per_class_hit(k, 0), per_class_total(k, 0);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    per_class_total[target.labels[i]]++;
    if (pred[i] == target.labels[i]) {
      ++hit;
      per_class_hit[target.labels[i]]++;
    }
  }
  json per_class = json::array();
  for (std::size_t c = 0; c < k; ++c) {
    per_class.push_back(per_class_total[c] == 0
                            ? -1.0
                            : static_cast<double>(per_class_hit[c]) /
                                  static_cast<double>(per_class_total[c]));
  }

  // ground-truth structures with the checkpointed network
  const ForwardValues fsrc = eval_forward_source(ckpt.params, source.features);
  const LocalAnchors la_s = local_anchors(fsrc.features, source.labels, k);
  RadialStructure gt_s = RadialStructure::empty(k, fsrc.features.cols(), DomainTag::kSource);
  gt_s.global_anchor = global_anchor(fsrc.features);
  gt_s.local_anchors = la_s.anchors;
  gt_s.counts = la_s.counts;
  const LocalAnchors la_t = local_anchors(ft.features, target.labels, k);
  RadialStructure gt_t = RadialStructure::empty(k, ft.features.cols(), DomainTag::kTarget);
  gt_t.global_anchor = global_anchor(ft.features);
  gt_t.local_anchors = la_t.anchors;
  gt_t.counts = la_t.counts;

  const IntraOpts opts{1.0, true, 1e-8};
  auto safe_phi = [&](const RadialStructure& a, const RadialStructure& b) -> json {
    try {
      return structure_phi(a, b, opts);
    } catch (const contract_error&) {
      return nullptr;
    }
  };

  EvalReport report;
  report.body = json{{"accuracy", static_cast<double>(hit) / static_cast<double>(pred.size())},
                     {"per_class_accuracy", per_class},
                     {"phi_source_vs_source_gt", safe_phi(ckpt.source_structure, gt_s)},
                     {"phi_target_vs_target_gt", safe_phi(ckpt.target_structure, gt_t)},
                     {"phi_source_gt_vs_target_gt", safe_phi(gt_s, gt_t)},
                     {"config_hash", ckpt.config_hash}};
  return report;
}

}  // namespace

int run_train(const std::string& config_path) {
  RunConfig config;
  try {
    config = load_run_config(config_path);
    if (config.out_dir.empty()) throw contract_error("config: out_dir is required for train");
  } catch (const contract_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  }
  try {
    const fs::path out_dir = resolve_out_dir(config.out_dir);
    DirLock lock(out_dir);
    atomic_write_file((out_dir / "resolved_config.json").string(),
                      resolved_config_json(config));
    if (config.sweep) {
      std::string summary = "preset,";
      summary += config.sweep->key;
      summary += ",target_accuracy\n";
      for (double value : config.sweep->values) {
        RunConfig point = config;
        point.sweep.reset();
        if (config.sweep->key == "lambda_T") point.train.lambda_T = value;
        else if (config.sweep->key == "lambda_ot") point.train.lambda_ot = value;
        else if (config.sweep->key == "lambda_phi") point.train.lambda_phi = value;
        else if (config.sweep->key == "lambda_R") point.train.lambda_R = value;
        else throw contract_error("config: unsupported sweep key " + config.sweep->key);
        const fs::path sub = out_dir / (config.sweep->key + "=" + fmt(value));
        fs::create_directories(sub);
        atomic_write_file((sub / "resolved_config.json").string(),
                          resolved_config_json(point));
        const double acc = run_single(point, sub);
        summary += config.preset + "," + fmt(value) + "," + fmt(acc) + "\n";
      }
      atomic_write_file((out_dir / "sweep_summary.csv").string(), summary);
    } else {
      run_single(config, out_dir);
    }
  } catch (const numeric_error& e) {
    std::cerr << "numeric abort: " << e.what() << "\n";
    return kExitNumericAbort;
  } catch (const contract_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIoError;
  }
  return kExitOk;
}

int run_eval(const std::string& checkpoint_path, const std::string& data_config_path) {
  try {
    const Checkpoint ckpt = load_checkpoint(checkpoint_path);
    const RunConfig config = load_run_config(data_config_path);
    const EvalReport report = evaluate_checkpoint(ckpt, config.data);
    const std::string text = report.body.dump(2) + "\n";
    std::cout << text;
    const fs::path out = fs::path(checkpoint_path).parent_path() / "eval.json";
    atomic_write_file(out.string(), text);
  } catch (const parse_error& e) {
    std::cerr << "eval error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const contract_error& e) {
    std::cerr << "eval error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const numeric_error& e) {
    std::cerr << "numeric abort: " << e.what() << "\n";
    return kExitNumericAbort;
  } catch (const std::exception& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIoError;
  }
  return kExitOk;
}

int run_dump_features(const std::string& checkpoint_path, const std::string& data_config_path,
                      const std::string& out_path) {
  try {
    const Checkpoint ckpt = load_checkpoint(checkpoint_path);
    const RunConfig config = load_run_config(data_config_path);
    auto [source, target] = build_datasets(config.data);
    const ForwardValues fs_vals = eval_forward_source(ckpt.params, source.features);
    const ForwardValues ft_vals = eval_forward_target(ckpt.params, ckpt.stiefel,
                                                      target.features);
    const std::size_t d = fs_vals.features.cols();

    std::string csv = "domain,label,anchor";
    for (std::size_t j = 0; j < d; ++j) {
      csv += ",z_" + std::to_string(j);
    }
    csv += "\n";
    auto emit = [&](const char* domain, int label, int anchor, const double* row) {
      csv += domain;
      csv += "," + std::to_string(label) + "," + std::to_string(anchor);
      for (std::size_t j = 0; j < d; ++j) {
        csv += ",";
        csv += fmt(row[j]);
      }
      csv += "\n";
    };
    const std::vector<int> target_labels =
        target.labeled() ? target.labels : pseudo_labels(ft_vals.posteriors);
    for (std::size_t i = 0; i < source.size(); ++i) {
      emit("source", source.labels[i], 0, fs_vals.features.data() + i * d);
    }
    for (std::size_t i = 0; i < target.size(); ++i) {
      emit("target", target_labels[i], 0, ft_vals.features.data() + i * d);
    }
    for (const RadialStructure* st : {&ckpt.source_structure, &ckpt.target_structure}) {
      emit(domain_tag_name(st->domain_tag), -1, 1, st->global_anchor.data());
      for (std::size_t c = 0; c < st->num_classes(); ++c) {
        if (!st->has_class(c)) continue;
        emit(domain_tag_name(st->domain_tag), static_cast<int>(c), 1,
             st->local_anchors.data() + c * d);
      }
    }
    atomic_write_file(out_path, csv);
  } catch (const parse_error& e) {
    std::cerr << "dump error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const contract_error& e) {
    std::cerr << "dump error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIoError;
  }
  return kExitOk;
}

}  // namespace drda
