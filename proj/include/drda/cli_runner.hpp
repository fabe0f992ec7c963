#pragma once

#include <string>

namespace drda {

// Exit codes shared by the CLI surface.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfigError = 2;
inline constexpr int kExitNumericAbort = 3;
inline constexpr int kExitIoError = 4;

// train --config <path>: writes metrics.csv, checkpoint.json and
// resolved_config.json into the output directory. Sweep presets run one
// subdirectory per grid value plus a sweep_summary.csv.
int run_train(const std::string& config_path);

// eval --checkpoint <path> --data <config>: prints accuracy, per-class
// accuracy and structure diagnostics as JSON; also writes eval.json next to
// the checkpoint.
int run_eval(const std::string& checkpoint_path, const std::string& data_config_path);

// dump-features --checkpoint <path> --data <config> --out <path>: CSV of
// bottleneck features (target post-Stiefel) plus anchor rows.
int run_dump_features(const std::string& checkpoint_path, const std::string& data_config_path,
                      const std::string& out_path);

}  // namespace drda
