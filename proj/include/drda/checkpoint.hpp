#pragma once

#include <string>

#include "drda/model.hpp"
#include "drda/radial.hpp"
#include "drda/stiefel.hpp"

namespace drda {

// Everything needed to resume evaluation: network weights, the Stiefel
// layer, both radial structures, and the hash of the resolved run config.
struct Checkpoint {
  ModelParams params;
  StiefelParam stiefel;
  RadialStructure source_structure;
  RadialStructure target_structure;
  std::string config_hash;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// temp-file + rename; a killed writer never leaves a partial file behind.
void atomic_write_file(const std::string& path, const std::string& content);

}  // namespace drda
