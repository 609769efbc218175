#pragma once

#include <string>

#include "tascforge/nn.hpp"

namespace tascforge {

// Little-endian binary checkpoint: magic "TASC", format version u16,
// self-describing layer records, then the flat weight blocks (including
// batchnorm state and Adagrad accumulators) in layer order. Round-trips
// bit-exactly.
void save_checkpoint(const std::string& path, const NetworkSpec& spec, const ModelState& model);

struct Checkpoint {
  NetworkSpec spec;
  ModelState model;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace tascforge
