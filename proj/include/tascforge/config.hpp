#pragma once

#include <cstdint>
#include <string>

#include "tascforge/nn.hpp"
#include "tascforge/searchspace.hpp"

namespace tascforge {

// Full run configuration, parsed from a plain-text key-value file with dotted
// section prefixes ("bo.k0 = 5"). Unknown keys are rejected.
struct DataConfig {
  std::string kind = "synthetic";  // synthetic | idx
  int classes = 4;
  int samples_per_class = 75;
  std::size_t height = 12, width = 12, channels = 1;
  double val_fraction = 0.2;
  std::string source_images, source_labels;  // idx mode
  std::string target_images, target_labels;
};

struct PretrainConfig {
  int epochs = 12;
  std::size_t batch_size = 32;
};

struct TuneStageConfig {
  std::size_t replace_top_k = 0;  // extra backbone layers replaced besides the output layer
  bool finetune_backbone = false;
  std::size_t k0 = 5;
  std::size_t budget = 20;
  std::size_t candidates_per_step = 512;
  int proxy_epochs = 10;
  std::size_t batch_size = 32;
};

struct PruneStageConfig {
  double rate = 0.05;
  double min_diff = 0.02;
  int epochs_each = 10;
  std::size_t eligibility_threshold = 16;
  std::size_t batch_size = 32;
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::string out_dir = "runs/default";
  DataConfig data;
  std::vector<LayerSpec> backbone_layers;
  std::vector<std::vector<std::size_t>> backbone_residual_groups;
  PretrainConfig pretrain;
  SearchSpace space;
  TuneStageConfig tune;
  PruneStageConfig prune;
  unsigned long long oracle_cap = 4096;
};

// Parses and validates; InvalidConfig on unknown keys, bad values or ranges.
RunConfig load_config(const std::string& path);
RunConfig parse_config_text(const std::string& text);

}  // namespace tascforge
