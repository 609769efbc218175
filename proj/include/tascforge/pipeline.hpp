#pragma once

#include <filesystem>
#include <string>

#include "tascforge/checkpoint.hpp"
#include "tascforge/config.hpp"

namespace tascforge {

namespace exit_code {
inline constexpr int kOk = 0;
inline constexpr int kConfigError = 2;
inline constexpr int kRuntimeError = 3;
inline constexpr int kCapacityError = 4;
}  // namespace exit_code

// Run-directory layout shared by every stage.
struct RunPaths {
  std::filesystem::path out_dir;

  std::filesystem::path backbone_checkpoint() const { return out_dir / "backbone.tasc"; }
  std::filesystem::path tuned_checkpoint() const { return out_dir / "tuned.tasc"; }
  std::filesystem::path pruned_checkpoint() const { return out_dir / "pruned.tasc"; }
  std::filesystem::path pretrain_metrics() const { return out_dir / "pretrain_metrics.json"; }
  std::filesystem::path search_log() const { return out_dir / "search_log.jsonl"; }
  std::filesystem::path best_config() const { return out_dir / "best_config.json"; }
  std::filesystem::path prune_log() const { return out_dir / "prune_log.jsonl"; }
  std::filesystem::path prune_summary() const { return out_dir / "prune_summary.json"; }
  std::filesystem::path oracle_log() const { return out_dir / "oracle_log.jsonl"; }
  std::filesystem::path oracle_best() const { return out_dir / "oracle_best.json"; }
  std::filesystem::path report_json() const { return out_dir / "report.json"; }
  std::filesystem::path report_text() const { return out_dir / "report.txt"; }
};

// Deterministic per-purpose seed derivation (splitmix64 over seed ^ salt).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt);
std::uint64_t fnv1a64(const std::string& text);

// Backbone network declared by the config, with the output layer appended.
NetworkSpec backbone_spec_from_config(const RunConfig& config);

// The frozen feature-extractor prefix: the stored output layer plus
// `replace_top_k` further layers are dropped and everything left is frozen.
NetworkSpec make_extractor(const NetworkSpec& trained_spec, std::size_t replace_top_k);

// Stage entry points; they return process exit codes.
int cmd_pretrain(const RunConfig& config);
int cmd_tune(const RunConfig& config, const std::string& backbone_path = "");
int cmd_prune(const RunConfig& config, const std::string& model_path = "");
int cmd_run(const RunConfig& config);
int cmd_oracle(const RunConfig& config);
int cmd_report(const RunConfig& config);

// Maps an Error to the exit-code contract (2 config, 3 runtime, 4 capacity).
int exit_code_for(const Error& error);

}  // namespace tascforge
