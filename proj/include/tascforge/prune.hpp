#pragma once

#include <map>
#include <set>

#include "tascforge/nn.hpp"

namespace tascforge {

// cos(u,v) = (u.v)/(|u||v|), clamped to [-1,1] against rounding.
double cosine_similarity(std::span<const double> u, std::span<const double> v);

// Epoch-wise concatenation of one layer's flattened filter weights: filter i
// holds snapshot_0[i] .. snapshot_{N-1}[i] back to back, length N*H*W*C.
struct FilterTrajectories {
  std::size_t epochs = 0;
  std::size_t filter_elems = 0;  // H*W*C of one filter
  std::vector<std::vector<double>> per_filter;
};

struct TrajectoryStore {
  std::map<std::size_t, FilterTrajectories> layers;
};

FilterTrajectories build_trajectories(const std::vector<Tensor>& snapshots_per_epoch);
TrajectoryStore build_trajectory_store(const SnapshotStore& snapshots);

// All C(n,2) pairs of one layer, descending similarity, ties by (i,j).
std::vector<FilterPair> rank_all_pairs(const TrajectoryStore& store, std::size_t layer);

// Top ceil(p*n) pairs of the full ranking. LayerIneligible when the layer has
// fewer than max(eligibility_threshold, 2) filters or no recorded snapshots.
std::vector<FilterPair> make_filter_pairs(const TrajectoryStore& store, std::size_t layer,
                                          double prune_rate,
                                          std::size_t eligibility_threshold);

// Per pair the member with the smaller final-epoch l1 norm joins the victim
// set (ties to the lower index); deduplicated, so |victims| <= |pairs|.
std::map<std::size_t, std::set<std::size_t>> select_prune_filters(
    const std::vector<FilterPair>& pairs, const ModelState& model);

// Walks one layer's pair ranking and returns exactly `required_count`
// distinct victims: when the lower-l1 member is already taken the other
// member is added, when both are taken the pair is skipped.
std::set<std::size_t> enforce_group_exact(const std::vector<FilterPair>& ranked_pairs,
                                          const ModelState& model,
                                          std::size_t required_count);

struct PrunePlan {
  // layer -> ascending filter indices to delete
  std::map<std::size_t, std::vector<std::size_t>> victims;
};

struct PrunedNetwork {
  NetworkSpec spec;
  ModelState model;
};

// Structural deletion: drops filter rows, biases, batchnorm entries and
// Adagrad accumulators of the victims, input-channel slices of every direct
// consumer conv, and the matching rows of a flatten->dense consumer.
// Residual groups must be pruned with identical index sets.
PrunedNetwork delete_filters(const ModelState& model, const NetworkSpec& spec,
                             const PrunePlan& plan);

struct PruneIterationLog {
  int iteration = 0;
  double val_accuracy = 0.0;
  ParamCounts params;
  unsigned long long flops = 0;
  std::map<std::size_t, std::vector<std::size_t>> victims;
};

struct PruneOptions {
  double rate = 0.05;
  double min_diff = 0.02;
  int epochs_each = 50;
  std::size_t eligibility_threshold = 16;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

struct PruneResult {
  NetworkSpec spec;
  ModelState model;
  double accuracy = 0.0;  // validation accuracy of the returned model
  std::vector<PruneIterationLog> iterations;
};

// The optimize -> prune -> retrain loop. Terminates when the gap between the
// running-max and current validation accuracy exceeds min_diff (the model
// from the iteration before the violation is returned) or when no layer is
// eligible any more.
PruneResult prune_loop(ModelState model, NetworkSpec spec, const Dataset& train_data,
                       const Dataset& val_data, const ClassWeights& weights,
                       SnapshotStore initial_snapshots, double initial_accuracy,
                       const PruneOptions& options);

}  // namespace tascforge
