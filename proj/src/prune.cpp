#include "tascforge/prune.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>

namespace tascforge {

double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) fail(ErrorCode::ShapeMismatch, "cosine: length mismatch");
  double nu = l2_norm(u), nv = l2_norm(v);
  if (nu == 0.0 || nv == 0.0) fail(ErrorCode::ZeroNormVector, "cosine of a zero-norm vector");
  return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

FilterTrajectories build_trajectories(const std::vector<Tensor>& snapshots_per_epoch) {
  if (snapshots_per_epoch.empty())
    fail(ErrorCode::InvalidArgument, "at least one epoch of snapshots required");
  const auto& shape = snapshots_per_epoch.front().shape();
  for (const auto& t : snapshots_per_epoch)
    if (t.shape() != shape)
      fail(ErrorCode::InconsistentShapes, "snapshot shapes differ across epochs");

  FilterTrajectories out;
  out.epochs = snapshots_per_epoch.size();
  const std::size_t filters = shape[0];
  out.filter_elems = snapshots_per_epoch.front().size() / filters;
  out.per_filter.resize(filters);
  for (std::size_t f = 0; f < filters; ++f) {
    auto& traj = out.per_filter[f];
    traj.reserve(out.epochs * out.filter_elems);
    for (const auto& snap : snapshots_per_epoch) {
      const double* base = snap.data() + f * out.filter_elems;
      traj.insert(traj.end(), base, base + out.filter_elems);
    }
  }
  return out;
}

TrajectoryStore build_trajectory_store(const SnapshotStore& snapshots) {
  TrajectoryStore store;
  for (const auto& [layer, snaps] : snapshots.per_layer)
    store.layers[layer] = build_trajectories(snaps);
  return store;
}

std::vector<FilterPair> rank_all_pairs(const TrajectoryStore& store, std::size_t layer) {
  auto it = store.layers.find(layer);
  if (it == store.layers.end())
    fail(ErrorCode::LayerIneligible, "no trajectories recorded for layer " + std::to_string(layer));
  const auto& traj = it->second;
  const std::size_t n = traj.per_filter.size();
  if (n < 2) fail(ErrorCode::LayerIneligible, "need at least two filters to pair");

  std::vector<FilterPair> pairs;
  pairs.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      pairs.push_back({layer, i, j, cosine_similarity(traj.per_filter[i], traj.per_filter[j])});
  std::sort(pairs.begin(), pairs.end(), [](const FilterPair& a, const FilterPair& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    if (a.i != b.i) return a.i < b.i;
    return a.j < b.j;
  });
  return pairs;
}

std::vector<FilterPair> make_filter_pairs(const TrajectoryStore& store, std::size_t layer,
                                          double prune_rate,
                                          std::size_t eligibility_threshold) {
  if (!(prune_rate > 0.0 && prune_rate < 1.0))
    fail(ErrorCode::InvalidArgument, "prune rate must be in (0,1)");
  auto it = store.layers.find(layer);
  if (it == store.layers.end())
    fail(ErrorCode::LayerIneligible, "no trajectories recorded for layer " + std::to_string(layer));
  const std::size_t n = it->second.per_filter.size();
  if (n < std::max<std::size_t>(eligibility_threshold, 2))
    fail(ErrorCode::LayerIneligible,
         "layer " + std::to_string(layer) + " is below the eligibility threshold");

  auto ranked = rank_all_pairs(store, layer);
  std::size_t count = static_cast<std::size_t>(std::ceil(prune_rate * static_cast<double>(n)));
  count = std::min(count, ranked.size());
  ranked.resize(count);
  return ranked;
}

namespace {

double filter_l1(const ModelState& model, std::size_t layer, std::size_t filter) {
  const auto& w = model.layers[layer].weight;
  const std::size_t elems = w.size() / w.dim(0);
  return l1_norm(std::span<const double>(w.data() + filter * elems, elems));
}

// the pair member with the smaller final-epoch l1 norm; ties to the lower index
std::size_t pair_victim(const ModelState& model, const FilterPair& p) {
  double li = filter_l1(model, p.layer, p.i);
  double lj = filter_l1(model, p.layer, p.j);
  return lj < li ? p.j : p.i;
}

}  // namespace

std::map<std::size_t, std::set<std::size_t>> select_prune_filters(
    const std::vector<FilterPair>& pairs, const ModelState& model) {
  std::map<std::size_t, std::set<std::size_t>> victims;
  for (const auto& p : pairs) victims[p.layer].insert(pair_victim(model, p));
  return victims;
}

std::set<std::size_t> enforce_group_exact(const std::vector<FilterPair>& ranked_pairs,
                                          const ModelState& model,
                                          std::size_t required_count) {
  if (ranked_pairs.empty())
    fail(ErrorCode::InvalidArgument, "enforce_group_exact needs a pair ranking");
  const std::size_t layer = ranked_pairs.front().layer;
  const std::size_t n = model.layers[layer].weight.dim(0);
  if (required_count > n - 1)
    fail(ErrorCode::InsufficientDistinctFilters,
         "cannot prune " + std::to_string(required_count) + " of " + std::to_string(n) +
             " filters");

  std::set<std::size_t> victims;
  for (const auto& p : ranked_pairs) {
    if (victims.size() == required_count) break;
    std::size_t first = pair_victim(model, p);
    std::size_t other = first == p.i ? p.j : p.i;
    if (!victims.count(first)) {
      victims.insert(first);
    } else if (!victims.count(other)) {
      victims.insert(other);  // depth compatibility: take the pair's other member
    }
    // both already victims: skip and continue down the ranking
  }
  if (victims.size() != required_count)
    fail(ErrorCode::InsufficientDistinctFilters,
         "pair ranking exhausted before reaching the required victim count");
  return victims;
}

namespace {

Tensor slice_dim0(const Tensor& t, const std::vector<std::size_t>& keep) {
  auto shape = t.shape();
  const std::size_t block = t.size() / shape[0];
  shape[0] = keep.size();
  Tensor out(shape);
  for (std::size_t r = 0; r < keep.size(); ++r)
    std::copy_n(t.data() + keep[r] * block, block, out.data() + r * block);
  return out;
}

// conv weight {F,k,k,C}: keep a subset of the trailing channel dim
Tensor slice_last_dim(const Tensor& t, const std::vector<std::size_t>& keep) {
  auto shape = t.shape();
  const std::size_t c = shape.back();
  const std::size_t rows = t.size() / c;
  shape.back() = keep.size();
  Tensor out(shape);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t e = 0; e < keep.size(); ++e)
      out[r * keep.size() + e] = t[r * c + keep[e]];
  return out;
}

void maybe(Tensor& dst, const Tensor& src, Tensor (*op)(const Tensor&, const std::vector<std::size_t>&),
           const std::vector<std::size_t>& keep) {
  if (src.size() > 0) dst = op(src, keep);
}

}  // namespace

PrunedNetwork delete_filters(const ModelState& model, const NetworkSpec& spec,
                             const PrunePlan& plan) {
  auto shapes = infer_shapes(spec);

  for (const auto& [layer, victims] : plan.victims) {
    if (layer >= spec.layers.size() || spec.layers[layer].kind != LayerKind::Conv)
      fail(ErrorCode::InvalidArgument, "prune plan targets a non-conv layer");
    const std::size_t f = static_cast<std::size_t>(spec.layers[layer].filters);
    if (!std::is_sorted(victims.begin(), victims.end()) ||
        std::adjacent_find(victims.begin(), victims.end()) != victims.end())
      fail(ErrorCode::InvalidArgument, "victim indices must be ascending and unique");
    if (!victims.empty() && victims.back() >= f)
      fail(ErrorCode::InvalidArgument, "victim index out of range");
    if (victims.size() >= f)
      fail(ErrorCode::WouldEmptyLayer,
           "plan deletes every filter of layer " + std::to_string(layer));
  }

  // grouped layers must be pruned together and identically
  for (const auto& group : spec.residual_groups) {
    std::size_t planned = 0;
    for (std::size_t m : group) planned += plan.victims.count(m);
    if (planned == 0) continue;
    if (planned != group.size())
      fail(ErrorCode::GroupMismatch, "residual group pruned only partially");
    const auto& ref = plan.victims.at(group.front());
    for (std::size_t m : group)
      if (plan.victims.at(m) != ref)
        fail(ErrorCode::GroupMismatch, "residual group victim sets differ");
  }

  // keep lists for the producers
  std::vector<std::vector<std::size_t>> keep_out(spec.layers.size());
  for (const auto& [layer, victims] : plan.victims) {
    const std::size_t f = static_cast<std::size_t>(spec.layers[layer].filters);
    auto& keep = keep_out[layer];
    std::size_t vi = 0;
    for (std::size_t i = 0; i < f; ++i) {
      if (vi < victims.size() && victims[vi] == i) {
        vi++;
        continue;
      }
      keep.push_back(i);
    }
  }

  // input keep lists for the weight-bearing consumers
  std::vector<std::optional<std::vector<std::size_t>>> keep_in(spec.layers.size());
  auto set_keep_in = [&](std::size_t consumer, std::vector<std::size_t> rows) {
    if (keep_in[consumer] && *keep_in[consumer] != rows)
      fail(ErrorCode::GroupMismatch, "conflicting channel deletions reach one consumer");
    keep_in[consumer] = std::move(rows);
  };
  for (const auto& [layer, victims] : plan.victims) {
    (void)victims;
    bool flattened = false;
    std::size_t flat_positions = 0;  // spatial positions at the flatten point
    const std::size_t channels = static_cast<std::size_t>(spec.layers[layer].filters);
    for (std::size_t j = layer + 1; j < spec.layers.size(); ++j) {
      const auto kind = spec.layers[j].kind;
      if (kind == LayerKind::MaxPool || kind == LayerKind::Dropout) continue;
      if (kind == LayerKind::Flatten) {
        flattened = true;
        flat_positions = shapes[j - 1].h * shapes[j - 1].w;
        continue;
      }
      if (kind == LayerKind::Conv) {
        set_keep_in(j, keep_out[layer]);
        break;
      }
      // Dense or Output after a flatten: drop the rows of every spatial
      // position of each deleted channel
      if (!flattened)
        fail(ErrorCode::ShapeMismatch, "dense consumer without a flatten in between");
      std::vector<std::size_t> rows;
      rows.reserve(flat_positions * keep_out[layer].size());
      for (std::size_t pos = 0; pos < flat_positions; ++pos)
        for (std::size_t ch : keep_out[layer]) rows.push_back(pos * channels + ch);
      set_keep_in(j, std::move(rows));
      break;
    }
  }

  PrunedNetwork out;
  out.spec = spec;
  for (const auto& [layer, victims] : plan.victims)
    out.spec.layers[layer].filters = static_cast<int>(keep_out[layer].size());

  out.model.dropout_rng = model.dropout_rng;
  out.model.layers.resize(model.layers.size());
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    LayerState state = model.layers[li];
    if (!keep_out[li].empty() || plan.victims.count(li)) {
      const auto& keep = keep_out[li];
      maybe(state.weight, state.weight, slice_dim0, keep);
      maybe(state.bias, state.bias, slice_dim0, keep);
      maybe(state.bn_scale, state.bn_scale, slice_dim0, keep);
      maybe(state.bn_shift, state.bn_shift, slice_dim0, keep);
      maybe(state.bn_mean, state.bn_mean, slice_dim0, keep);
      maybe(state.bn_var, state.bn_var, slice_dim0, keep);
      maybe(state.acc_weight, state.acc_weight, slice_dim0, keep);
      maybe(state.acc_bias, state.acc_bias, slice_dim0, keep);
      maybe(state.acc_scale, state.acc_scale, slice_dim0, keep);
      maybe(state.acc_shift, state.acc_shift, slice_dim0, keep);
    }
    if (keep_in[li]) {
      if (spec.layers[li].kind == LayerKind::Conv) {
        maybe(state.weight, state.weight, slice_last_dim, *keep_in[li]);
        maybe(state.acc_weight, state.acc_weight, slice_last_dim, *keep_in[li]);
      } else {
        maybe(state.weight, state.weight, slice_dim0, *keep_in[li]);
        maybe(state.acc_weight, state.acc_weight, slice_dim0, *keep_in[li]);
      }
    }
    out.model.layers[li] = std::move(state);
  }

  infer_shapes(out.spec);  // structural sanity
  return out;
}

PruneResult prune_loop(ModelState model, NetworkSpec spec, const Dataset& train_data,
                       const Dataset& val_data, const ClassWeights& weights,
                       SnapshotStore initial_snapshots, double initial_accuracy,
                       const PruneOptions& options) {
  PruneResult result;
  result.spec = spec;
  result.model = model;
  result.accuracy = initial_accuracy;

  double current = initial_accuracy;
  double global_max = initial_accuracy;
  SnapshotStore store = std::move(initial_snapshots);
  int iteration = 0;

  while (std::fabs(global_max - current) <= options.min_diff) {
    global_max = std::max(global_max, current);
    // the current model passed the accuracy check; it becomes the result
    result.spec = spec;
    result.model = model;
    result.accuracy = current;

    auto trajectories = build_trajectory_store(store);

    // per-layer pair rankings, grouped layers handled as one unit
    std::vector<std::size_t> eligible;
    for (const auto& [layer, traj] : trajectories.layers)
      if (traj.per_filter.size() >= std::max<std::size_t>(options.eligibility_threshold, 2))
        eligible.push_back(layer);
    if (eligible.empty()) break;  // NoEligibleLayers: clean end

    std::vector<FilterPair> reg_pairs;
    PrunePlan plan;
    std::map<std::size_t, const std::vector<std::size_t>*> group_of;
    for (const auto& group : spec.residual_groups)
      for (std::size_t m : group) group_of[m] = &group;

    std::set<const std::vector<std::size_t>*> groups_done;
    std::map<std::size_t, std::vector<FilterPair>> rankings;
    std::map<std::size_t, std::vector<FilterPair>> top_pairs;
    for (std::size_t layer : eligible) {
      rankings[layer] = rank_all_pairs(trajectories, layer);
      top_pairs[layer] = make_filter_pairs(trajectories, layer, options.rate,
                                           options.eligibility_threshold);
      reg_pairs.insert(reg_pairs.end(), top_pairs[layer].begin(), top_pairs[layer].end());
    }

    // optimize phase: Eq. 9 objective with fresh snapshots
    store.reset();
    store.eligibility_threshold = options.eligibility_threshold;
    TrainOptions opt_train;
    opt_train.epochs = options.epochs_each;
    opt_train.batch_size = options.batch_size;
    opt_train.shuffle_seed = options.seed + 2ull * static_cast<unsigned long long>(iteration);
    train(model, spec, train_data, val_data, weights, &reg_pairs, &store, opt_train);

    // victim selection on the post-optimization weights
    for (std::size_t layer : eligible) {
      auto git = group_of.find(layer);
      if (git != group_of.end()) {
        if (groups_done.count(git->second)) continue;
        groups_done.insert(git->second);
        const std::size_t n = model.layers[layer].weight.dim(0);
        auto required = static_cast<std::size_t>(
            std::ceil(options.rate * static_cast<double>(n)));
        // rank on the group's first member, apply identically to every member
        auto victims = enforce_group_exact(rankings[git->second->front()], model, required);
        std::vector<std::size_t> sorted(victims.begin(), victims.end());
        for (std::size_t member : *git->second) plan.victims[member] = sorted;
      } else {
        auto victims = select_prune_filters(top_pairs[layer], model)[layer];
        plan.victims[layer] = std::vector<std::size_t>(victims.begin(), victims.end());
      }
    }

    auto pruned = delete_filters(model, spec, plan);
    spec = std::move(pruned.spec);
    model = std::move(pruned.model);

    // retrain (finetune) phase; its snapshots feed the next pairing round
    store.reset();
    TrainOptions ft_train = opt_train;
    ft_train.shuffle_seed = options.seed + 2ull * static_cast<unsigned long long>(iteration) + 1;
    auto ft = train(model, spec, train_data, val_data, weights, nullptr, &store, ft_train);
    current = ft.best_val_accuracy;

    PruneIterationLog log;
    log.iteration = iteration;
    log.val_accuracy = current;
    log.params = count_params(spec);
    log.flops = count_flops(spec);
    log.victims = plan.victims;
    result.iterations.push_back(std::move(log));
    iteration++;
  }
  return result;
}

}  // namespace tascforge
