#include "tascforge/bo.hpp"

#include <algorithm>
#include <chrono>

#include "tascforge/log.hpp"

namespace tascforge {

HeadConfig propose_next(const GPModel& model, double f_best, const SearchSpace& space,
                        const std::vector<Observation>& history,
                        std::size_t candidates_per_step, std::mt19937_64& rng) {
  if (model.x_train.empty()) fail(ErrorCode::InvalidArgument, "GP model is not fitted");
  if (candidates_per_step == 0)
    fail(ErrorCode::InvalidArgument, "candidate count must be positive");

  bool found = false;
  double best_ei = 0.0;
  HeadConfig best_config;
  for (std::size_t c = 0; c < candidates_per_step; ++c) {
    auto candidate = sample_uniform(space, rng);
    bool seen = false;
    for (const auto& obs : history)
      if (obs.config == candidate) {
        seen = true;
        break;
      }
    if (seen) continue;
    auto point = encode(space, candidate);
    auto post = posterior(model, point);
    double ei = expected_improvement(post.mean, post.variance, f_best);
    if (!found || ei > best_ei) {  // ties keep the earliest sample
      found = true;
      best_ei = ei;
      best_config = std::move(candidate);
    }
  }
  if (!found)
    fail(ErrorCode::EmptyCandidatePool, "every sampled candidate was already evaluated");
  return best_config;
}

namespace {

Observation evaluate_observation(const SearchSpace& space, const ObjectiveFn& objective,
                                 const HeadConfig& config, int epoch_budget) {
  Observation obs;
  obs.config = config;
  obs.point = encode(space, config);
  obs.epoch_budget = epoch_budget;
  auto start = std::chrono::steady_clock::now();
  try {
    obs.accuracy = objective(config);
  } catch (const Error& e) {
    log_info(std::string("proxy evaluation failed, scoring 0: ") + e.what());
    obs.accuracy = 0.0;
  }
  obs.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (obs.accuracy < 0.0 || obs.accuracy > 1.0)
    fail(ErrorCode::InvalidArgument, "objective returned an accuracy outside [0,1]");
  return obs;
}

// uniform rejection sampling for a not-yet-evaluated configuration
bool sample_unexplored(const SearchSpace& space, const std::vector<Observation>& history,
                       std::mt19937_64& rng, HeadConfig& out) {
  for (int attempt = 0; attempt < 4096; ++attempt) {
    auto candidate = sample_uniform(space, rng);
    bool seen = false;
    for (const auto& obs : history)
      if (obs.config == candidate) {
        seen = true;
        break;
      }
    if (!seen) {
      out = std::move(candidate);
      return true;
    }
  }
  return false;
}

}  // namespace

TuneResult tune(const SearchSpace& space, const ObjectiveFn& objective,
                const TuneOptions& options, std::mt19937_64& rng,
                const ObservationSink& on_observation) {
  if (options.k0 < 2) fail(ErrorCode::InvalidArgument, "k0 must be >= 2");
  if (options.total_budget < options.k0)
    fail(ErrorCode::InvalidArgument, "total budget must be >= k0");
  space.validate();

  TuneResult result;
  result.k0 = options.k0;
  result.total_budget = options.total_budget;

  auto record = [&](Observation obs) {
    result.history.push_back(std::move(obs));
    if (on_observation) on_observation(result.history.back());
  };

  for (std::size_t i = 0; i < options.k0; ++i)
    record(evaluate_observation(space, objective, sample_uniform(space, rng),
                                options.epoch_budget));

  while (result.history.size() < options.total_budget) {
    std::vector<EncodedPoint> xs;
    std::vector<double> ys;
    xs.reserve(result.history.size());
    for (const auto& obs : result.history) {
      xs.push_back(obs.point);
      ys.push_back(obs.accuracy);
    }
    double f_best = *std::max_element(ys.begin(), ys.end());

    HeadConfig next;
    try {
      auto params = optimize_hyperparams(xs, ys);
      auto model = fit(xs, ys, params);
      next = propose_next(model, f_best, space, result.history,
                          options.candidates_per_step, rng);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::EmptyCandidatePool) throw;
      if (!sample_unexplored(space, result.history, rng, next)) {
        log_info("search space appears exhausted; stopping the tuning loop early");
        break;
      }
    }
    record(evaluate_observation(space, objective, next, options.epoch_budget));
  }

  std::size_t best = 0;
  for (std::size_t i = 1; i < result.history.size(); ++i)
    if (result.history[i].accuracy > result.history[best].accuracy) best = i;
  result.best = result.history[best];
  return result;
}

NetworkSpec build_head_spec(const HeadConfig& config, std::size_t in_h, std::size_t in_w,
                            std::size_t in_c, int classes) {
  NetworkSpec spec;
  spec.input_h = in_h;
  spec.input_w = in_w;
  spec.input_c = in_c;
  for (const auto& conv : config.conv)
    spec.layers.push_back(LayerSpec::conv(conv.filter_size, conv.num_filters, conv.activation));
  if (config.pool_size) spec.layers.push_back(LayerSpec::maxpool(*config.pool_size, 1));
  spec.layers.push_back(LayerSpec::flatten());
  for (const auto& fc : config.fc) {
    spec.layers.push_back(LayerSpec::dense(fc.neurons, fc.activation, /*bn=*/true));
    spec.layers.push_back(LayerSpec::dropout(fc.dropout));
  }
  spec.layers.push_back(LayerSpec::output(classes));
  return spec;
}

Dataset extract_features(ModelState& backbone, const NetworkSpec& extractor,
                         const Dataset& data) {
  Dataset out;
  out.labels = data.labels;
  out.class_count = data.class_count;
  out.split_tag = data.split_tag;

  if (extractor.layers.empty()) {
    out.h = data.h;
    out.w = data.w;
    out.c = data.c;
    out.images = data.images;
    return out;
  }

  auto shapes = infer_shapes(extractor);
  const auto& last = shapes.back();
  if (last.spatial) {
    out.h = last.h;
    out.w = last.w;
    out.c = last.c;
  } else {
    out.h = 1;
    out.w = 1;
    out.c = last.units;
  }

  const std::size_t chunk = 64;
  out.images.reserve(data.count() * last.volume());
  for (std::size_t start = 0; start < data.count(); start += chunk) {
    std::size_t n = std::min(chunk, data.count() - start);
    Batch batch;
    batch.count = n;
    batch.x.reserve(n * data.sample_size());
    for (std::size_t i = start; i < start + n; ++i) {
      auto s = data.sample(i);
      batch.x.insert(batch.x.end(), s.begin(), s.end());
    }
    auto features = forward_features(backbone, extractor, batch);
    out.images.insert(out.images.end(), features.begin(), features.end());
  }
  return out;
}

double evaluate_head_on_features(const Dataset& train_features, const Dataset& val_features,
                                 const HeadConfig& config, std::uint64_t seed,
                                 const ProxyEvalOptions& options) {
  auto spec = build_head_spec(config, train_features.h, train_features.w, train_features.c,
                              train_features.class_count);
  infer_shapes(spec);  // surfaces ArchitectureInfeasible before any training
  auto model = init_model(spec, seed);
  auto weights = class_weights(train_features);
  TrainOptions topt;
  topt.epochs = options.epochs;
  topt.batch_size = options.batch_size;
  topt.shuffle_seed = seed ^ 0xd1b54a32d192ed03ull;
  auto result = train(model, spec, train_features, val_features, weights, nullptr, nullptr,
                      topt);
  return result.best_val_accuracy;
}

double evaluate_config(ModelState& backbone, const NetworkSpec& extractor,
                       const HeadConfig& config, const Dataset& train_data,
                       const Dataset& val_data, int epochs, std::uint64_t seed) {
  auto train_features = extract_features(backbone, extractor, train_data);
  auto val_features = extract_features(backbone, extractor, val_data);
  ProxyEvalOptions options;
  options.epochs = epochs;
  return evaluate_head_on_features(train_features, val_features, config, seed, options);
}

}  // namespace tascforge
