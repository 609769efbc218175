#pragma once

#include <functional>

#include "tascforge/gp.hpp"
#include "tascforge/nn.hpp"
#include "tascforge/searchspace.hpp"

namespace tascforge {

struct Observation {
  HeadConfig config;
  EncodedPoint point;
  double accuracy = 0.0;
  int epoch_budget = 0;
  double wall_seconds = 0.0;  // informational only, never logged to files
};

struct TuneResult {
  Observation best;
  std::vector<Observation> history;
  std::size_t k0 = 0;
  std::size_t total_budget = 0;
};

using ObjectiveFn = std::function<double(const HeadConfig&)>;
using ObservationSink = std::function<void(const Observation&)>;

struct TuneOptions {
  std::size_t k0 = 5;              // paper setting: 20 initial points
  std::size_t total_budget = 20;   // paper symbol M, no value claimed there
  std::size_t candidates_per_step = 512;
  int epoch_budget = 10;           // paper setting: 50 proxy epochs
};

// EI-argmax over a uniform candidate sample, deduplicated against the
// history; ties break toward the earliest sampled candidate.
// EmptyCandidatePool when every candidate was already evaluated.
HeadConfig propose_next(const GPModel& model, double f_best, const SearchSpace& space,
                        const std::vector<Observation>& history,
                        std::size_t candidates_per_step, std::mt19937_64& rng);

// Initial random design of k0 points, then the GP/EI loop: refit (with a
// fresh hyperparameter grid search), propose, evaluate, append. Per-config
// evaluation failures score 0 and the search continues.
TuneResult tune(const SearchSpace& space, const ObjectiveFn& objective,
                const TuneOptions& options, std::mt19937_64& rng,
                const ObservationSink& on_observation = {});

// conv* [pool] flatten fc* output; every fc layer carries batchnorm and is
// followed by its dropout layer.
NetworkSpec build_head_spec(const HeadConfig& config, std::size_t in_h, std::size_t in_w,
                            std::size_t in_c, int classes);

// Eval-mode pass of a dataset through a (frozen) feature extractor chain;
// the result is a dataset of feature maps with the labels carried over.
Dataset extract_features(ModelState& backbone, const NetworkSpec& extractor,
                         const Dataset& data);

struct ProxyEvalOptions {
  int epochs = 10;
  std::size_t batch_size = 32;
};

// Trains one candidate head on pre-extracted features and returns the best
// validation accuracy over the budget.
double evaluate_head_on_features(const Dataset& train_features, const Dataset& val_features,
                                 const HeadConfig& config, std::uint64_t seed,
                                 const ProxyEvalOptions& options);

// Frozen-backbone proxy evaluation as one call (extract + train head).
double evaluate_config(ModelState& backbone, const NetworkSpec& extractor,
                       const HeadConfig& config, const Dataset& train_data,
                       const Dataset& val_data, int epochs, std::uint64_t seed);

}  // namespace tascforge
