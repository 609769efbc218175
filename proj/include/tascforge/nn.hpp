#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <vector>

#include "tascforge/activation.hpp"
#include "tascforge/dataio.hpp"
#include "tascforge/tensor.hpp"

namespace tascforge {

enum class LayerKind : std::uint8_t { Conv, MaxPool, Dense, Dropout, Flatten, Output };

// Valid (no) padding everywhere; conv stride is always 1, pool stride is free.
struct LayerSpec {
  LayerKind kind = LayerKind::Flatten;
  int kernel = 0;
  int stride = 1;
  int filters = 0;
  int neurons = 0;
  int classes = 0;
  Activation activation = Activation::ReLU;
  bool has_batchnorm = false;
  double dropout_p = 0.0;
  bool trainable = true;

  static LayerSpec conv(int k, int filters, Activation act, bool bn = false);
  static LayerSpec maxpool(int k, int stride = 1);
  static LayerSpec dense(int neurons, Activation act, bool bn = false);
  static LayerSpec dropout(double p);
  static LayerSpec flatten();
  static LayerSpec output(int classes);
};

// Layer graph: ordered chain plus optional element-wise add groups. A group
// lists ascending layer indices; the outputs of all earlier members are added
// into the last member's output before its consumer runs.
struct NetworkSpec {
  std::size_t input_h = 0, input_w = 0, input_c = 0;
  std::vector<LayerSpec> layers;
  std::vector<std::vector<std::size_t>> residual_groups;
};

struct LayerShape {
  bool spatial = false;
  std::size_t h = 0, w = 0, c = 0;
  std::size_t units = 0;
  std::size_t volume() const { return spatial ? h * w * c : units; }
};

// Output shape of every layer; ArchitectureInfeasible when a conv/pool window
// no longer fits, ShapeMismatch on chain or residual-group violations.
std::vector<LayerShape> infer_shapes(const NetworkSpec& spec);

// Weights, batchnorm state and Adagrad accumulators for one layer.
// Conv weights are stored {filters, k, k, in_channels} so one filter is a
// contiguous row-major block; dense weights are {n_in, n_out}.
struct LayerState {
  Tensor weight, bias;
  Tensor bn_scale, bn_shift, bn_mean, bn_var;
  Tensor acc_weight, acc_bias, acc_scale, acc_shift;
};

struct ModelState {
  std::vector<LayerState> layers;
  std::mt19937_64 dropout_rng{0};
};

ModelState init_model(const NetworkSpec& spec, std::uint64_t seed);

struct Batch {
  std::size_t count = 0;
  std::vector<double> x;    // count * input volume, (n,h,w,c) row-major
  std::vector<int> labels;  // empty when only running inference
};

// Class probabilities, rows summing to 1. Train mode samples dropout masks
// from the model's rng and uses batch statistics in trainable batchnorm
// layers (frozen batchnorm always uses running statistics).
Tensor forward(ModelState& model, const NetworkSpec& spec, const Batch& batch, bool train_mode);

// Eval-mode pass through a headless chain (no output layer required); returns
// the last layer's activations, one row per sample. An empty chain returns
// the input unchanged.
std::vector<double> forward_features(ModelState& model, const NetworkSpec& spec,
                                     const Batch& batch);

double weighted_cross_entropy(const Tensor& probs, const Tensor& labels_onehot,
                              const ClassWeights& weights);
double weighted_cross_entropy(const Tensor& probs, const std::vector<int>& labels,
                              const ClassWeights& weights);

// A redundancy pair inside one conv layer: trajectory cosine similarity of
// filters i < j.
struct FilterPair {
  std::size_t layer = 0;
  std::size_t i = 0, j = 0;
  double similarity = 0.0;
};

struct RegularizerResult {
  double value = 0.0;  // R = exp(sum over pairs of -cos(F_i, F_j))
  std::vector<std::vector<double>> gradients;  // dR/dF, one per input filter
};

// Eq-8-style similarity regularizer over flattened filter vectors. Pairs with
// a zero-norm member contribute cos = 0 with zero gradient.
RegularizerResult similarity_regularizer(const std::vector<std::vector<double>>& filters,
                                         const std::vector<std::pair<std::size_t, std::size_t>>& pairs);

struct StepResult {
  double data_loss = 0.0;
  double regularizer = 0.0;  // 0 when no pairs were supplied
  double total_loss = 0.0;
};

struct LayerGradients {
  Tensor weight, bias, scale, shift;  // empty tensors when absent
};

struct GradientResult {
  StepResult loss;
  std::vector<LayerGradients> layers;
};

// Backprop through the weighted cross-entropy (plus regularizer when pairs
// are given) without touching the parameters. Train-mode forward: consumes
// dropout randomness and refreshes batchnorm running statistics.
GradientResult compute_gradients(ModelState& model, const NetworkSpec& spec, const Batch& batch,
                                 const ClassWeights& weights,
                                 const std::vector<FilterPair>* reg_pairs);

// One Adagrad step on the weighted cross-entropy objective, plus the
// similarity regularizer over `reg_pairs` when given.
StepResult train_step(ModelState& model, const NetworkSpec& spec, const Batch& batch,
                      const ClassWeights& weights, const std::vector<FilterPair>* reg_pairs,
                      double lr);

// Learning-rate schedule: multiply by `factor` whenever the observed
// validation loss exceeds the previous epoch's, never below `floor`.
class PlateauDecay {
 public:
  PlateauDecay(double initial, double factor, double floor)
      : lr_(initial), factor_(factor), floor_(floor) {}
  double current() const { return lr_; }
  void observe(double val_loss) {
    if (has_prev_ && val_loss > prev_) lr_ = std::max(lr_ * factor_, floor_);
    prev_ = val_loss;
    has_prev_ = true;
  }

 private:
  double lr_, factor_, floor_;
  double prev_ = 0.0;
  bool has_prev_ = false;
};

// Per-epoch conv filter weight snapshots for layers with at least
// `eligibility_threshold` filters; the raw material of filter trajectories.
struct SnapshotStore {
  std::size_t eligibility_threshold = 16;
  std::size_t epochs = 0;
  std::map<std::size_t, std::vector<Tensor>> per_layer;

  void record_epoch(const NetworkSpec& spec, const ModelState& model);
  void reset() {
    epochs = 0;
    per_layer.clear();
  }
};

struct EpochLog {
  double train_loss = 0.0, val_loss = 0.0, val_accuracy = 0.0, lr = 0.0;
};

struct TrainResult {
  double best_val_accuracy = 0.0;
  std::vector<EpochLog> epochs;
};

struct TrainOptions {
  int epochs = 10;
  std::size_t batch_size = 32;
  std::uint64_t shuffle_seed = 0;
};

// Full protocol: initial lr 1e-2, Adagrad, sqrt(0.1) plateau decay with floor
// 1e-5, optional regularizer pairs, optional per-epoch snapshots.
TrainResult train(ModelState& model, const NetworkSpec& spec, const Dataset& train_data,
                  const Dataset& val_data, const ClassWeights& weights,
                  const std::vector<FilterPair>* reg_pairs, SnapshotStore* snapshots,
                  const TrainOptions& options);

struct ParamCounts {
  unsigned long long total = 0;
  unsigned long long trainable = 0;
};

ParamCounts count_params(const NetworkSpec& spec);

// Multiply-accumulate counted as 2 FLOPs; pooling, activations and batchnorm
// excluded.
unsigned long long count_flops(const NetworkSpec& spec);

double evaluate_accuracy(ModelState& model, const NetworkSpec& spec, const Dataset& data);
double evaluate_loss(ModelState& model, const NetworkSpec& spec, const Dataset& data,
                     const ClassWeights& weights);

}  // namespace tascforge
