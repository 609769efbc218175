#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "tascforge/activation.hpp"
#include "tascforge/errors.hpp"

namespace tascforge {

struct ConvChoices {
  std::vector<int> filter_size{1, 2, 3, 5};
  std::vector<int> num_filters{32, 64, 128, 256, 512};
  std::vector<Activation> activation{Activation::Sigmoid, Activation::TanH, Activation::ReLU,
                                     Activation::ELU, Activation::SELU};
};

struct PoolChoices {
  std::vector<int> filter_size{2, 3};
};

struct FcChoices {
  std::vector<int> neurons{64, 128, 256, 512, 1024};
  std::vector<Activation> activation{Activation::Sigmoid, Activation::TanH, Activation::ReLU,
                                     Activation::ELU, Activation::SELU};
  std::vector<double> dropout{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
};

// The discrete head hyperparameter space. Searched strides are always 1.
// When a slot group is declared (max count >= 1) at least one of its slots is
// active in every valid configuration; the pool slot alone is optional.
struct SearchSpace {
  std::size_t conv_slots = 3;
  ConvChoices conv;
  bool pool_slot = true;
  PoolChoices pool;
  std::size_t fc_slots = 3;
  FcChoices fc;

  void validate() const;
  std::size_t encoded_dim() const;
  // Exact number of valid configurations; SpaceTooLarge above `cap`.
  unsigned long long config_count(unsigned long long cap) const;
};

struct ConvLayerChoice {
  int filter_size = 0;
  int num_filters = 0;
  Activation activation = Activation::ReLU;
  bool operator==(const ConvLayerChoice&) const = default;
};

struct FcLayerChoice {
  int neurons = 0;
  Activation activation = Activation::ReLU;
  double dropout = 0.0;
  bool operator==(const FcLayerChoice&) const = default;
};

// One concrete point of the space: the replaced deeper layers, in network
// order conv* [pool] fc*. The output layer is appended separately with the
// target class count and is not part of the configuration.
struct HeadConfig {
  std::vector<ConvLayerChoice> conv;
  std::optional<int> pool_size;
  std::vector<FcLayerChoice> fc;
  bool operator==(const HeadConfig&) const = default;
};

// Fixed-length real vector in [0,1]^d. Layout per slot:
//   conv slot: [activity, filter_size, num_filters, activation one-hot...]
//   pool slot: [activity, filter_size]
//   fc slot:   [activity, neurons, dropout, activation one-hot...]
// Ordinals map choice index i of k to i/(k-1) (0 when k == 1); inactive
// slots are zero-filled with activity 0.
struct EncodedPoint {
  std::vector<double> v;
  bool operator==(const EncodedPoint&) const = default;
};

bool config_valid(const SearchSpace& space, const HeadConfig& config);

HeadConfig sample_uniform(const SearchSpace& space, std::mt19937_64& rng);
EncodedPoint encode(const SearchSpace& space, const HeadConfig& config);
// Snaps each dim to the nearest valid choice; activity >= 0.5 activates a
// slot (slot 0 of a required group is forced active); one-hot blocks resolve
// by argmax with lowest-index tie break.
HeadConfig decode(const SearchSpace& space, const EncodedPoint& point);

// Every valid configuration exactly once, in a fixed deterministic order.
std::vector<HeadConfig> enumerate_space(const SearchSpace& space, unsigned long long cap);

std::string to_string(const HeadConfig& config);

}  // namespace tascforge
