#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tascforge/errors.hpp"

namespace tascforge {

// Image classification dataset: sample-major (n, h, w, c) pixels in [0,1].
struct Dataset {
  std::size_t h = 0, w = 0, c = 0;
  std::vector<double> images;
  std::vector<int> labels;
  int class_count = 0;
  std::string split_tag = "all";

  std::size_t count() const { return labels.size(); }
  std::size_t sample_size() const { return h * w * c; }
  std::span<const double> sample(std::size_t i) const {
    return {images.data() + i * sample_size(), sample_size()};
  }
};

// Per-class loss weights w_k = 1/N_k computed on the training split.
struct ClassWeights {
  std::vector<double> w;
};

enum class SyntheticStyle { Source, Target };

// Class-keyed oriented gratings with per-sample phase and Gaussian pixel
// noise. Target style rotates every orientation by half the inter-class
// spacing and shifts intensity, so source-trained features transfer
// imperfectly.
Dataset generate_synthetic(int classes, int samples_per_class, std::size_t h, std::size_t w,
                           std::size_t c, std::mt19937_64& rng, SyntheticStyle style);

// IDX container (big-endian headers, unsigned-byte payload); pixels scaled
// to [0,1].
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// Stratified split; every class lands in both parts (ClassTooSmall below 2
// samples). Deterministic for a given rng state.
std::pair<Dataset, Dataset> split(const Dataset& data, double val_fraction,
                                  std::mt19937_64& rng);

ClassWeights class_weights(const Dataset& train);

}  // namespace tascforge
