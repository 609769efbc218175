#include "tascforge/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>

namespace tascforge {

Dataset generate_synthetic(int classes, int samples_per_class, std::size_t h, std::size_t w,
                           std::size_t c, std::mt19937_64& rng, SyntheticStyle style) {
  if (classes < 1 || samples_per_class < 1 || h < 1 || w < 1 || c < 1)
    fail(ErrorCode::InvalidArgument, "all synthetic dataset counts must be >= 1");

  Dataset d;
  d.h = h;
  d.w = w;
  d.c = c;
  d.class_count = classes;
  d.images.reserve(static_cast<std::size_t>(classes) * samples_per_class * h * w * c);
  d.labels.reserve(static_cast<std::size_t>(classes) * samples_per_class);

  const bool target = style == SyntheticStyle::Target;
  const double angle_step = std::numbers::pi / classes;
  const double domain_rotation = target ? 0.5 * angle_step : 0.0;
  const double scale = 2.0 * std::numbers::pi / static_cast<double>(std::max(h, w));

  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> jitter(-0.05, 0.05);
  std::normal_distribution<double> noise(0.0, 0.1);

  for (int k = 0; k < classes; ++k) {
    // orientation carries the class; frequency repeats every two classes so
    // the rotated target domain aliases neighboring source classes
    const double freq = scale * (2.0 + (k % 2));
    for (int s = 0; s < samples_per_class; ++s) {
      const double theta = angle_step * k + domain_rotation + jitter(rng);
      const double phi = phase(rng);
      const double ct = std::cos(theta), st = std::sin(theta);
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          double proj = static_cast<double>(x) * ct + static_cast<double>(y) * st;
          double v = 0.5 + 0.4 * std::sin(freq * proj + phi);
          if (target) v = 0.75 * v + 0.2;
          for (std::size_t ch = 0; ch < c; ++ch) {
            double px = v + noise(rng);
            d.images.push_back(std::clamp(px, 0.0, 1.0));
          }
        }
      }
      d.labels.push_back(k);
    }
  }
  return d;
}

namespace {

uint32_t read_be_u32(std::ifstream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    fail(ErrorCode::TruncatedFile, "unexpected end of file in " + path);
  return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}

struct IdxHeader {
  std::vector<uint32_t> dims;
};

IdxHeader read_idx_header(std::ifstream& in, const std::string& path,
                          std::initializer_list<int> allowed_ranks) {
  unsigned char magic[4];
  if (!in.read(reinterpret_cast<char*>(magic), 4))
    fail(ErrorCode::TruncatedFile, "unexpected end of file in " + path);
  if (magic[0] != 0 || magic[1] != 0)
    fail(ErrorCode::BadMagic, "bad IDX magic in " + path);
  if (magic[2] != 0x08)
    fail(ErrorCode::BadMagic, "unsupported IDX element type in " + path);
  int rank = magic[3];
  if (std::find(allowed_ranks.begin(), allowed_ranks.end(), rank) == allowed_ranks.end())
    fail(ErrorCode::BadMagic, "unexpected IDX rank in " + path);
  IdxHeader h;
  for (int i = 0; i < rank; ++i) h.dims.push_back(read_be_u32(in, path));
  return h;
}

std::vector<unsigned char> read_payload(std::ifstream& in, std::size_t n,
                                        const std::string& path) {
  std::vector<unsigned char> bytes(n);
  if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(n)))
    fail(ErrorCode::TruncatedFile, "payload shorter than header promises in " + path);
  return bytes;
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream imgs(images_path, std::ios::binary);
  if (!imgs) fail(ErrorCode::IoError, "cannot open " + images_path);
  auto ih = read_idx_header(imgs, images_path, {3, 4});
  std::size_t n = ih.dims[0], h = ih.dims[1], w = ih.dims[2];
  std::size_t c = ih.dims.size() == 4 ? ih.dims[3] : 1;
  auto pixels = read_payload(imgs, n * h * w * c, images_path);

  std::ifstream labs(labels_path, std::ios::binary);
  if (!labs) fail(ErrorCode::IoError, "cannot open " + labels_path);
  auto lh = read_idx_header(labs, labels_path, {1});
  if (lh.dims[0] != n)
    fail(ErrorCode::CountMismatch, "image and label counts differ between " + images_path +
                                       " and " + labels_path);
  auto labels = read_payload(labs, n, labels_path);

  Dataset d;
  d.h = h;
  d.w = w;
  d.c = c;
  d.images.resize(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) d.images[i] = pixels[i] / 255.0;
  d.labels.resize(n);
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    d.labels[i] = labels[i];
    max_label = std::max(max_label, d.labels[i]);
  }
  d.class_count = max_label + 1;
  return d;
}

std::pair<Dataset, Dataset> split(const Dataset& data, double val_fraction,
                                  std::mt19937_64& rng) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0))
    fail(ErrorCode::InvalidArgument, "val_fraction must be in (0,1)");

  std::vector<std::vector<std::size_t>> per_class(data.class_count);
  for (std::size_t i = 0; i < data.count(); ++i) per_class[data.labels[i]].push_back(i);

  std::vector<std::size_t> train_idx, val_idx;
  for (int k = 0; k < data.class_count; ++k) {
    auto& idx = per_class[k];
    if (idx.size() < 2)
      fail(ErrorCode::ClassTooSmall,
           "class " + std::to_string(k) + " has fewer than 2 samples");
    std::shuffle(idx.begin(), idx.end(), rng);
    auto n_val = static_cast<std::size_t>(std::lround(val_fraction * idx.size()));
    n_val = std::clamp<std::size_t>(n_val, 1, idx.size() - 1);
    for (std::size_t i = 0; i < idx.size(); ++i)
      (i < n_val ? val_idx : train_idx).push_back(idx[i]);
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(val_idx.begin(), val_idx.end());

  auto take = [&data](const std::vector<std::size_t>& idx, const char* tag) {
    Dataset out;
    out.h = data.h;
    out.w = data.w;
    out.c = data.c;
    out.class_count = data.class_count;
    out.split_tag = tag;
    out.images.reserve(idx.size() * data.sample_size());
    for (std::size_t i : idx) {
      auto s = data.sample(i);
      out.images.insert(out.images.end(), s.begin(), s.end());
      out.labels.push_back(data.labels[i]);
    }
    return out;
  };
  return {take(train_idx, "train"), take(val_idx, "val")};
}

ClassWeights class_weights(const Dataset& train) {
  std::vector<std::size_t> counts(train.class_count, 0);
  for (int label : train.labels) counts[label]++;
  ClassWeights cw;
  cw.w.resize(train.class_count);
  for (int k = 0; k < train.class_count; ++k) {
    if (counts[k] == 0)
      fail(ErrorCode::EmptyClass, "class " + std::to_string(k) + " has no training samples");
    cw.w[k] = 1.0 / static_cast<double>(counts[k]);
  }
  return cw;
}

}  // namespace tascforge
