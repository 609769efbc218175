#include "tascforge/searchspace.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace tascforge {

namespace {

template <typename T>
std::size_t index_of(const std::vector<T>& list, const T& value, const char* what) {
  auto it = std::find(list.begin(), list.end(), value);
  if (it == list.end())
    fail(ErrorCode::InvalidConfig, std::string(what) + " value not in choice list");
  return static_cast<std::size_t>(it - list.begin());
}

std::size_t index_of(const std::vector<double>& list, double value, const char* what) {
  for (std::size_t i = 0; i < list.size(); ++i)
    if (std::fabs(list[i] - value) <= 1e-9) return i;
  fail(ErrorCode::InvalidConfig, std::string(what) + " value not in choice list");
}

double ordinal_encode(std::size_t index, std::size_t k) {
  return k <= 1 ? 0.0 : static_cast<double>(index) / static_cast<double>(k - 1);
}

std::size_t ordinal_decode(double x, std::size_t k) {
  if (k <= 1) return 0;
  long idx = std::lround(x * static_cast<double>(k - 1));
  idx = std::clamp(idx, 0L, static_cast<long>(k - 1));
  return static_cast<std::size_t>(idx);
}

std::size_t onehot_argmax(const std::vector<double>& v, std::size_t offset, std::size_t k) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < k; ++i)
    if (v[offset + i] > v[offset + best]) best = i;
  return best;
}

template <typename T>
void require_nonempty(const std::vector<T>& list, const char* what) {
  if (list.empty()) fail(ErrorCode::InvalidConfig, std::string(what) + " choice list is empty");
}

// Multiply a*b, throwing SpaceTooLarge past `cap` so counting never overflows.
unsigned long long checked_mul(unsigned long long a, unsigned long long b,
                               unsigned long long cap) {
  if (b != 0 && a > cap / b)
    fail(ErrorCode::SpaceTooLarge, "configuration count exceeds cap");
  return a * b;
}

unsigned long long checked_add(unsigned long long a, unsigned long long b,
                               unsigned long long cap) {
  if (a > cap - b) fail(ErrorCode::SpaceTooLarge, "configuration count exceeds cap");
  return a + b;
}

// sum over counts 1..slots of per_layer^count
unsigned long long group_count(unsigned long long per_layer, std::size_t slots,
                               unsigned long long cap) {
  if (slots == 0) return 1;
  unsigned long long total = 0, combos = 1;
  for (std::size_t c = 1; c <= slots; ++c) {
    combos = checked_mul(combos, per_layer, cap);
    total = checked_add(total, combos, cap);
  }
  return total;
}

}  // namespace

void SearchSpace::validate() const {
  if (conv_slots > 0) {
    require_nonempty(conv.filter_size, "conv.filter_size");
    require_nonempty(conv.num_filters, "conv.num_filters");
    require_nonempty(conv.activation, "conv.activation");
    for (int k : conv.filter_size)
      if (k < 1) fail(ErrorCode::InvalidConfig, "conv filter size must be >= 1");
    for (int f : conv.num_filters)
      if (f < 1) fail(ErrorCode::InvalidConfig, "conv filter count must be >= 1");
  }
  if (pool_slot) {
    require_nonempty(pool.filter_size, "pool.filter_size");
    for (int k : pool.filter_size)
      if (k < 2) fail(ErrorCode::InvalidConfig, "pool filter size must be >= 2");
  }
  if (fc_slots > 0) {
    require_nonempty(fc.neurons, "fc.neurons");
    require_nonempty(fc.activation, "fc.activation");
    require_nonempty(fc.dropout, "fc.dropout");
    for (int n : fc.neurons)
      if (n < 1) fail(ErrorCode::InvalidConfig, "fc neurons must be >= 1");
    for (double p : fc.dropout)
      if (p < 0.0 || p >= 1.0) fail(ErrorCode::InvalidConfig, "dropout must be in [0,1)");
  }
  if (conv_slots == 0 && fc_slots == 0 && !pool_slot)
    fail(ErrorCode::InvalidConfig, "search space has no slots");
}

std::size_t SearchSpace::encoded_dim() const {
  std::size_t d = conv_slots * (3 + conv.activation.size());
  if (pool_slot) d += 2;
  d += fc_slots * (3 + fc.activation.size());
  return d;
}

unsigned long long SearchSpace::config_count(unsigned long long cap) const {
  validate();
  unsigned long long conv_per =
      static_cast<unsigned long long>(conv.filter_size.size()) * conv.num_filters.size() *
      conv.activation.size();
  unsigned long long fc_per = static_cast<unsigned long long>(fc.neurons.size()) *
                              fc.activation.size() * fc.dropout.size();
  unsigned long long total = group_count(conv_per, conv_slots, cap);
  if (pool_slot) total = checked_mul(total, 1 + pool.filter_size.size(), cap);
  total = checked_mul(total, group_count(fc_per, fc_slots, cap), cap);
  if (total > cap) fail(ErrorCode::SpaceTooLarge, "configuration count exceeds cap");
  return total;
}

bool config_valid(const SearchSpace& space, const HeadConfig& config) {
  if (config.conv.size() > space.conv_slots) return false;
  if (space.conv_slots > 0 && config.conv.empty()) return false;
  if (config.pool_size.has_value() && !space.pool_slot) return false;
  if (config.fc.size() > space.fc_slots) return false;
  if (space.fc_slots > 0 && config.fc.empty()) return false;
  auto contains = [](const auto& list, const auto& v) {
    return std::find(list.begin(), list.end(), v) != list.end();
  };
  for (const auto& c : config.conv)
    if (!contains(space.conv.filter_size, c.filter_size) ||
        !contains(space.conv.num_filters, c.num_filters) ||
        !contains(space.conv.activation, c.activation))
      return false;
  if (config.pool_size && !contains(space.pool.filter_size, *config.pool_size)) return false;
  for (const auto& f : config.fc) {
    if (!contains(space.fc.neurons, f.neurons) || !contains(space.fc.activation, f.activation))
      return false;
    bool found = false;
    for (double p : space.fc.dropout)
      if (std::fabs(p - f.dropout) <= 1e-9) found = true;
    if (!found) return false;
  }
  return true;
}

HeadConfig sample_uniform(const SearchSpace& space, std::mt19937_64& rng) {
  space.validate();
  auto pick = [&rng](const auto& list) {
    std::uniform_int_distribution<std::size_t> d(0, list.size() - 1);
    return list[d(rng)];
  };
  HeadConfig config;
  if (space.conv_slots > 0) {
    std::uniform_int_distribution<std::size_t> count(1, space.conv_slots);
    std::size_t c = count(rng);
    for (std::size_t i = 0; i < c; ++i)
      config.conv.push_back({pick(space.conv.filter_size), pick(space.conv.num_filters),
                             pick(space.conv.activation)});
  }
  if (space.pool_slot) {
    std::uniform_int_distribution<int> coin(0, 1);
    if (coin(rng) == 1) config.pool_size = pick(space.pool.filter_size);
  }
  if (space.fc_slots > 0) {
    std::uniform_int_distribution<std::size_t> count(1, space.fc_slots);
    std::size_t c = count(rng);
    for (std::size_t i = 0; i < c; ++i)
      config.fc.push_back({pick(space.fc.neurons), pick(space.fc.activation),
                           pick(space.fc.dropout)});
  }
  return config;
}

EncodedPoint encode(const SearchSpace& space, const HeadConfig& config) {
  if (!config_valid(space, config))
    fail(ErrorCode::InvalidConfig, "config not valid in this search space: " + to_string(config));
  EncodedPoint p;
  p.v.assign(space.encoded_dim(), 0.0);
  std::size_t off = 0;
  for (std::size_t s = 0; s < space.conv_slots; ++s) {
    if (s < config.conv.size()) {
      const auto& c = config.conv[s];
      p.v[off] = 1.0;
      p.v[off + 1] =
          ordinal_encode(index_of(space.conv.filter_size, c.filter_size, "conv.filter_size"),
                         space.conv.filter_size.size());
      p.v[off + 2] =
          ordinal_encode(index_of(space.conv.num_filters, c.num_filters, "conv.num_filters"),
                         space.conv.num_filters.size());
      p.v[off + 3 + index_of(space.conv.activation, c.activation, "conv.activation")] = 1.0;
    }
    off += 3 + space.conv.activation.size();
  }
  if (space.pool_slot) {
    if (config.pool_size) {
      p.v[off] = 1.0;
      p.v[off + 1] =
          ordinal_encode(index_of(space.pool.filter_size, *config.pool_size, "pool.filter_size"),
                         space.pool.filter_size.size());
    }
    off += 2;
  }
  for (std::size_t s = 0; s < space.fc_slots; ++s) {
    if (s < config.fc.size()) {
      const auto& f = config.fc[s];
      p.v[off] = 1.0;
      p.v[off + 1] = ordinal_encode(index_of(space.fc.neurons, f.neurons, "fc.neurons"),
                                    space.fc.neurons.size());
      p.v[off + 2] = ordinal_encode(index_of(space.fc.dropout, f.dropout, "fc.dropout"),
                                    space.fc.dropout.size());
      p.v[off + 3 + index_of(space.fc.activation, f.activation, "fc.activation")] = 1.0;
    }
    off += 3 + space.fc.activation.size();
  }
  return p;
}

HeadConfig decode(const SearchSpace& space, const EncodedPoint& point) {
  if (point.v.size() != space.encoded_dim())
    fail(ErrorCode::DimensionMismatch, "encoded point has wrong dimension");
  HeadConfig config;
  std::size_t off = 0;
  for (std::size_t s = 0; s < space.conv_slots; ++s) {
    bool active = s == 0 || point.v[off] >= 0.5;  // required group: slot 0 always active
    if (active) {
      ConvLayerChoice c;
      c.filter_size =
          space.conv.filter_size[ordinal_decode(point.v[off + 1], space.conv.filter_size.size())];
      c.num_filters =
          space.conv.num_filters[ordinal_decode(point.v[off + 2], space.conv.num_filters.size())];
      c.activation = space.conv.activation[onehot_argmax(point.v, off + 3,
                                                         space.conv.activation.size())];
      config.conv.push_back(c);
    }
    off += 3 + space.conv.activation.size();
  }
  if (space.pool_slot) {
    if (point.v[off] >= 0.5)
      config.pool_size =
          space.pool.filter_size[ordinal_decode(point.v[off + 1], space.pool.filter_size.size())];
    off += 2;
  }
  for (std::size_t s = 0; s < space.fc_slots; ++s) {
    bool active = point.v[off] >= 0.5 || s == 0;
    if (active) {
      FcLayerChoice f;
      f.neurons = space.fc.neurons[ordinal_decode(point.v[off + 1], space.fc.neurons.size())];
      f.dropout = space.fc.dropout[ordinal_decode(point.v[off + 2], space.fc.dropout.size())];
      f.activation =
          space.fc.activation[onehot_argmax(point.v, off + 3, space.fc.activation.size())];
      config.fc.push_back(f);
    }
    off += 3 + space.fc.activation.size();
  }
  return config;
}

namespace {

std::vector<ConvLayerChoice> all_conv_choices(const SearchSpace& space) {
  std::vector<ConvLayerChoice> out;
  for (int fs : space.conv.filter_size)
    for (int nf : space.conv.num_filters)
      for (Activation a : space.conv.activation) out.push_back({fs, nf, a});
  return out;
}

std::vector<FcLayerChoice> all_fc_choices(const SearchSpace& space) {
  std::vector<FcLayerChoice> out;
  for (int n : space.fc.neurons)
    for (Activation a : space.fc.activation)
      for (double p : space.fc.dropout) out.push_back({n, a, p});
  return out;
}

// Odometer over `count` layers, first layer varying slowest.
template <typename Choice, typename Fn>
void for_each_assignment(const std::vector<Choice>& choices, std::size_t max_count, Fn&& fn) {
  if (max_count == 0) {
    fn(std::vector<Choice>{});
    return;
  }
  for (std::size_t count = 1; count <= max_count; ++count) {
    std::vector<std::size_t> idx(count, 0);
    while (true) {
      std::vector<Choice> layers(count);
      for (std::size_t i = 0; i < count; ++i) layers[i] = choices[idx[i]];
      fn(std::move(layers));
      std::size_t pos = count;
      while (pos-- > 0) {
        if (++idx[pos] < choices.size()) break;
        idx[pos] = 0;
        if (pos == 0) goto next_count;
      }
    }
  next_count:;
  }
}

}  // namespace

std::vector<HeadConfig> enumerate_space(const SearchSpace& space, unsigned long long cap) {
  unsigned long long total = space.config_count(cap);
  std::vector<HeadConfig> out;
  out.reserve(static_cast<std::size_t>(total));
  auto conv_choices = all_conv_choices(space);
  auto fc_choices = all_fc_choices(space);
  std::vector<std::optional<int>> pool_options{std::nullopt};
  if (space.pool_slot)
    for (int k : space.pool.filter_size) pool_options.push_back(k);
  for_each_assignment(conv_choices, space.conv_slots, [&](std::vector<ConvLayerChoice> conv) {
    for (const auto& pool : pool_options) {
      for_each_assignment(fc_choices, space.fc_slots, [&](std::vector<FcLayerChoice> fc) {
        HeadConfig c;
        c.conv = conv;
        c.pool_size = pool;
        c.fc = std::move(fc);
        out.push_back(std::move(c));
      });
    }
  });
  return out;
}

std::string to_string(const HeadConfig& config) {
  std::ostringstream os;
  os << "conv[";
  for (std::size_t i = 0; i < config.conv.size(); ++i) {
    if (i) os << " ";
    os << config.conv[i].filter_size << "x" << config.conv[i].num_filters << ":"
       << activation_name(config.conv[i].activation);
  }
  os << "]";
  if (config.pool_size) os << " pool[" << *config.pool_size << "]";
  os << " fc[";
  for (std::size_t i = 0; i < config.fc.size(); ++i) {
    if (i) os << " ";
    os << config.fc[i].neurons << ":" << activation_name(config.fc[i].activation) << ":d"
       << config.fc[i].dropout;
  }
  os << "]";
  return os.str();
}

}  // namespace tascforge
