#include "tascforge/nn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace tascforge {

LayerSpec LayerSpec::conv(int k, int filters, Activation act, bool bn) {
  LayerSpec s;
  s.kind = LayerKind::Conv;
  s.kernel = k;
  s.stride = 1;
  s.filters = filters;
  s.activation = act;
  s.has_batchnorm = bn;
  return s;
}

LayerSpec LayerSpec::maxpool(int k, int stride) {
  LayerSpec s;
  s.kind = LayerKind::MaxPool;
  s.kernel = k;
  s.stride = stride;
  return s;
}

LayerSpec LayerSpec::dense(int neurons, Activation act, bool bn) {
  LayerSpec s;
  s.kind = LayerKind::Dense;
  s.neurons = neurons;
  s.activation = act;
  s.has_batchnorm = bn;
  return s;
}

LayerSpec LayerSpec::dropout(double p) {
  LayerSpec s;
  s.kind = LayerKind::Dropout;
  s.dropout_p = p;
  return s;
}

LayerSpec LayerSpec::flatten() {
  LayerSpec s;
  s.kind = LayerKind::Flatten;
  return s;
}

LayerSpec LayerSpec::output(int classes) {
  LayerSpec s;
  s.kind = LayerKind::Output;
  s.classes = classes;
  return s;
}

std::vector<LayerShape> infer_shapes(const NetworkSpec& spec) {
  if (spec.input_h < 1 || spec.input_w < 1 || spec.input_c < 1)
    fail(ErrorCode::ShapeMismatch, "network input shape must be positive");
  std::vector<LayerShape> shapes;
  LayerShape cur;
  cur.spatial = true;
  cur.h = spec.input_h;
  cur.w = spec.input_w;
  cur.c = spec.input_c;

  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& layer = spec.layers[i];
    switch (layer.kind) {
      case LayerKind::Conv: {
        if (!cur.spatial) fail(ErrorCode::ShapeMismatch, "conv needs a spatial input");
        if (layer.kernel < 1 || layer.filters < 1)
          fail(ErrorCode::ShapeMismatch, "conv kernel and filter count must be >= 1");
        std::size_t k = static_cast<std::size_t>(layer.kernel);
        if (cur.h < k || cur.w < k)
          fail(ErrorCode::ArchitectureInfeasible,
               "conv kernel " + std::to_string(layer.kernel) + " does not fit " +
                   std::to_string(cur.h) + "x" + std::to_string(cur.w) + " at layer " +
                   std::to_string(i));
        cur.h = cur.h - k + 1;
        cur.w = cur.w - k + 1;
        cur.c = static_cast<std::size_t>(layer.filters);
        break;
      }
      case LayerKind::MaxPool: {
        if (!cur.spatial) fail(ErrorCode::ShapeMismatch, "maxpool needs a spatial input");
        std::size_t k = static_cast<std::size_t>(layer.kernel);
        std::size_t s = static_cast<std::size_t>(layer.stride);
        if (layer.kernel < 1 || layer.stride < 1)
          fail(ErrorCode::ShapeMismatch, "maxpool kernel/stride must be >= 1");
        if (cur.h < k || cur.w < k)
          fail(ErrorCode::ArchitectureInfeasible,
               "pool window " + std::to_string(layer.kernel) + " does not fit " +
                   std::to_string(cur.h) + "x" + std::to_string(cur.w) + " at layer " +
                   std::to_string(i));
        cur.h = (cur.h - k) / s + 1;
        cur.w = (cur.w - k) / s + 1;
        break;
      }
      case LayerKind::Flatten: {
        if (!cur.spatial) fail(ErrorCode::ShapeMismatch, "flatten needs a spatial input");
        cur.units = cur.h * cur.w * cur.c;
        cur.spatial = false;
        break;
      }
      case LayerKind::Dense: {
        if (cur.spatial) fail(ErrorCode::ShapeMismatch, "dense needs a flat input");
        if (layer.neurons < 1) fail(ErrorCode::ShapeMismatch, "dense neurons must be >= 1");
        cur.units = static_cast<std::size_t>(layer.neurons);
        break;
      }
      case LayerKind::Dropout:
        break;  // shape preserved
      case LayerKind::Output: {
        if (cur.spatial) fail(ErrorCode::ShapeMismatch, "output needs a flat input");
        if (layer.classes < 2) fail(ErrorCode::ShapeMismatch, "output needs >= 2 classes");
        if (i + 1 != spec.layers.size())
          fail(ErrorCode::ShapeMismatch, "output must be the last layer");
        cur.units = static_cast<std::size_t>(layer.classes);
        break;
      }
    }
    shapes.push_back(cur);
  }

  for (const auto& group : spec.residual_groups) {
    if (group.size() < 2) fail(ErrorCode::ShapeMismatch, "residual group needs >= 2 members");
    for (std::size_t m : group)
      if (m >= spec.layers.size())
        fail(ErrorCode::ShapeMismatch, "residual group index out of range");
    if (!std::is_sorted(group.begin(), group.end()))
      fail(ErrorCode::ShapeMismatch, "residual group indices must be ascending");
    const auto& target = shapes[group.back()];
    for (std::size_t m : group) {
      if (spec.layers[m].kind != LayerKind::Conv)
        fail(ErrorCode::ShapeMismatch, "residual group members must be conv layers");
      const auto& s = shapes[m];
      if (!s.spatial || s.h != target.h || s.w != target.w || s.c != target.c)
        fail(ErrorCode::ShapeMismatch, "residual group members must share output shapes");
    }
  }
  return shapes;
}

namespace {

std::size_t conv_in_channels(const NetworkSpec& spec, const std::vector<LayerShape>& shapes,
                             std::size_t layer) {
  if (layer == 0) return spec.input_c;
  return shapes[layer - 1].c;
}

}  // namespace

ModelState init_model(const NetworkSpec& spec, std::uint64_t seed) {
  auto shapes = infer_shapes(spec);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  ModelState model;
  model.dropout_rng.seed(seed ^ 0x9e3779b97f4a7c15ull);
  model.layers.resize(spec.layers.size());

  auto he_fill = [&](Tensor& t, std::size_t fan_in) {
    double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : t.values()) v = gauss(rng) * std_dev;
  };

  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& layer = spec.layers[i];
    auto& state = model.layers[i];
    switch (layer.kind) {
      case LayerKind::Conv: {
        std::size_t k = static_cast<std::size_t>(layer.kernel);
        std::size_t cin = conv_in_channels(spec, shapes, i);
        std::size_t f = static_cast<std::size_t>(layer.filters);
        state.weight = Tensor({f, k, k, cin});
        he_fill(state.weight, k * k * cin);
        state.bias = Tensor({f});
        if (layer.has_batchnorm) {
          state.bn_scale = Tensor({f});
          state.bn_shift = Tensor({f});
          state.bn_mean = Tensor({f});
          state.bn_var = Tensor({f});
          for (auto& v : state.bn_scale.values()) v = 1.0;
          for (auto& v : state.bn_var.values()) v = 1.0;
          state.acc_scale = Tensor({f});
          state.acc_shift = Tensor({f});
        }
        state.acc_weight = Tensor(state.weight.shape());
        state.acc_bias = Tensor(state.bias.shape());
        break;
      }
      case LayerKind::Dense:
      case LayerKind::Output: {
        std::size_t n_in = i == 0 ? spec.input_h * spec.input_w * spec.input_c
                                  : shapes[i - 1].volume();
        std::size_t n_out = shapes[i].units;
        state.weight = Tensor({n_in, n_out});
        he_fill(state.weight, n_in);
        state.bias = Tensor({n_out});
        if (layer.has_batchnorm && layer.kind == LayerKind::Dense) {
          state.bn_scale = Tensor({n_out});
          state.bn_shift = Tensor({n_out});
          state.bn_mean = Tensor({n_out});
          state.bn_var = Tensor({n_out});
          for (auto& v : state.bn_scale.values()) v = 1.0;
          for (auto& v : state.bn_var.values()) v = 1.0;
          state.acc_scale = Tensor({n_out});
          state.acc_shift = Tensor({n_out});
        }
        state.acc_weight = Tensor(state.weight.shape());
        state.acc_bias = Tensor(state.bias.shape());
        break;
      }
      default:
        break;  // no parameters
    }
  }
  return model;
}

void SnapshotStore::record_epoch(const NetworkSpec& spec, const ModelState& model) {
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& layer = spec.layers[i];
    if (layer.kind != LayerKind::Conv) continue;
    if (static_cast<std::size_t>(layer.filters) < std::max<std::size_t>(eligibility_threshold, 2))
      continue;
    per_layer[i].push_back(model.layers[i].weight);
  }
  epochs++;
}

ParamCounts count_params(const NetworkSpec& spec) {
  auto shapes = infer_shapes(spec);
  ParamCounts counts;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& layer = spec.layers[i];
    unsigned long long total = 0, trainable = 0;
    switch (layer.kind) {
      case LayerKind::Conv: {
        unsigned long long k = static_cast<unsigned long long>(layer.kernel);
        unsigned long long cin = conv_in_channels(spec, shapes, i);
        unsigned long long f = static_cast<unsigned long long>(layer.filters);
        total = k * k * cin * f + f;
        trainable = total;
        if (layer.has_batchnorm) {
          total += 4 * f;
          trainable += 2 * f;
        }
        break;
      }
      case LayerKind::Dense:
      case LayerKind::Output: {
        unsigned long long n_in =
            i == 0 ? spec.input_h * spec.input_w * spec.input_c : shapes[i - 1].volume();
        unsigned long long n_out = shapes[i].units;
        total = n_in * n_out + n_out;
        trainable = total;
        if (layer.has_batchnorm && layer.kind == LayerKind::Dense) {
          total += 4 * n_out;
          trainable += 2 * n_out;
        }
        break;
      }
      default:
        break;
    }
    counts.total += total;
    if (layer.trainable) counts.trainable += trainable;
  }
  return counts;
}

unsigned long long count_flops(const NetworkSpec& spec) {
  auto shapes = infer_shapes(spec);
  unsigned long long flops = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& layer = spec.layers[i];
    switch (layer.kind) {
      case LayerKind::Conv: {
        unsigned long long k = static_cast<unsigned long long>(layer.kernel);
        unsigned long long cin = conv_in_channels(spec, shapes, i);
        unsigned long long f = static_cast<unsigned long long>(layer.filters);
        flops += 2ull * k * k * cin * f * shapes[i].h * shapes[i].w;
        break;
      }
      case LayerKind::Dense:
      case LayerKind::Output: {
        unsigned long long n_in =
            i == 0 ? spec.input_h * spec.input_w * spec.input_c : shapes[i - 1].volume();
        flops += 2ull * n_in * shapes[i].units;
        break;
      }
      default:
        break;
    }
  }
  return flops;
}

}  // namespace tascforge
