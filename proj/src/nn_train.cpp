#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "tascforge/nn.hpp"

namespace tascforge {

namespace {

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;
constexpr double kProbClamp = 1e-12;
constexpr double kAdagradEps = 1e-8;

struct LayerBuffers {
  std::vector<double> out;       // post-activation, post-merge
  std::vector<double> pre;       // input of the activation (bn output when bn on)
  std::vector<double> xhat;      // batchnorm normalized values
  std::vector<double> bn_mean, bn_var;
  std::vector<double> mask;      // dropout scale factors
  std::vector<std::size_t> argmax;
  bool used_batch_stats = false;
};

struct ForwardCache {
  std::vector<LayerBuffers> layers;
  Tensor probs;
};

struct LayerGrads {
  Tensor weight, bias, scale, shift;
};

const std::vector<double>& layer_input(const ForwardCache& cache, const Batch& batch,
                                       std::size_t layer) {
  return layer == 0 ? batch.x : cache.layers[layer - 1].out;
}

void apply_activation(Activation act, const std::vector<double>& pre, std::vector<double>& out) {
  out.resize(pre.size());
  for (std::size_t i = 0; i < pre.size(); ++i) out[i] = activate(act, pre[i]);
}

// Batchnorm over `channels` with channel-fastest layout: element e belongs to
// channel e % channels. Covers both conv (B*H*W rows) and dense (B rows).
void batchnorm_forward(const LayerSpec& layer, LayerState& state, bool train_mode,
                       std::size_t channels, std::vector<double>& z, LayerBuffers& buf) {
  const std::size_t n = z.size() / channels;
  buf.xhat.resize(z.size());
  buf.bn_mean.assign(channels, 0.0);
  buf.bn_var.assign(channels, 0.0);
  buf.used_batch_stats = train_mode && layer.trainable;

  if (buf.used_batch_stats) {
    for (std::size_t e = 0; e < z.size(); ++e) buf.bn_mean[e % channels] += z[e];
    for (std::size_t c = 0; c < channels; ++c) buf.bn_mean[c] /= static_cast<double>(n);
    for (std::size_t e = 0; e < z.size(); ++e) {
      double d = z[e] - buf.bn_mean[e % channels];
      buf.bn_var[e % channels] += d * d;
    }
    for (std::size_t c = 0; c < channels; ++c) {
      buf.bn_var[c] /= static_cast<double>(n);
      state.bn_mean[c] = (1.0 - kBnMomentum) * state.bn_mean[c] + kBnMomentum * buf.bn_mean[c];
      state.bn_var[c] = (1.0 - kBnMomentum) * state.bn_var[c] + kBnMomentum * buf.bn_var[c];
    }
  } else {
    for (std::size_t c = 0; c < channels; ++c) {
      buf.bn_mean[c] = state.bn_mean[c];
      buf.bn_var[c] = state.bn_var[c];
    }
  }
  for (std::size_t e = 0; e < z.size(); ++e) {
    std::size_t c = e % channels;
    double istd = 1.0 / std::sqrt(buf.bn_var[c] + kBnEps);
    buf.xhat[e] = (z[e] - buf.bn_mean[c]) * istd;
    z[e] = state.bn_scale[c] * buf.xhat[e] + state.bn_shift[c];
  }
}

void batchnorm_backward(const LayerState& state, const LayerBuffers& buf, std::size_t channels,
                        const std::vector<double>& dz_out, std::vector<double>& dz_in,
                        LayerGrads& grads) {
  const std::size_t total = dz_out.size();
  const std::size_t n = total / channels;
  dz_in.assign(total, 0.0);
  if (grads.scale.size() == 0) {
    grads.scale = Tensor({channels});
    grads.shift = Tensor({channels});
  }
  if (!buf.used_batch_stats) {
    for (std::size_t e = 0; e < total; ++e) {
      std::size_t c = e % channels;
      double istd = 1.0 / std::sqrt(buf.bn_var[c] + kBnEps);
      grads.scale[c] += dz_out[e] * buf.xhat[e];
      grads.shift[c] += dz_out[e];
      dz_in[e] = dz_out[e] * state.bn_scale[c] * istd;
    }
    return;
  }
  std::vector<double> sum_dxhat(channels, 0.0), sum_dxhat_xhat(channels, 0.0);
  for (std::size_t e = 0; e < total; ++e) {
    std::size_t c = e % channels;
    double dxhat = dz_out[e] * state.bn_scale[c];
    grads.scale[c] += dz_out[e] * buf.xhat[e];
    grads.shift[c] += dz_out[e];
    sum_dxhat[c] += dxhat;
    sum_dxhat_xhat[c] += dxhat * buf.xhat[e];
  }
  for (std::size_t e = 0; e < total; ++e) {
    std::size_t c = e % channels;
    double istd = 1.0 / std::sqrt(buf.bn_var[c] + kBnEps);
    double dxhat = dz_out[e] * state.bn_scale[c];
    dz_in[e] = istd / static_cast<double>(n) *
               (static_cast<double>(n) * dxhat - sum_dxhat[c] - buf.xhat[e] * sum_dxhat_xhat[c]);
  }
}

ForwardCache run_forward(ModelState& model, const NetworkSpec& spec,
                         const std::vector<LayerShape>& shapes, const Batch& batch,
                         bool train_mode) {
  ForwardCache cache;
  cache.layers.resize(spec.layers.size());
  const std::size_t b_count = batch.count;

  for (std::size_t li = 0; li < spec.layers.size(); ++li) {
    const auto& layer = spec.layers[li];
    auto& state = model.layers[li];
    auto& buf = cache.layers[li];
    const auto& in = layer_input(cache, batch, li);
    const std::size_t out_vol = shapes[li].volume();

    switch (layer.kind) {
      case LayerKind::Conv: {
        const std::size_t hi = li == 0 ? spec.input_h : shapes[li - 1].h;
        const std::size_t wi = li == 0 ? spec.input_w : shapes[li - 1].w;
        const std::size_t ci = li == 0 ? spec.input_c : shapes[li - 1].c;
        const std::size_t k = static_cast<std::size_t>(layer.kernel);
        const std::size_t f = static_cast<std::size_t>(layer.filters);
        const std::size_t ho = shapes[li].h, wo = shapes[li].w;
        buf.pre.assign(b_count * out_vol, 0.0);
        for (std::size_t b = 0; b < b_count; ++b) {
          const double* src = in.data() + b * hi * wi * ci;
          double* dst = buf.pre.data() + b * out_vol;
          for (std::size_t y = 0; y < ho; ++y)
            for (std::size_t x = 0; x < wo; ++x)
              for (std::size_t fi = 0; fi < f; ++fi) {
                double sum = state.bias[fi];
                const double* wgt = state.weight.data() + fi * k * k * ci;
                for (std::size_t kh = 0; kh < k; ++kh) {
                  const double* row = src + ((y + kh) * wi + x) * ci;
                  const double* wrow = wgt + kh * k * ci;
                  for (std::size_t e = 0; e < k * ci; ++e) sum += row[e] * wrow[e];
                }
                dst[(y * wo + x) * f + fi] = sum;
              }
        }
        if (layer.has_batchnorm) batchnorm_forward(layer, state, train_mode, f, buf.pre, buf);
        apply_activation(layer.activation, buf.pre, buf.out);
        break;
      }
      case LayerKind::Dense:
      case LayerKind::Output: {
        const std::size_t n_in = li == 0 ? spec.input_h * spec.input_w * spec.input_c
                                         : shapes[li - 1].volume();
        const std::size_t n_out = out_vol;
        buf.pre.assign(b_count * n_out, 0.0);
        for (std::size_t b = 0; b < b_count; ++b) {
          const double* src = in.data() + b * n_in;
          double* dst = buf.pre.data() + b * n_out;
          for (std::size_t o = 0; o < n_out; ++o) dst[o] = state.bias[o];
          for (std::size_t i = 0; i < n_in; ++i) {
            const double v = src[i];
            if (v == 0.0) continue;
            const double* wrow = state.weight.data() + i * n_out;
            for (std::size_t o = 0; o < n_out; ++o) dst[o] += v * wrow[o];
          }
        }
        if (layer.kind == LayerKind::Output) {
          // row-wise softmax with max subtraction
          buf.out.resize(buf.pre.size());
          for (std::size_t b = 0; b < b_count; ++b) {
            const double* z = buf.pre.data() + b * n_out;
            double* p = buf.out.data() + b * n_out;
            double mx = z[0];
            for (std::size_t o = 1; o < n_out; ++o) mx = std::max(mx, z[o]);
            double sum = 0.0;
            for (std::size_t o = 0; o < n_out; ++o) {
              p[o] = std::exp(z[o] - mx);
              sum += p[o];
            }
            for (std::size_t o = 0; o < n_out; ++o) p[o] /= sum;
          }
        } else {
          if (layer.has_batchnorm)
            batchnorm_forward(layer, state, train_mode, n_out, buf.pre, buf);
          apply_activation(layer.activation, buf.pre, buf.out);
        }
        break;
      }
      case LayerKind::MaxPool: {
        const std::size_t hi = shapes[li - 1].h, wi = shapes[li - 1].w, c = shapes[li - 1].c;
        const std::size_t k = static_cast<std::size_t>(layer.kernel);
        const std::size_t s = static_cast<std::size_t>(layer.stride);
        const std::size_t ho = shapes[li].h, wo = shapes[li].w;
        buf.out.assign(b_count * out_vol, 0.0);
        buf.argmax.assign(b_count * out_vol, 0);
        for (std::size_t b = 0; b < b_count; ++b) {
          const double* src = in.data() + b * hi * wi * c;
          for (std::size_t y = 0; y < ho; ++y)
            for (std::size_t x = 0; x < wo; ++x)
              for (std::size_t ch = 0; ch < c; ++ch) {
                double best = -1e300;
                std::size_t best_idx = 0;
                for (std::size_t kh = 0; kh < k; ++kh)
                  for (std::size_t kw = 0; kw < k; ++kw) {
                    std::size_t idx = ((y * s + kh) * wi + (x * s + kw)) * c + ch;
                    if (src[idx] > best) {
                      best = src[idx];
                      best_idx = idx;
                    }
                  }
                std::size_t o = (y * wo + x) * c + ch;
                buf.out[b * out_vol + o] = best;
                buf.argmax[b * out_vol + o] = b * hi * wi * c + best_idx;
              }
        }
        break;
      }
      case LayerKind::Dropout: {
        buf.out = in;
        if (train_mode && layer.dropout_p > 0.0) {
          std::uniform_real_distribution<double> u(0.0, 1.0);
          const double keep_scale = 1.0 / (1.0 - layer.dropout_p);
          buf.mask.resize(buf.out.size());
          for (std::size_t e = 0; e < buf.out.size(); ++e) {
            buf.mask[e] = u(model.dropout_rng) < layer.dropout_p ? 0.0 : keep_scale;
            buf.out[e] *= buf.mask[e];
          }
        }
        break;
      }
      case LayerKind::Flatten:
        buf.out = in;  // (h,w,c) row-major flattening is the storage order
        break;
    }

    // element-wise residual add into the group's last member
    for (const auto& group : spec.residual_groups) {
      if (group.back() != li) continue;
      for (std::size_t m = 0; m + 1 < group.size(); ++m) {
        const auto& src = cache.layers[group[m]].out;
        for (std::size_t e = 0; e < buf.out.size(); ++e) buf.out[e] += src[e];
      }
    }
  }

  const auto& last = cache.layers.back();
  cache.probs = Tensor({b_count, shapes.back().volume()},
                       std::vector<double>(last.out.begin(), last.out.end()));
  return cache;
}

void run_backward(ModelState& model, const NetworkSpec& spec,
                  const std::vector<LayerShape>& shapes, const Batch& batch,
                  const ForwardCache& cache, const std::vector<double>& dlogits,
                  std::vector<LayerGrads>& grads) {
  const std::size_t n_layers = spec.layers.size();
  grads.assign(n_layers, {});
  std::vector<std::vector<double>> dout(n_layers);
  dout[n_layers - 1] = dlogits;
  const std::size_t b_count = batch.count;

  for (std::size_t li = n_layers; li-- > 0;) {
    const auto& layer = spec.layers[li];
    const auto& state = model.layers[li];
    const auto& buf = cache.layers[li];
    auto& g = grads[li];
    if (dout[li].empty()) dout[li].assign(b_count * shapes[li].volume(), 0.0);

    // gradient of the residual add flows unchanged into every earlier member
    for (const auto& group : spec.residual_groups) {
      if (group.back() != li) continue;
      for (std::size_t m = 0; m + 1 < group.size(); ++m) {
        auto& target = dout[group[m]];
        if (target.empty()) target.assign(dout[li].size(), 0.0);
        for (std::size_t e = 0; e < dout[li].size(); ++e) target[e] += dout[li][e];
      }
    }

    const auto& in = layer_input(cache, batch, li);
    std::vector<double>* din = li > 0 ? &dout[li - 1] : nullptr;
    if (din && din->empty()) din->assign(b_count * shapes[li - 1].volume(), 0.0);

    switch (layer.kind) {
      case LayerKind::Conv: {
        const std::size_t hi = li == 0 ? spec.input_h : shapes[li - 1].h;
        const std::size_t wi = li == 0 ? spec.input_w : shapes[li - 1].w;
        const std::size_t ci = li == 0 ? spec.input_c : shapes[li - 1].c;
        const std::size_t k = static_cast<std::size_t>(layer.kernel);
        const std::size_t f = static_cast<std::size_t>(layer.filters);
        const std::size_t ho = shapes[li].h, wo = shapes[li].w;
        const std::size_t out_vol = shapes[li].volume();

        std::vector<double> dpre(dout[li].size());
        for (std::size_t e = 0; e < dpre.size(); ++e)
          dpre[e] = dout[li][e] * activate_grad(layer.activation, buf.pre[e]);
        std::vector<double> dlin;
        if (layer.has_batchnorm) {
          batchnorm_backward(state, buf, f, dpre, dlin, g);
        } else {
          dlin = std::move(dpre);
        }

        g.weight = Tensor(state.weight.shape());
        g.bias = Tensor(state.bias.shape());
        for (std::size_t b = 0; b < b_count; ++b) {
          const double* src = in.data() + b * hi * wi * ci;
          const double* dl = dlin.data() + b * out_vol;
          double* dsrc = din ? din->data() + b * hi * wi * ci : nullptr;
          for (std::size_t y = 0; y < ho; ++y)
            for (std::size_t x = 0; x < wo; ++x)
              for (std::size_t fi = 0; fi < f; ++fi) {
                const double d = dl[(y * wo + x) * f + fi];
                if (d == 0.0) continue;
                g.bias[fi] += d;
                double* gw = g.weight.data() + fi * k * k * ci;
                const double* wgt = state.weight.data() + fi * k * k * ci;
                for (std::size_t kh = 0; kh < k; ++kh) {
                  const double* row = src + ((y + kh) * wi + x) * ci;
                  double* grow = gw + kh * k * ci;
                  for (std::size_t e = 0; e < k * ci; ++e) grow[e] += d * row[e];
                  if (dsrc) {
                    double* drow = dsrc + ((y + kh) * wi + x) * ci;
                    const double* wrow = wgt + kh * k * ci;
                    for (std::size_t e = 0; e < k * ci; ++e) drow[e] += d * wrow[e];
                  }
                }
              }
        }
        break;
      }
      case LayerKind::Dense:
      case LayerKind::Output: {
        const std::size_t n_in = li == 0 ? spec.input_h * spec.input_w * spec.input_c
                                         : shapes[li - 1].volume();
        const std::size_t n_out = shapes[li].units;
        std::vector<double> dlin;
        if (layer.kind == LayerKind::Output) {
          dlin = dout[li];  // loss gradient arrives w.r.t. the logits
        } else {
          std::vector<double> dpre(dout[li].size());
          for (std::size_t e = 0; e < dpre.size(); ++e)
            dpre[e] = dout[li][e] * activate_grad(layer.activation, buf.pre[e]);
          if (layer.has_batchnorm) {
            batchnorm_backward(state, buf, n_out, dpre, dlin, g);
          } else {
            dlin = std::move(dpre);
          }
        }
        g.weight = Tensor(state.weight.shape());
        g.bias = Tensor(state.bias.shape());
        for (std::size_t b = 0; b < b_count; ++b) {
          const double* src = in.data() + b * n_in;
          const double* dl = dlin.data() + b * n_out;
          for (std::size_t o = 0; o < n_out; ++o) g.bias[o] += dl[o];
          for (std::size_t i = 0; i < n_in; ++i) {
            double* gw = g.weight.data() + i * n_out;
            const double v = src[i];
            for (std::size_t o = 0; o < n_out; ++o) gw[o] += v * dl[o];
          }
          if (din) {
            double* dsrc = din->data() + b * n_in;
            for (std::size_t i = 0; i < n_in; ++i) {
              const double* wrow = state.weight.data() + i * n_out;
              double s = 0.0;
              for (std::size_t o = 0; o < n_out; ++o) s += wrow[o] * dl[o];
              dsrc[i] += s;
            }
          }
        }
        break;
      }
      case LayerKind::MaxPool: {
        if (din)
          for (std::size_t e = 0; e < dout[li].size(); ++e)
            (*din)[buf.argmax[e]] += dout[li][e];
        break;
      }
      case LayerKind::Dropout: {
        if (din) {
          if (buf.mask.empty()) {
            for (std::size_t e = 0; e < dout[li].size(); ++e) (*din)[e] += dout[li][e];
          } else {
            for (std::size_t e = 0; e < dout[li].size(); ++e)
              (*din)[e] += dout[li][e] * buf.mask[e];
          }
        }
        break;
      }
      case LayerKind::Flatten: {
        if (din)
          for (std::size_t e = 0; e < dout[li].size(); ++e) (*din)[e] += dout[li][e];
        break;
      }
    }
  }
}

void adagrad_update(Tensor& param, Tensor& acc, const Tensor& grad, double lr) {
  for (std::size_t e = 0; e < param.size(); ++e) {
    const double g = grad[e];
    acc[e] += g * g;
    param[e] -= lr * g / (std::sqrt(acc[e]) + kAdagradEps);
  }
}

Batch make_batch(const Dataset& data, std::span<const std::size_t> idx) {
  Batch b;
  b.count = idx.size();
  b.x.reserve(idx.size() * data.sample_size());
  for (std::size_t i : idx) {
    auto s = data.sample(i);
    b.x.insert(b.x.end(), s.begin(), s.end());
    b.labels.push_back(data.labels[i]);
  }
  return b;
}

}  // namespace

Tensor forward(ModelState& model, const NetworkSpec& spec, const Batch& batch,
               bool train_mode) {
  auto shapes = infer_shapes(spec);
  if (spec.layers.empty() || spec.layers.back().kind != LayerKind::Output)
    fail(ErrorCode::ShapeMismatch, "network must end in an output layer");
  const std::size_t vol = spec.input_h * spec.input_w * spec.input_c;
  if (batch.x.size() != batch.count * vol)
    fail(ErrorCode::ShapeMismatch, "batch size does not match the input volume");
  return run_forward(model, spec, shapes, batch, train_mode).probs;
}

std::vector<double> forward_features(ModelState& model, const NetworkSpec& spec,
                                     const Batch& batch) {
  if (spec.layers.empty()) return batch.x;
  auto shapes = infer_shapes(spec);
  const std::size_t vol = spec.input_h * spec.input_w * spec.input_c;
  if (batch.x.size() != batch.count * vol)
    fail(ErrorCode::ShapeMismatch, "batch size does not match the input volume");
  auto cache = run_forward(model, spec, shapes, batch, /*train_mode=*/false);
  return std::move(cache.layers.back().out);
}

double weighted_cross_entropy(const Tensor& probs, const Tensor& labels_onehot,
                              const ClassWeights& weights) {
  if (probs.rank() != 2 || !probs.same_shape(labels_onehot))
    fail(ErrorCode::ShapeMismatch, "probs/labels shape mismatch");
  const std::size_t b_count = probs.dim(0), classes = probs.dim(1);
  if (weights.w.size() != classes)
    fail(ErrorCode::ShapeMismatch, "class weight count mismatch");
  double loss = 0.0;
  for (std::size_t b = 0; b < b_count; ++b)
    for (std::size_t k = 0; k < classes; ++k) {
      double y = labels_onehot.at(b, k);
      if (y == 0.0) continue;
      double p = std::clamp(probs.at(b, k), kProbClamp, 1.0);
      loss += weights.w[k] * (-y * std::log(p));
    }
  return loss / static_cast<double>(b_count);
}

double weighted_cross_entropy(const Tensor& probs, const std::vector<int>& labels,
                              const ClassWeights& weights) {
  if (probs.rank() != 2 || probs.dim(0) != labels.size())
    fail(ErrorCode::ShapeMismatch, "probs/labels shape mismatch");
  double loss = 0.0;
  for (std::size_t b = 0; b < labels.size(); ++b) {
    double p = std::clamp(probs.at(b, labels[b]), kProbClamp, 1.0);
    loss += weights.w[labels[b]] * (-std::log(p));
  }
  return loss / static_cast<double>(labels.size());
}

RegularizerResult similarity_regularizer(
    const std::vector<std::vector<double>>& filters,
    const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
  double neg_cos_sum = 0.0;
  // accumulate d(sum of -cos)/dF first, scale by R afterwards
  std::vector<std::vector<double>> grad(filters.size());
  for (std::size_t f = 0; f < filters.size(); ++f) grad[f].assign(filters[f].size(), 0.0);

  for (const auto& [i, j] : pairs) {
    const auto& u = filters[i];
    const auto& v = filters[j];
    if (u.size() != v.size())
      fail(ErrorCode::ShapeMismatch, "paired filters must have equal lengths");
    double nu = l2_norm(std::span<const double>(u));
    double nv = l2_norm(std::span<const double>(v));
    if (nu == 0.0 || nv == 0.0) continue;  // zero-norm filter: cos = 0, no gradient
    double d = dot(std::span<const double>(u), std::span<const double>(v));
    double cos = std::clamp(d / (nu * nv), -1.0, 1.0);
    neg_cos_sum -= cos;
    for (std::size_t e = 0; e < u.size(); ++e) {
      grad[i][e] -= v[e] / (nu * nv) - cos * u[e] / (nu * nu);
      grad[j][e] -= u[e] / (nu * nv) - cos * v[e] / (nv * nv);
    }
  }

  RegularizerResult r;
  r.value = std::exp(neg_cos_sum);
  r.gradients = std::move(grad);
  for (auto& g : r.gradients)
    for (auto& e : g) e *= r.value;
  return r;
}

GradientResult compute_gradients(ModelState& model, const NetworkSpec& spec, const Batch& batch,
                                 const ClassWeights& weights,
                                 const std::vector<FilterPair>* reg_pairs) {
  auto shapes = infer_shapes(spec);
  auto cache = run_forward(model, spec, shapes, batch, /*train_mode=*/true);

  const std::size_t b_count = batch.count;
  const std::size_t classes = shapes.back().units;
  StepResult result;
  result.data_loss = weighted_cross_entropy(cache.probs, batch.labels, weights);

  std::vector<double> dlogits(b_count * classes);
  for (std::size_t b = 0; b < b_count; ++b) {
    const int t = batch.labels[b];
    const double w = weights.w[t] / static_cast<double>(b_count);
    for (std::size_t k = 0; k < classes; ++k) {
      double y = static_cast<int>(k) == t ? 1.0 : 0.0;
      dlogits[b * classes + k] = w * (cache.probs.at(b, k) - y);
    }
  }

  std::vector<LayerGrads> grads;
  run_backward(model, spec, shapes, batch, cache, dlogits, grads);

  result.total_loss = result.data_loss;
  if (reg_pairs) {
    // map every paired (layer, filter) onto a flat filter list
    std::vector<std::vector<double>> flat_filters;
    std::vector<std::pair<std::size_t, std::size_t>> flat_pairs;
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> index_of;
    auto flat_index = [&](std::size_t layer, std::size_t filter) {
      auto key = std::make_pair(layer, filter);
      auto it = index_of.find(key);
      if (it != index_of.end()) return it->second;
      const auto& w = model.layers[layer].weight;
      const std::size_t fsize = w.size() / w.dim(0);
      const double* base = w.data() + filter * fsize;
      flat_filters.emplace_back(base, base + fsize);
      index_of[key] = flat_filters.size() - 1;
      return flat_filters.size() - 1;
    };
    for (const auto& p : *reg_pairs) {
      if (p.layer >= spec.layers.size() || spec.layers[p.layer].kind != LayerKind::Conv)
        fail(ErrorCode::InvalidArgument, "regularizer pair refers to a non-conv layer");
      flat_pairs.emplace_back(flat_index(p.layer, p.i), flat_index(p.layer, p.j));
    }
    auto reg = similarity_regularizer(flat_filters, flat_pairs);
    result.regularizer = reg.value;
    result.total_loss += reg.value;
    for (const auto& [key, fi] : index_of) {
      auto& g = grads[key.first].weight;
      if (g.size() == 0) g = Tensor(model.layers[key.first].weight.shape());
      const std::size_t fsize = g.size() / g.dim(0);
      double* dst = g.data() + key.second * fsize;
      for (std::size_t e = 0; e < fsize; ++e) dst[e] += reg.gradients[fi][e];
    }
  }

  if (!std::isfinite(result.total_loss))
    fail(ErrorCode::NonFiniteLoss,
         "non-finite loss (data=" + std::to_string(result.data_loss) +
             ", reg=" + std::to_string(result.regularizer) + ")");

  GradientResult out;
  out.loss = result;
  out.layers.resize(grads.size());
  for (std::size_t li = 0; li < grads.size(); ++li) {
    out.layers[li].weight = std::move(grads[li].weight);
    out.layers[li].bias = std::move(grads[li].bias);
    out.layers[li].scale = std::move(grads[li].scale);
    out.layers[li].shift = std::move(grads[li].shift);
  }
  return out;
}

StepResult train_step(ModelState& model, const NetworkSpec& spec, const Batch& batch,
                      const ClassWeights& weights, const std::vector<FilterPair>* reg_pairs,
                      double lr) {
  if (!(lr > 0.0)) fail(ErrorCode::InvalidArgument, "learning rate must be positive");
  auto result = compute_gradients(model, spec, batch, weights, reg_pairs);
  for (std::size_t li = 0; li < spec.layers.size(); ++li) {
    if (!spec.layers[li].trainable) continue;
    auto& state = model.layers[li];
    auto& g = result.layers[li];
    if (g.weight.size() > 0) adagrad_update(state.weight, state.acc_weight, g.weight, lr);
    if (g.bias.size() > 0) adagrad_update(state.bias, state.acc_bias, g.bias, lr);
    if (g.scale.size() > 0) adagrad_update(state.bn_scale, state.acc_scale, g.scale, lr);
    if (g.shift.size() > 0) adagrad_update(state.bn_shift, state.acc_shift, g.shift, lr);
  }
  return result.loss;
}

TrainResult train(ModelState& model, const NetworkSpec& spec, const Dataset& train_data,
                  const Dataset& val_data, const ClassWeights& weights,
                  const std::vector<FilterPair>* reg_pairs, SnapshotStore* snapshots,
                  const TrainOptions& options) {
  if (options.epochs < 1) fail(ErrorCode::InvalidArgument, "epochs must be >= 1");
  if (options.batch_size < 1) fail(ErrorCode::InvalidArgument, "batch size must be >= 1");

  PlateauDecay lr_policy(1e-2, std::sqrt(0.1), 1e-5);
  std::mt19937_64 shuffle_rng(options.shuffle_seed);
  std::vector<std::size_t> order(train_data.count());
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      std::size_t n = std::min(options.batch_size, order.size() - start);
      auto batch = make_batch(train_data, std::span(order).subspan(start, n));
      loss_sum += train_step(model, spec, batch, weights, reg_pairs, lr_policy.current())
                      .total_loss;
      steps++;
    }

    EpochLog log;
    log.lr = lr_policy.current();
    log.train_loss = steps > 0 ? loss_sum / static_cast<double>(steps) : 0.0;
    log.val_loss = evaluate_loss(model, spec, val_data, weights);
    log.val_accuracy = evaluate_accuracy(model, spec, val_data);
    result.best_val_accuracy = std::max(result.best_val_accuracy, log.val_accuracy);
    result.epochs.push_back(log);
    lr_policy.observe(log.val_loss);

    if (snapshots) snapshots->record_epoch(spec, model);
  }
  return result;
}

namespace {

template <typename Fn>
void for_each_eval_batch(const Dataset& data, Fn&& fn) {
  const std::size_t chunk = 64;
  std::vector<std::size_t> idx(data.count());
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t start = 0; start < idx.size(); start += chunk) {
    std::size_t n = std::min(chunk, idx.size() - start);
    fn(make_batch(data, std::span(idx).subspan(start, n)), start);
  }
}

}  // namespace

double evaluate_accuracy(ModelState& model, const NetworkSpec& spec, const Dataset& data) {
  if (data.count() == 0) fail(ErrorCode::InvalidArgument, "cannot evaluate on empty data");
  std::size_t correct = 0;
  for_each_eval_batch(data, [&](const Batch& batch, std::size_t) {
    auto probs = forward(model, spec, batch, /*train_mode=*/false);
    const std::size_t classes = probs.dim(1);
    for (std::size_t b = 0; b < batch.count; ++b) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < classes; ++k)
        if (probs.at(b, k) > probs.at(b, best)) best = k;
      if (static_cast<int>(best) == batch.labels[b]) correct++;
    }
  });
  return static_cast<double>(correct) / static_cast<double>(data.count());
}

double evaluate_loss(ModelState& model, const NetworkSpec& spec, const Dataset& data,
                     const ClassWeights& weights) {
  if (data.count() == 0) fail(ErrorCode::InvalidArgument, "cannot evaluate on empty data");
  double loss = 0.0;
  for_each_eval_batch(data, [&](const Batch& batch, std::size_t) {
    auto probs = forward(model, spec, batch, /*train_mode=*/false);
    loss += weighted_cross_entropy(probs, batch.labels, weights) *
            static_cast<double>(batch.count);
  });
  return loss / static_cast<double>(data.count());
}

}  // namespace tascforge
