#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "tascforge/nn.hpp"

using namespace tascforge;

namespace {

Batch random_batch(const NetworkSpec& spec, std::size_t count, int classes,
                   std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Batch b;
  b.count = count;
  b.x.resize(count * spec.input_h * spec.input_w * spec.input_c);
  for (auto& v : b.x) v = u(rng);
  for (std::size_t i = 0; i < count; ++i) b.labels.push_back(static_cast<int>(i % classes));
  return b;
}

// Loss as a pure function of the parameters: the model is copied so dropout
// masks and batchnorm statistics replay identically on every evaluation.
double loss_at(const ModelState& model, const NetworkSpec& spec, const Batch& batch,
               const ClassWeights& weights, const std::vector<FilterPair>* pairs) {
  ModelState copy = model;
  return compute_gradients(copy, spec, batch, weights, pairs).loss.total_loss;
}

struct FdReport {
  double worst_rel = 0.0;
  std::size_t checked = 0;
};

double rel_err(double a, double b) {
  double denom = std::max({std::fabs(a), std::fabs(b), 1e-6});
  return std::fabs(a - b) / denom;
}

// Central finite differences (h = 1e-5) over every parameter of every layer.
FdReport finite_difference_check(const ModelState& model, const NetworkSpec& spec,
                                 const Batch& batch, const ClassWeights& weights,
                                 const std::vector<FilterPair>* pairs) {
  const double h = 1e-5;
  ModelState base = model;
  auto analytic = compute_gradients(base, spec, batch, weights, pairs);

  FdReport report;
  ModelState mutated = model;  // parameters poked in place, restored after each probe
  for (std::size_t li = 0; li < spec.layers.size(); ++li) {
    auto& st = mutated.layers[li];
    const auto& g = analytic.layers[li];
    auto probe = [&](Tensor& param, const Tensor& grad) {
      if (param.size() == 0) return;
      REQUIRE(grad.size() == param.size());
      for (std::size_t e = 0; e < param.size(); ++e) {
        double saved = param[e];
        param[e] = saved + h;
        double up = loss_at(mutated, spec, batch, weights, pairs);
        param[e] = saved - h;
        double down = loss_at(mutated, spec, batch, weights, pairs);
        param[e] = saved;
        double fd = (up - down) / (2.0 * h);
        report.worst_rel = std::max(report.worst_rel, rel_err(fd, grad[e]));
        report.checked++;
      }
    };
    probe(st.weight, g.weight);
    probe(st.bias, g.bias);
    if (st.bn_scale.size() > 0) {
      probe(st.bn_scale, g.scale);
      probe(st.bn_shift, g.shift);
    }
  }
  return report;
}

ClassWeights uniform_weights(int classes) {
  ClassWeights w;
  w.w.assign(classes, 1.0);
  return w;
}

}  // namespace

TEST_CASE("softmax rows sum to one and zero weights give uniform probabilities") {
  NetworkSpec spec;
  spec.input_h = spec.input_w = 2;
  spec.input_c = 1;
  spec.layers = {LayerSpec::flatten(), LayerSpec::output(4)};
  auto model = init_model(spec, 1);
  for (auto& v : model.layers[1].weight.values()) v = 0.0;
  for (auto& v : model.layers[1].bias.values()) v = 0.0;

  auto batch = random_batch(spec, 5, 4, 2);
  auto probs = forward(model, spec, batch, false);
  for (std::size_t b = 0; b < 5; ++b) {
    double sum = 0.0;
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK(probs.at(b, k) == doctest::Approx(0.25));
      sum += probs.at(b, k);
    }
    CHECK(std::fabs(sum - 1.0) <= 1e-9);
  }
}

TEST_CASE("eval-mode forward is deterministic") {
  NetworkSpec spec;
  spec.input_h = spec.input_w = 4;
  spec.input_c = 1;
  spec.layers = {LayerSpec::conv(2, 3, Activation::ReLU, true), LayerSpec::flatten(),
                 LayerSpec::dropout(0.5), LayerSpec::output(2)};
  auto model = init_model(spec, 3);
  auto batch = random_batch(spec, 3, 2, 4);
  auto p1 = forward(model, spec, batch, false);
  auto p2 = forward(model, spec, batch, false);
  CHECK(p1.values() == p2.values());
}

TEST_CASE("1x1 conv with a known filter matches hand arithmetic") {
  NetworkSpec spec;
  spec.input_h = spec.input_w = 2;
  spec.input_c = 1;
  spec.layers = {LayerSpec::conv(1, 1, Activation::ReLU), LayerSpec::flatten(),
                 LayerSpec::output(2)};
  auto model = init_model(spec, 5);
  model.layers[0].weight.values() = {2.0};
  model.layers[0].bias.values() = {0.5};

  Batch batch;
  batch.count = 1;
  batch.x = {0.1, 0.2, 0.3, 0.4};
  batch.labels = {0};
  // run just past the conv by reading the flatten input through a probe net
  NetworkSpec probe = spec;
  probe.layers = {spec.layers[0], LayerSpec::flatten(), LayerSpec::output(2)};
  ModelState m2 = model;
  // identity-ish check through the full forward: set output weights to select inputs
  auto& ow = m2.layers[2].weight;  // {4, 2}
  for (auto& v : ow.values()) v = 0.0;
  ow.at(0, 0) = 1.0;  // logit0 = feature(0,0)
  ow.at(3, 1) = 1.0;  // logit1 = feature(1,1)
  for (auto& v : m2.layers[2].bias.values()) v = 0.0;
  auto probs = forward(m2, probe, batch, false);
  // feature map = relu(2*x + 0.5): [0.7, 0.9, 1.1, 1.3]
  double z0 = 0.7, z1 = 1.3;
  double want0 = std::exp(z0) / (std::exp(z0) + std::exp(z1));
  CHECK(probs.at(0, 0) == doctest::Approx(want0).epsilon(1e-12));
}

TEST_CASE("weighted cross entropy examples") {
  ClassWeights w1 = uniform_weights(2);

  Tensor perfect({2, 2}, {1, 0, 0, 1});
  Tensor onehot({2, 2}, {1, 0, 0, 1});
  CHECK(weighted_cross_entropy(perfect, onehot, w1) == 0.0);

  Tensor half({1, 2}, {0.5, 0.5});
  Tensor y0({1, 2}, {1, 0});
  CHECK(weighted_cross_entropy(half, y0, w1) == doctest::Approx(std::log(2.0)));

  // w_k = 1/N_k with N = (10, 40): class-0 term weighted 4x class-1
  ClassWeights w2;
  w2.w = {0.1, 0.025};
  Tensor p({2, 2}, {0.5, 0.5, 0.5, 0.5});
  Tensor ya({2, 2}, {1, 0, 0, 1});
  double loss = weighted_cross_entropy(p, ya, w2);
  double want = 0.5 * (0.1 * std::log(2.0) + 0.025 * std::log(2.0));
  CHECK(loss == doctest::Approx(want).epsilon(1e-12));
  CHECK(0.1 / 0.025 == 4.0);
}

TEST_CASE("similarity regularizer closed-form cases") {
  SUBCASE("empty pair set") {
    auto r = similarity_regularizer({{1.0, 0.0}, {0.0, 1.0}}, {});
    CHECK(r.value == 1.0);
    for (const auto& g : r.gradients)
      for (double v : g) CHECK(v == 0.0);
  }
  SUBCASE("identical filters") {
    auto r = similarity_regularizer({{0.3, 0.4}, {0.3, 0.4}}, {{0, 1}});
    CHECK(r.value == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
  }
  SUBCASE("orthogonal filters") {
    auto r = similarity_regularizer({{1.0, 0.0}, {0.0, 2.0}}, {{0, 1}});
    CHECK(r.value == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("zero-norm filter contributes nothing") {
    auto r = similarity_regularizer({{0.0, 0.0}, {1.0, 1.0}}, {{0, 1}});
    CHECK(r.value == 1.0);
    for (const auto& g : r.gradients)
      for (double v : g) CHECK(v == 0.0);
  }
}

TEST_CASE("zero-gradient parameters stay bit identical") {
  NetworkSpec spec;
  spec.input_h = spec.input_w = 2;
  spec.input_c = 1;
  spec.layers = {LayerSpec::flatten(), LayerSpec::dense(3, Activation::ReLU),
                 LayerSpec::output(2)};
  auto model = init_model(spec, 7);
  // drive the dense layer into the dead-ReLU regime: all activations zero
  for (auto& v : model.layers[1].weight.values()) v = 0.0;
  for (auto& v : model.layers[1].bias.values()) v = -10.0;
  auto before_dense_w = model.layers[1].weight.values();
  auto before_dense_b = model.layers[1].bias.values();
  auto before_out_w = model.layers[2].weight.values();
  auto before_out_b = model.layers[2].bias.values();

  auto batch = random_batch(spec, 4, 2, 8);
  batch.labels = {0, 0, 0, 1};  // unbalanced so the output-bias gradient is nonzero
  train_step(model, spec, batch, uniform_weights(2), nullptr, 0.1);

  CHECK(model.layers[1].weight.values() == before_dense_w);
  CHECK(model.layers[1].bias.values() == before_dense_b);
  // the output weights see zero input, so they are unchanged too;
  CHECK(model.layers[2].weight.values() == before_out_w);
  // the output bias has nonzero gradient and must move
  CHECK(model.layers[2].bias.values() != before_out_b);
}

TEST_CASE("gradients match central finite differences on a mixed net") {
  NetworkSpec spec;
  spec.input_h = spec.input_w = 5;
  spec.input_c = 2;
  spec.layers = {LayerSpec::conv(2, 3, Activation::Sigmoid, true),
                 LayerSpec::conv(2, 2, Activation::TanH),
                 LayerSpec::flatten(),
                 LayerSpec::dense(4, Activation::ELU, true),
                 LayerSpec::dropout(0.35),
                 LayerSpec::output(3)};
  auto model = init_model(spec, 11);
  auto batch = random_batch(spec, 3, 3, 12);
  ClassWeights w;
  w.w = {1.0, 0.5, 0.25};

  auto report = finite_difference_check(model, spec, batch, w, nullptr);
  CHECK(report.checked > 100);
  CHECK(report.worst_rel < 1e-4);
}

TEST_CASE("gradients match finite differences with pool, selu, relu, residual and regularizer") {
  NetworkSpec spec;
  spec.input_h = spec.input_w = 6;
  spec.input_c = 1;
  spec.layers = {LayerSpec::conv(3, 2, Activation::SELU),
                 LayerSpec::conv(1, 2, Activation::ReLU),
                 LayerSpec::maxpool(2, 2),
                 LayerSpec::flatten(),
                 LayerSpec::output(2)};
  spec.residual_groups = {{0, 1}};
  auto model = init_model(spec, 13);
  auto batch = random_batch(spec, 3, 2, 14);
  ClassWeights w;
  w.w = {0.5, 1.0};
  std::vector<FilterPair> pairs = {{0, 0, 1, 0.0}, {1, 0, 1, 0.0}};

  auto report = finite_difference_check(model, spec, batch, w, &pairs);
  CHECK(report.checked > 20);
  CHECK(report.worst_rel < 1e-4);
}

TEST_CASE("regularizer value flows into the step loss") {
  NetworkSpec spec;
  spec.input_h = spec.input_w = 3;
  spec.input_c = 1;
  spec.layers = {LayerSpec::conv(2, 2, Activation::TanH), LayerSpec::flatten(),
                 LayerSpec::output(2)};
  auto model = init_model(spec, 17);
  auto batch = random_batch(spec, 2, 2, 18);
  std::vector<FilterPair> pairs = {{0, 0, 1, 0.0}};
  auto res = compute_gradients(model, spec, batch, uniform_weights(2), &pairs);
  CHECK(res.loss.regularizer > 0.0);
  CHECK(res.loss.total_loss ==
        doctest::Approx(res.loss.data_loss + res.loss.regularizer).epsilon(1e-12));
}

TEST_CASE("overfit a tiny batch in 50 steps") {
  NetworkSpec spec;
  spec.input_h = spec.input_w = 2;
  spec.input_c = 1;
  spec.layers = {LayerSpec::flatten(), LayerSpec::output(2)};
  auto model = init_model(spec, 19);

  Batch batch;
  batch.count = 8;
  std::mt19937_64 rng(20);
  std::uniform_real_distribution<double> noise(-0.05, 0.05);
  for (int i = 0; i < 8; ++i) {
    double base = i % 2 == 0 ? 0.9 : 0.1;
    for (int e = 0; e < 4; ++e) batch.x.push_back(base + noise(rng));
    batch.labels.push_back(i % 2);
  }
  ClassWeights w;
  w.w = {0.25, 0.25};

  double loss = 0.0;
  for (int step = 0; step < 50; ++step)
    loss = train_step(model, spec, batch, w, nullptr, 0.5).total_loss;
  CHECK(loss < 0.01);
}

TEST_CASE("plateau decay follows the scripted loss sequence") {
  PlateauDecay lr(1e-2, std::sqrt(0.1), 1e-5);
  lr.observe(1.0);
  CHECK(lr.current() == 1e-2);
  lr.observe(0.9);
  CHECK(lr.current() == 1e-2);  // monotone so far
  lr.observe(0.95);             // epoch 3 worse than epoch 2
  CHECK(lr.current() == doctest::Approx(3.1623e-3).epsilon(1e-4));
  for (int i = 0; i < 50; ++i) lr.observe(10.0 + i);
  CHECK(lr.current() == 1e-5);  // floor
}

TEST_CASE("train records one snapshot per eligible layer per epoch") {
  NetworkSpec spec;
  spec.input_h = spec.input_w = 6;
  spec.input_c = 1;
  spec.layers = {LayerSpec::conv(3, 4, Activation::ReLU), LayerSpec::conv(2, 2, Activation::ReLU),
                 LayerSpec::flatten(), LayerSpec::output(2)};
  auto model = init_model(spec, 23);

  std::mt19937_64 rng(24);
  auto data = generate_synthetic(2, 8, 6, 6, 1, rng, SyntheticStyle::Source);
  std::mt19937_64 srng(25);
  auto [tr, va] = split(data, 0.25, srng);
  auto w = class_weights(tr);

  SnapshotStore store;
  store.eligibility_threshold = 4;  // only the 4-filter layer qualifies
  TrainOptions opts;
  opts.epochs = 1;
  opts.batch_size = 4;
  auto result = train(model, spec, tr, va, w, nullptr, &store, opts);
  CHECK(result.epochs.size() == 1);
  CHECK(store.epochs == 1);
  CHECK(store.per_layer.size() == 1);
  CHECK(store.per_layer.count(0) == 1);
  CHECK(store.per_layer[0].size() == 1);

  // lr stays at 1e-2 while the validation loss is monotone (single epoch)
  CHECK(result.epochs[0].lr == 1e-2);
}

TEST_CASE("dropout inverted scaling preserves the expectation") {
  NetworkSpec spec;
  spec.input_h = spec.input_w = 2;
  spec.input_c = 1;
  spec.layers = {LayerSpec::flatten(), LayerSpec::dropout(0.3), LayerSpec::output(2)};
  auto model = init_model(spec, 29);
  // identity-ish output so we can observe the dropout layer through logits:
  // probe the post-dropout values via the logit of a linear readout
  auto& ow = model.layers[2].weight;
  for (auto& v : ow.values()) v = 0.0;
  ow.at(0, 0) = 1.0;
  for (auto& v : model.layers[2].bias.values()) v = 0.0;

  Batch batch;
  batch.count = 1;
  batch.x = {0.8, 0.2, 0.4, 0.6};
  batch.labels = {0};

  // eval mode: logit0 = x0
  const int n = 10000;
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    ModelState copy = model;
    copy.dropout_rng.seed(1000 + i);
    auto probs = forward(copy, spec, batch, true);
    double logit = std::log(probs.at(0, 0) / probs.at(0, 1));
    sum += logit;
    sumsq += logit * logit;
  }
  double mean = sum / n;
  double se = std::sqrt((sumsq / n - mean * mean) / n);
  CHECK(std::fabs(mean - 0.8) <= 3.0 * se);
}

TEST_CASE("selu constants") {
  CHECK(activate(Activation::SELU, 0.0) == 0.0);
  CHECK(activate(Activation::SELU, 1.0) == doctest::Approx(1.05070098).epsilon(1e-8));
  CHECK(activate(Activation::SELU, -50.0) == doctest::Approx(-1.75809934).epsilon(1e-7));
}

TEST_CASE("parameter counting") {
  NetworkSpec spec;
  spec.input_h = spec.input_w = 4;
  spec.input_c = 2;
  spec.layers = {LayerSpec::conv(3, 4, Activation::ReLU), LayerSpec::flatten(),
                 LayerSpec::dense(10, Activation::ReLU), LayerSpec::output(3)};
  // conv: 3*3*2*4+4 = 76
  // flatten: 2x2x4 = 16 units
  // dense: 16*10+10 = 170; output: 10*3+3 = 33
  auto c = count_params(spec);
  CHECK(c.total == 76 + 170 + 33);
  CHECK(c.trainable == c.total);

  // Dense(10) on 5 inputs = 60
  NetworkSpec d;
  d.input_h = 5;
  d.input_w = 1;
  d.input_c = 1;
  d.layers = {LayerSpec::flatten(), LayerSpec::dense(10, Activation::ReLU),
              LayerSpec::output(2)};
  auto dc = count_params(d);
  CHECK(dc.total == 60 + 22);

  // frozen layers count toward total only
  spec.layers[0].trainable = false;
  auto f = count_params(spec);
  CHECK(f.total == c.total);
  CHECK(f.trainable == c.total - 76);

  // batchnorm adds 4 per channel, 2 trainable
  NetworkSpec bn = spec;
  bn.layers[0].trainable = true;
  bn.layers[0].has_batchnorm = true;
  auto b = count_params(bn);
  CHECK(b.total == c.total + 16);
  CHECK(b.trainable == c.total + 8);
}

TEST_CASE("flop counting") {
  NetworkSpec d;
  d.input_h = 5;
  d.input_w = 1;
  d.input_c = 1;
  d.layers = {LayerSpec::flatten(), LayerSpec::dense(10, Activation::ReLU),
              LayerSpec::output(2)};
  // dense 5->10 = 100 flops, output 10->2 = 40
  CHECK(count_flops(d) == 140);

  NetworkSpec c;
  c.input_h = c.input_w = 4;
  c.input_c = 1;
  c.layers = {LayerSpec::conv(1, 1, Activation::ReLU), LayerSpec::flatten(),
              LayerSpec::output(2)};
  // conv: 2*1*1*1*4*4 = 32; output: 2*16*2 = 64
  CHECK(count_flops(c) == 32 + 64);

  NetworkSpec bad = c;
  bad.layers[0] = LayerSpec::conv(5, 1, Activation::ReLU);
  CHECK_THROWS_AS(count_flops(bad), Error);
}

TEST_CASE("evaluate_accuracy oracle and anti-oracle") {
  NetworkSpec spec;
  spec.input_h = 1;
  spec.input_w = 1;
  spec.input_c = 1;
  spec.layers = {LayerSpec::flatten(), LayerSpec::output(2)};
  auto model = init_model(spec, 31);
  // logit = w*x + b; picking w = (+big, -big) makes the prediction follow x > 0.5
  auto& w = model.layers[1].weight;
  w.at(0, 0) = 50.0;
  w.at(0, 1) = -50.0;
  model.layers[1].bias.values() = {-25.0, 25.0};

  Dataset data;
  data.h = data.w = data.c = 1;
  data.class_count = 2;
  std::mt19937_64 rng(33);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int manual_correct = 0;
  for (int i = 0; i < 10; ++i) {
    double x = u(rng);
    data.images.push_back(x);
    int label = static_cast<int>(rng() % 2);
    data.labels.push_back(label);
    int predicted = x > 0.5 ? 0 : 1;  // the crafted weights decide on x > 0.5
    if (predicted == label) manual_correct++;
  }
  CHECK(evaluate_accuracy(model, spec, data) == doctest::Approx(manual_correct / 10.0));

  // oracle labels: model is always right / anti-oracle: always wrong
  Dataset oracle = data;
  for (std::size_t i = 0; i < oracle.labels.size(); ++i)
    oracle.labels[i] = oracle.images[i] > 0.5 ? 0 : 1;
  CHECK(evaluate_accuracy(model, spec, oracle) == 1.0);
  for (auto& l : oracle.labels) l = 1 - l;
  CHECK(evaluate_accuracy(model, spec, oracle) == 0.0);
}
