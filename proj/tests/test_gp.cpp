#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "tascforge/gp.hpp"

using namespace tascforge;

namespace {

EncodedPoint pt(std::vector<double> v) { return EncodedPoint{std::move(v)}; }

std::vector<EncodedPoint> random_points(std::size_t m, std::size_t d, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<EncodedPoint> xs(m);
  for (auto& x : xs) {
    x.v.resize(d);
    for (auto& v : x.v) v = u(rng);
  }
  return xs;
}

// Independent oracle: Gauss-Jordan inverse, no Cholesky involved.
std::vector<double> dense_inverse(std::vector<double> a, std::size_t n) {
  std::vector<double> inv(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) inv[i * n + i] = 1.0;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::fabs(a[r * n + col]) > std::fabs(a[piv * n + col])) piv = r;
    for (std::size_t c = 0; c < n; ++c) {
      std::swap(a[piv * n + c], a[col * n + c]);
      std::swap(inv[piv * n + c], inv[col * n + c]);
    }
    double p = a[col * n + col];
    for (std::size_t c = 0; c < n; ++c) {
      a[col * n + c] /= p;
      inv[col * n + c] /= p;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      double f = a[r * n + col];
      if (f == 0.0) continue;
      for (std::size_t c = 0; c < n; ++c) {
        a[r * n + c] -= f * a[col * n + c];
        inv[r * n + c] -= f * inv[col * n + c];
      }
    }
  }
  return inv;
}

// Direct evaluation of the posterior mean/variance formulas through the
// explicit matrix inverse.
Posterior dense_posterior(const std::vector<EncodedPoint>& xs, const std::vector<double>& ys,
                          const KernelParams& params, const EncodedPoint& x) {
  const std::size_t m = xs.size();
  std::vector<double> k(m * m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      k[i * m + j] = kernel(params, xs[i].v, xs[j].v) + (i == j ? params.noise_variance : 0.0);
    }
  auto kinv = dense_inverse(k, m);
  double mean = 0.0;
  for (double y : ys) mean += y;
  mean /= static_cast<double>(m);

  std::vector<double> kstar(m);
  for (std::size_t i = 0; i < m; ++i) kstar[i] = kernel(params, x.v, xs[i].v);

  Posterior p;
  p.mean = mean;
  double var = kernel(params, x.v, x.v);
  for (std::size_t i = 0; i < m; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < m; ++j) row += kinv[i * m + j] * (ys[j] - mean);
    p.mean += kstar[i] * row;
    double rowk = 0.0;
    for (std::size_t j = 0; j < m; ++j) rowk += kinv[i * m + j] * kstar[j];
    var -= kstar[i] * rowk;
  }
  p.variance = var;
  return p;
}

KernelParams default_params(std::size_t d, double noise = 0.0) {
  KernelParams p;
  p.lengthscales.assign(d, 0.5);
  p.signal_variance = 1.0;
  p.noise_variance = noise;
  return p;
}

}  // namespace

TEST_CASE("kernel basics") {
  auto p = default_params(3);
  p.signal_variance = 2.5;
  std::vector<double> x{0.1, 0.2, 0.3};
  CHECK(kernel(p, x, x) == 2.5);

  auto p1 = default_params(1);
  p1.lengthscales = {1.0};
  std::vector<double> a{0.0}, b{100.0};
  CHECK(kernel(p1, a, b) < 1e-300);

  std::vector<double> y{0.9, 0.1, 0.4};
  CHECK(kernel(p, x, y) == kernel(p, y, x));
  CHECK_THROWS_AS(kernel(p, x, std::vector<double>{1.0}), Error);
}

TEST_CASE("fit single point") {
  auto m = fit({pt({0.5, 0.5})}, {0.9}, default_params(2));
  CHECK(m.prior_mean == 0.9);
  REQUIRE(m.alpha.size() == 1);
  CHECK(m.alpha[0] == 0.0);
}

TEST_CASE("fit rejects duplicate rows at zero noise") {
  auto xs = std::vector<EncodedPoint>{pt({0.2, 0.8}), pt({0.2, 0.8})};
  CHECK_THROWS_AS(fit(xs, {0.5, 0.6}, default_params(2)), Error);
  try {
    fit(xs, {0.5, 0.6}, default_params(2));
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NotPositiveDefinite);
  }
  // with positive noise the same data fits fine
  CHECK_NOTHROW(fit(xs, {0.5, 0.6}, default_params(2, 1e-4)));
}

TEST_CASE("noise-free posterior interpolates the training targets") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    auto xs = random_points(5, 4, rng);
    std::vector<double> ys(5);
    for (auto& y : ys) y = u(rng);
    auto model = fit(xs, ys, default_params(4));
    for (std::size_t i = 0; i < xs.size(); ++i) {
      auto p = posterior(model, xs[i]);
      CHECK(std::fabs(p.mean - ys[i]) <= 1e-8);
      CHECK(p.variance <= 1e-8);
      CHECK(p.variance >= 0.0);
    }
  }
}

TEST_CASE("posterior reverts to the prior far from the data") {
  auto model = fit({pt({0.1}), pt({0.9})}, {0.3, 0.7}, default_params(1));
  EncodedPoint far = pt({1e6});
  auto p = posterior(model, far);
  CHECK(std::fabs(p.mean - model.prior_mean) <= 1e-6);
  CHECK(std::fabs(p.variance - model.params.signal_variance) <= 1e-6);
}

TEST_CASE("posterior matches the dense-inverse oracle") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto params = default_params(3, 1e-6);
  for (int trial = 0; trial < 5; ++trial) {
    auto xs = random_points(5, 3, rng);
    std::vector<double> ys(5);
    for (auto& y : ys) y = u(rng);
    auto model = fit(xs, ys, params);
    for (int q = 0; q < 10; ++q) {
      auto x = random_points(1, 3, rng)[0];
      auto got = posterior(model, x);
      auto want = dense_posterior(xs, ys, params, x);
      CHECK(std::fabs(got.mean - want.mean) <= 1e-9);
      CHECK(std::fabs(got.variance - std::max(want.variance, 0.0)) <= 1e-9);
    }
  }
}

TEST_CASE("posterior variance never exceeds the signal variance") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto xs = random_points(8, 5, rng);
  std::vector<double> ys(8);
  for (auto& y : ys) y = u(rng);
  auto model = fit(xs, ys, default_params(5, 1e-6));
  for (int q = 0; q < 200; ++q) {
    auto x = random_points(1, 5, rng)[0];
    CHECK(posterior(model, x).variance <= model.params.signal_variance + 1e-9);
  }
}

TEST_CASE("expected improvement closed form") {
  // frozen from the Monte-Carlo oracle below (and phi(0) = 1/sqrt(2 pi))
  CHECK(expected_improvement(0.5, 1.0, 0.5) == doctest::Approx(0.398942).epsilon(1e-5));
  CHECK(expected_improvement(0.2, 0.0, 0.5) == 0.0);
  CHECK(expected_improvement(0.8, 0.0, 0.5) == doctest::Approx(0.3));
}

TEST_CASE("expected improvement matches a Monte-Carlo oracle") {
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  // keep sigma large enough that the positive-improvement tail is well
  // sampled at 1e6 draws; deeper tails leave the Monte-Carlo CLT regime
  std::uniform_real_distribution<double> su(0.25, 1.0);
  std::normal_distribution<double> g(0.0, 1.0);
  const int samples = 1000000;
  for (int trial = 0; trial < 10; ++trial) {
    double mu = u(rng), fb = u(rng), sigma = su(rng);
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < samples; ++i) {
      double v = std::max(mu + sigma * g(rng) - fb, 0.0);
      sum += v;
      sumsq += v * v;
    }
    double mc = sum / samples;
    double se = std::sqrt((sumsq / samples - mc * mc) / samples);
    double ei = expected_improvement(mu, sigma * sigma, fb);
    CHECK(std::fabs(ei - mc) <= 3.0 * se + 1e-12);
  }
}

TEST_CASE("expected improvement monotonicity properties") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 2000; ++trial) {
    double mu = u(rng), fb = u(rng), var = u(rng) * 0.25;
    double ei = expected_improvement(mu, var, fb);
    CHECK(ei >= 0.0);
    CHECK(expected_improvement(mu + 0.01, var, fb) >= ei - 1e-12);
    if (mu <= fb) {
      double sigma = std::sqrt(var);
      double grown = (sigma + 0.01) * (sigma + 0.01);
      CHECK(expected_improvement(mu, grown, fb) >= ei - 1e-12);
    }
  }
}

TEST_CASE("hyperparameter grid search") {
  std::mt19937_64 rng(37);

  SUBCASE("constant targets pick the largest lengthscale") {
    auto xs = random_points(6, 2, rng);
    std::vector<double> ys(6, 0.42);
    auto p = optimize_hyperparams(xs, ys);
    CHECK(p.lengthscales[0] == 2.0);
    CHECK(p.noise_variance == 1e-6);
  }

  SUBCASE("data from a known kernel brackets the true lengthscale") {
    auto xs = random_points(25, 2, rng);
    KernelParams truth;
    truth.lengthscales.assign(2, 0.2);
    truth.signal_variance = 1.0;
    truth.noise_variance = 1e-8;
    // sample y ~ N(0, K) through the Cholesky factor
    const std::size_t m = xs.size();
    std::vector<double> kmat(m * m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j)
        kmat[i * m + j] =
            kernel(truth, xs[i].v, xs[j].v) + (i == j ? truth.noise_variance : 0.0);
    auto l = cholesky(SPDMatrix(m, kmat));
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> z(m), ys(m, 0.0);
    for (auto& v : z) v = g(rng);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j <= i; ++j) ys[i] += l.at(i, j) * z[j];
    auto p = optimize_hyperparams(xs, ys);
    CHECK(p.lengthscales[0] >= 0.1);
    CHECK(p.lengthscales[0] <= 0.5);
  }

  SUBCASE("m = 1 violates the precondition") {
    CHECK_THROWS_AS(optimize_hyperparams({pt({0.5})}, {0.5}), Error);
  }
}
