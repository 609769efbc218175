#include "tascforge/gp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace tascforge {

void KernelParams::validate(std::size_t dim) const {
  if (lengthscales.size() != dim)
    fail(ErrorCode::DimensionMismatch, "lengthscales dimension mismatch");
  for (double l : lengthscales)
    if (!(l > 0.0)) fail(ErrorCode::InvalidArgument, "lengthscales must be positive");
  if (!(signal_variance > 0.0))
    fail(ErrorCode::InvalidArgument, "signal variance must be positive");
  if (noise_variance < 0.0)
    fail(ErrorCode::InvalidArgument, "noise variance must be non-negative");
}

double kernel(const KernelParams& params, std::span<const double> x1,
              std::span<const double> x2) {
  if (x1.size() != x2.size() || x1.size() != params.lengthscales.size())
    fail(ErrorCode::DimensionMismatch, "kernel input dimension mismatch");
  double q = 0.0;
  for (std::size_t i = 0; i < x1.size(); ++i) {
    double d = (x1[i] - x2[i]) / params.lengthscales[i];
    q += d * d;
  }
  return params.signal_variance * std::exp(-0.5 * q);
}

namespace {

SPDMatrix kernel_matrix(const std::vector<EncodedPoint>& x, const KernelParams& params) {
  const std::size_t m = x.size();
  std::vector<double> k(m * m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double v = kernel(params, x[i].v, x[j].v);
      if (i == j) v += params.noise_variance;
      k[i * m + j] = v;
      k[j * m + i] = v;
    }
  }
  return SPDMatrix(m, std::move(k));
}

}  // namespace

GPModel fit(std::vector<EncodedPoint> x_train, std::vector<double> y_train,
            KernelParams params) {
  if (x_train.empty()) fail(ErrorCode::InvalidArgument, "fit needs at least one observation");
  if (x_train.size() != y_train.size())
    fail(ErrorCode::DimensionMismatch, "x_train/y_train length mismatch");
  const std::size_t d = x_train[0].v.size();
  for (const auto& x : x_train)
    if (x.v.size() != d) fail(ErrorCode::DimensionMismatch, "inconsistent point dimensions");
  params.validate(d);

  // A noise-free fit with duplicate rows has a singular kernel matrix that
  // jitter would silently turn into an interpolator of contradictory data;
  // reject it up front.
  if (params.noise_variance == 0.0) {
    for (std::size_t i = 0; i < x_train.size(); ++i)
      for (std::size_t j = i + 1; j < x_train.size(); ++j)
        if (x_train[i].v == x_train[j].v)
          fail(ErrorCode::NotPositiveDefinite,
               "duplicate training rows with zero noise variance");
  }

  GPModel model;
  model.prior_mean =
      std::accumulate(y_train.begin(), y_train.end(), 0.0) / static_cast<double>(y_train.size());
  model.params = params;

  auto k = kernel_matrix(x_train, params);
  model.chol = cholesky(k);

  const std::size_t m = y_train.size();
  Tensor resid({m});
  for (std::size_t i = 0; i < m; ++i) resid[i] = y_train[i] - model.prior_mean;
  auto a = triangular_solve(model.chol, triangular_solve(model.chol, resid), true);
  model.alpha.assign(a.data(), a.data() + m);
  model.x_train = std::move(x_train);
  model.y_train = std::move(y_train);
  return model;
}

Posterior posterior(const GPModel& model, const EncodedPoint& x) {
  if (x.v.size() != model.dim())
    fail(ErrorCode::DimensionMismatch, "query point dimension mismatch");
  const std::size_t m = model.x_train.size();
  Tensor kstar({m});
  for (std::size_t i = 0; i < m; ++i) kstar[i] = kernel(model.params, x.v, model.x_train[i].v);

  Posterior p;
  p.mean = model.prior_mean + dot(kstar.span(), std::span<const double>(model.alpha));
  auto v = triangular_solve(model.chol, kstar);
  double var = kernel(model.params, x.v, x.v) - dot(v.span(), v.span());
  p.variance = std::max(var, 0.0);
  return p;
}

double expected_improvement(double mu, double var, double f_best) {
  if (var < 0.0) fail(ErrorCode::InvalidArgument, "variance must be >= 0");
  double sigma = std::sqrt(var);
  double delta = mu - f_best;
  if (sigma < 1e-12) return std::max(delta, 0.0);
  double z = delta / sigma;
  double cdf = 0.5 * (1.0 + std::erf(z / std::numbers::sqrt2));
  double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
  return std::max(delta * cdf + sigma * pdf, 0.0);
}

double log_marginal_likelihood(const std::vector<EncodedPoint>& x_train,
                               const std::vector<double>& y_train,
                               const KernelParams& params) {
  const std::size_t m = y_train.size();
  double mean =
      std::accumulate(y_train.begin(), y_train.end(), 0.0) / static_cast<double>(m);
  auto k = kernel_matrix(x_train, params);
  auto l = cholesky(k);
  Tensor resid({m});
  for (std::size_t i = 0; i < m; ++i) resid[i] = y_train[i] - mean;
  auto alpha = triangular_solve(l, triangular_solve(l, resid), true);
  double data_term = 0.0, logdet = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    data_term += resid[i] * alpha[i];
    logdet += std::log(l.at(i, i));
  }
  return -0.5 * data_term - logdet -
         0.5 * static_cast<double>(m) * std::log(2.0 * std::numbers::pi);
}

KernelParams optimize_hyperparams(const std::vector<EncodedPoint>& x_train,
                                  const std::vector<double>& y_train) {
  if (x_train.size() < 2)
    fail(ErrorCode::InvalidArgument, "hyperparameter optimization needs m >= 2");
  const std::size_t d = x_train[0].v.size();
  static const double kLengthscales[] = {0.05, 0.1, 0.2, 0.5, 1.0, 2.0};
  static const double kSignalVariances[] = {0.01, 0.1, 1.0};
  const double kNoise = 1e-6;

  bool found = false;
  double best_lml = 0.0, best_l = 0.0;
  KernelParams best;
  for (double l : kLengthscales) {
    for (double sv : kSignalVariances) {
      KernelParams params;
      params.lengthscales.assign(d, l);
      params.signal_variance = sv;
      params.noise_variance = kNoise;
      double lml;
      try {
        lml = log_marginal_likelihood(x_train, y_train, params);
      } catch (const Error&) {
        continue;  // skip cells whose factorization fails
      }
      bool better = !found || lml > best_lml || (lml == best_lml && l > best_l);
      if (better) {
        found = true;
        best_lml = lml;
        best_l = l;
        best = params;
      }
    }
  }
  if (!found)
    fail(ErrorCode::NotPositiveDefinite, "every hyperparameter grid cell failed to factorize");
  return best;
}

}  // namespace tascforge
