#pragma once

#include <span>
#include <vector>

#include "tascforge/searchspace.hpp"
#include "tascforge/tensor.hpp"

namespace tascforge {

// Squared-exponential kernel with per-dimension (ARD) lengthscales.
struct KernelParams {
  std::vector<double> lengthscales;
  double signal_variance = 1.0;
  double noise_variance = 0.0;

  void validate(std::size_t dim) const;
};

// k(x1,x2) = signal_variance * exp(-1/2 * sum_i ((x1_i - x2_i)/l_i)^2)
double kernel(const KernelParams& params, std::span<const double> x1,
              std::span<const double> x2);

// Fitted Gaussian-process surrogate with a constant prior mean (the empirical
// mean of the observations) and cached Cholesky factor / alpha vector.
struct GPModel {
  std::vector<EncodedPoint> x_train;
  std::vector<double> y_train;
  double prior_mean = 0.0;
  KernelParams params;
  Tensor chol;                // L with L L^T = K + noise I (+ jitter)
  std::vector<double> alpha;  // (K + noise I)^-1 (y - prior_mean)

  std::size_t dim() const { return x_train.empty() ? 0 : x_train[0].v.size(); }
};

GPModel fit(std::vector<EncodedPoint> x_train, std::vector<double> y_train,
            KernelParams params);

struct Posterior {
  double mean = 0.0;
  double variance = 0.0;  // clamped to >= 0
};

Posterior posterior(const GPModel& model, const EncodedPoint& x);

// Closed-form expected improvement E[(F(x) - f_best)^+] under a normal
// posterior. For sigma < 1e-12 falls back to max(mu - f_best, 0).
double expected_improvement(double mu, double var, double f_best);

// Log marginal likelihood of y under the kernel (constant prior mean).
double log_marginal_likelihood(const std::vector<EncodedPoint>& x_train,
                               const std::vector<double>& y_train,
                               const KernelParams& params);

// Grid search over shared lengthscale {0.05,0.1,0.2,0.5,1,2} and
// signal variance {0.01,0.1,1} with noise fixed at 1e-6; ties break toward
// the larger lengthscale. Cells whose factorization fails are skipped.
KernelParams optimize_hyperparams(const std::vector<EncodedPoint>& x_train,
                                  const std::vector<double>& y_train);

}  // namespace tascforge
