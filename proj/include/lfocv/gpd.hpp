#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "lfocv/common.hpp"

namespace lfocv {

/// Result of fitting a generalized Pareto distribution to tail excesses.
struct GpdFit {
  double k_hat = 0.0;      ///< shape; > 0 means heavy tail
  double sigma_hat = 0.0;  ///< scale, always positive
  std::size_t n_tail = 0;  ///< number of excesses used
};

/// Number of grid points in the profile-likelihood shape search.
inline constexpr int kGpdGridPoints = 30;

/// Minimum number of tail samples required before a GPD fit is attempted.
inline constexpr std::size_t kMinTail = 5;

/// Size of the tail used for Pareto smoothing: ceil(min(0.2*S, 3*sqrt(S))),
/// clamped to [5, S-1].
inline std::size_t tail_length(std::size_t n_draws) {
  if (n_draws < 25)
    throw config_error("need at least 25 draws for Pareto smoothing, got " +
                       std::to_string(n_draws));
  const double s = static_cast<double>(n_draws);
  const double raw = std::ceil(std::min(0.2 * s, 3.0 * std::sqrt(s)));
  const double clamped = std::clamp(raw, 5.0, s - 1.0);
  return static_cast<std::size_t>(clamped);
}

/// GPD log density at x >= 0 with shape k and scale sigma.
inline double gpd_log_pdf(double x, double k, double sigma) {
  if (x < 0.0 || sigma <= 0.0) return -std::numeric_limits<double>::infinity();
  if (std::abs(k) < 1e-12) return -std::log(sigma) - x / sigma;
  const double inner = 1.0 + k * x / sigma;
  if (inner <= 0.0) return -std::numeric_limits<double>::infinity();
  return -std::log(sigma) - (1.0 / k + 1.0) * std::log(inner);
}

/// GPD quantile at probability p in [0, 1).
inline double gpd_quantile(double p, double k, double sigma) {
  if (std::abs(k) < 1e-12) return -sigma * std::log1p(-p);
  return sigma / k * (std::pow(1.0 - p, -k) - 1.0);
}

/// Fit a generalized Pareto distribution to positive excesses by the
/// profile-likelihood quadrature estimator: a grid over the transformed
/// shape variable theta = k / sigma, weighted by profile likelihood, with a
/// weak prior pulling k toward 0.5 for small samples.
inline GpdFit fit_generalized_pareto(std::span<const double> excesses,
                                     bool weak_prior = true,
                                     int min_grid_points = kGpdGridPoints) {
  const std::size_t n = excesses.size();
  if (n < kMinTail)
    throw config_error("insufficient tail: need at least " +
                       std::to_string(kMinTail) + " excesses, got " +
                       std::to_string(n));
  std::vector<double> x(excesses.begin(), excesses.end());
  for (double v : x)
    if (!(v > 0.0) || !std::isfinite(v))
      throw domain_error("GPD excesses must be positive and finite");
  std::sort(x.begin(), x.end());
  if (x.back() - x.front() < 1e-12 * std::max(1.0, std::abs(x.back())))
    throw domain_error("insufficient variation: all excesses (nearly) equal");

  const std::size_t grid =
      static_cast<std::size_t>(min_grid_points) +
      static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(n))));
  const double quart = x[static_cast<std::size_t>(std::floor(n / 4.0 + 0.5))];

  // Candidate values of theta = k / sigma and their profile log likelihoods.
  std::vector<double> theta(grid), prof(grid);
  for (std::size_t j = 0; j < grid; ++j) {
    const double jj = static_cast<double>(j) + 0.5;
    theta[j] = 1.0 / x.back() +
               (1.0 - std::sqrt(static_cast<double>(grid) / jj)) / (3.0 * quart);
    double mean_log = 0.0;
    for (double v : x) mean_log += std::log1p(-theta[j] * v);
    mean_log /= static_cast<double>(n);
    // profile log-lik / n: log(-theta / k(theta)) - k(theta) - 1
    prof[j] = std::log(-theta[j] / mean_log) - mean_log - 1.0;
  }

  // Posterior-style weights over the grid, normalized in log space.
  double theta_hat = 0.0;
  {
    std::vector<double> w(grid);
    const double lse = [&] {
      std::vector<double> scaled(grid);
      for (std::size_t j = 0; j < grid; ++j)
        scaled[j] = prof[j] * static_cast<double>(n);
      return log_sum_exp(scaled);
    }();
    for (std::size_t j = 0; j < grid; ++j)
      w[j] = std::exp(prof[j] * static_cast<double>(n) - lse);
    for (std::size_t j = 0; j < grid; ++j) theta_hat += theta[j] * w[j];
  }

  GpdFit fit;
  fit.n_tail = n;
  if (theta_hat == 0.0) {
    // Exponential boundary; fall back to the k = 0 MLE.
    fit.k_hat = 0.0;
    fit.sigma_hat = mean(x);
  } else {
    double k = 0.0;
    for (double v : x) k += std::log1p(-theta_hat * v);
    k /= static_cast<double>(n);
    fit.k_hat = k;
    fit.sigma_hat = -k / theta_hat;
  }

  if (weak_prior) {
    // Shrink k toward 0.5 with prior weight 10 pseudo-observations.
    const double a = 10.0;
    const double nn = static_cast<double>(n);
    fit.k_hat = fit.k_hat * nn / (nn + a) + a * 0.5 / (nn + a);
  }

  if (!std::isfinite(fit.k_hat) || !std::isfinite(fit.sigma_hat) ||
      fit.sigma_hat <= 0.0)
    throw numeric_error("GPD fit did not converge to finite parameters");
  return fit;
}

}  // namespace lfocv
