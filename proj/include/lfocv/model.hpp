#pragma once

#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lfocv/common.hpp"
#include "lfocv/time_series.hpp"

namespace lfocv {

/// MCMC settings shared by every model fit.
struct SamplerConfig {
  int chains = 4;
  int warmup = 1000;
  int draws = 1000;  ///< total kept draws across chains, after thinning
  int thin = 4;
  double accept_min = 0.1;  ///< post-warmup acceptance window
  double accept_max = 0.6;

  void validate() const {
    if (chains < 1) throw config_error("sampler: chains must be >= 1");
    if (warmup < 0) throw config_error("sampler: warmup must be >= 0");
    if (draws < 25) throw config_error("sampler: need at least 25 kept draws");
    if (thin < 1) throw config_error("sampler: thin must be >= 1");
    if (!(accept_min >= 0.0 && accept_min < accept_max && accept_max <= 1.0))
      throw config_error("sampler: invalid acceptance window");
  }
};

struct SamplerDiagnostics {
  double acceptance_rate = 0.0;  ///< post-warmup, pooled over chains
  int chains = 0;
  std::uint64_t seed = 0;
  int warmup = 0;
};

/// Fit failure carrying the sampler diagnostics that triggered it.
struct fit_failure : error {
  fit_failure(const std::string& what, SamplerDiagnostics diag_)
      : error(what), diag(diag_) {}
  SamplerDiagnostics diag;
};

/// S posterior draws targeting p(theta | y_{1:i*}), stored row-major.
/// fitted_prefix_len records i*; 0 means the draws come from the prior.
class PosteriorDraws {
 public:
  PosteriorDraws(std::vector<double> values, std::size_t n_draws, std::size_t dim,
                 std::size_t fitted_prefix_len, SamplerDiagnostics diag)
      : values_(std::move(values)),
        n_draws_(n_draws),
        dim_(dim),
        fitted_prefix_len_(fitted_prefix_len),
        diag_(diag) {
    if (n_draws_ < 25) throw config_error("need at least 25 posterior draws");
    if (values_.size() != n_draws_ * dim_)
      throw config_error("draw matrix size mismatch");
    for (double v : values_)
      if (!std::isfinite(v)) throw numeric_error("non-finite posterior draw");
  }

  std::size_t size() const { return n_draws_; }
  std::size_t dim() const { return dim_; }
  std::size_t fitted_prefix_len() const { return fitted_prefix_len_; }
  const SamplerDiagnostics& diagnostics() const { return diag_; }

  std::span<const double> draw(std::size_t s) const {
    return {values_.data() + s * dim_, dim_};
  }

  bool operator==(const PosteriorDraws& other) const {
    return n_draws_ == other.n_draws_ && dim_ == other.dim_ &&
           fitted_prefix_len_ == other.fitted_prefix_len_ &&
           values_ == other.values_;
  }

 private:
  std::vector<double> values_;
  std::size_t n_draws_;
  std::size_t dim_;
  std::size_t fitted_prefix_len_;
  SamplerDiagnostics diag_;
};

/// Behavioral contract a Bayesian time-series model must satisfy to be
/// cross-validated by the engine. The likelihood must factorize over
/// observations given the past: the model exposes log p(y_j | y_{1:j-1}, theta)
/// one j at a time, with j counted 1-based.
template <typename M>
concept TimeSeriesModel =
    requires(const M& m, const TimeSeries& data, std::span<const double> theta,
             std::size_t idx, const SamplerConfig& cfg, std::uint64_t seed,
             Rng& rng) {
      { m.fit_prefix(data, idx, cfg, seed) } -> std::same_as<PosteriorDraws>;
      { m.conditional_log_lik(theta, data, idx) } -> std::convertible_to<double>;
      {
        m.predictive_sample(theta, data, idx, idx, rng)
      } -> std::same_as<std::vector<double>>;
      { m.describe() } -> std::convertible_to<std::string>;
    };

/// Joint log likelihood of the first `n` observations, by the chain rule.
template <TimeSeriesModel M>
double joint_log_lik(const M& model, std::span<const double> theta,
                     const TimeSeries& data, std::size_t n) {
  double acc = 0.0;
  for (std::size_t j = 1; j <= n; ++j)
    acc += model.conditional_log_lik(theta, data, j);
  return acc;
}

}  // namespace lfocv
