#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lfocv/common.hpp"
#include "lfocv/model.hpp"
#include "lfocv/time_series.hpp"

namespace lfocv {

/// Independent prior scales for the AR-trend model.
struct ArTrendPriors {
  double b_sd = 10.0;      ///< Normal(0, b_sd) on each trend coefficient
  double phi_sd = 1.0;     ///< Normal(0, phi_sd) on each AR coefficient
  double sigma_sd = 10.0;  ///< half-Normal(0, sigma_sd) on the residual SD

  void validate() const {
    if (!(b_sd > 0.0 && phi_sd > 0.0 && sigma_sd > 0.0))
      throw config_error("prior SDs must be positive");
  }
};

/// Gaussian model with polynomial trend on rescaled time and AR(p) residuals:
///   y_j = b0 + b1 t + b2 t^2 + eps_j,  eps_j = sum_k phi_k eps_{j-k} + e_j.
/// Pre-sample residuals are zero, so the likelihood factorizes from j = 1.
struct ArTrendSpec {
  int p = 0;             ///< AR order, >= 0
  int trend_degree = 0;  ///< 0, 1 or 2
  ArTrendPriors priors{};
  std::optional<double> fixed_sigma{};  ///< when set, sigma is not sampled

  int n_trend() const { return trend_degree + 1; }
  bool sigma_free() const { return !fixed_sigma.has_value(); }
  int dim() const { return n_trend() + p + (sigma_free() ? 1 : 0); }

  void validate() const {
    if (p < 0) throw config_error("AR order p must be >= 0");
    if (trend_degree < 0 || trend_degree > 2)
      throw config_error("trend_degree must be 0, 1 or 2");
    priors.validate();
    if (fixed_sigma && !(*fixed_sigma > 0.0))
      throw config_error("fixed_sigma must be positive");
  }
};

/// One draw of the model parameters in natural scale.
struct ArTrendParams {
  Eigen::VectorXd b;
  Eigen::VectorXd phi;
  double sigma = 1.0;
};

/// Affine map of strictly increasing time stamps onto [0, 1].
inline std::vector<double> time_rescale(std::span<const double> t_raw) {
  if (t_raw.size() < 2) throw domain_error("time_rescale needs at least two stamps");
  const double lo = t_raw.front(), hi = t_raw.back();
  if (!(hi > lo)) throw domain_error("time stamps span zero range");
  std::vector<double> out(t_raw.size());
  for (std::size_t i = 0; i < t_raw.size(); ++i)
    out[i] = (t_raw[i] - lo) / (hi - lo);
  return out;
}

namespace detail {

// Scaled time for observation j (1-based) over the full series range.
inline double t_scaled_at(const TimeSeries& data, std::size_t j) {
  const double lo = data.t().front(), hi = data.t().back();
  if (!(hi > lo)) return 0.0;  // single observation
  return (data.t()[j - 1] - lo) / (hi - lo);
}

inline double trend_at(const ArTrendParams& par, double ts) {
  double eta = 0.0, pow_t = 1.0;
  for (Eigen::Index d = 0; d < par.b.size(); ++d) {
    eta += par.b[d] * pow_t;
    pow_t *= ts;
  }
  return eta;
}

// eps_j = y_j - eta_j, defined as 0 for j < 1.
inline double residual_at(const ArTrendParams& par, const TimeSeries& data,
                          std::ptrdiff_t j) {
  if (j < 1) return 0.0;
  return data.y()[static_cast<std::size_t>(j - 1)] -
         trend_at(par, t_scaled_at(data, static_cast<std::size_t>(j)));
}

// Innovation e_j under the zero-initialization convention.
inline double innovation_at(const ArTrendParams& par, const TimeSeries& data,
                            std::size_t j) {
  double e = residual_at(par, data, static_cast<std::ptrdiff_t>(j));
  for (Eigen::Index k = 0; k < par.phi.size(); ++k)
    e -= par.phi[k] *
         residual_at(par, data, static_cast<std::ptrdiff_t>(j) - (k + 1));
  return e;
}

}  // namespace detail

/// Trend residuals eps_{1:N} and innovations e_{1:N} for one parameter draw.
inline std::pair<std::vector<double>, std::vector<double>> residual_recursion(
    const ArTrendParams& params, const TimeSeries& data) {
  const std::size_t n = data.size();
  std::vector<double> eps(n), innov(n);
  for (std::size_t j = 1; j <= n; ++j) {
    eps[j - 1] = detail::residual_at(params, data, static_cast<std::ptrdiff_t>(j));
    double e = eps[j - 1];
    for (Eigen::Index k = 0; k < params.phi.size(); ++k) {
      const std::ptrdiff_t lag = static_cast<std::ptrdiff_t>(j) - (k + 1);
      e -= params.phi[k] * (lag >= 1 ? eps[static_cast<std::size_t>(lag - 1)] : 0.0);
    }
    innov[j - 1] = e;
  }
  return {std::move(eps), std::move(innov)};
}

/// Sum of independent log prior densities. sigma <= 0 lies outside the
/// support and yields -inf rather than an error.
inline double log_prior(const ArTrendParams& params, const ArTrendSpec& spec) {
  double lp = 0.0;
  for (Eigen::Index d = 0; d < params.b.size(); ++d)
    lp += log_normal_pdf(params.b[d], 0.0, spec.priors.b_sd);
  for (Eigen::Index k = 0; k < params.phi.size(); ++k)
    lp += log_normal_pdf(params.phi[k], 0.0, spec.priors.phi_sd);
  if (spec.sigma_free()) {
    if (!(params.sigma > 0.0)) return -std::numeric_limits<double>::infinity();
    lp += std::log(2.0) + log_normal_pdf(params.sigma, 0.0, spec.priors.sigma_sd);
  }
  return lp;
}

namespace detail {

inline ArTrendParams unpack(const ArTrendSpec& spec, std::span<const double> theta) {
  if (theta.size() != static_cast<std::size_t>(spec.dim()))
    throw config_error("parameter draw has wrong dimension for this spec");
  ArTrendParams par;
  par.b.resize(spec.n_trend());
  for (int d = 0; d < spec.n_trend(); ++d) par.b[d] = theta[d];
  par.phi.resize(spec.p);
  for (int k = 0; k < spec.p; ++k) par.phi[k] = theta[spec.n_trend() + k];
  par.sigma = spec.sigma_free() ? std::exp(theta[spec.n_trend() + spec.p])
                                : *spec.fixed_sigma;
  return par;
}

// Design matrix of the trend for observations 1..n.
inline Eigen::MatrixXd trend_design(const ArTrendSpec& spec,
                                    const TimeSeries& data, std::size_t n) {
  Eigen::MatrixXd X(n, spec.n_trend());
  for (std::size_t j = 1; j <= n; ++j) {
    const double ts = t_scaled_at(data, j);
    double pow_t = 1.0;
    for (int d = 0; d < spec.n_trend(); ++d) {
      X(j - 1, d) = pow_t;
      pow_t *= ts;
    }
  }
  return X;
}

// Log posterior density over the unconstrained vector (b, phi, log sigma),
// using the first `prefix` observations. prefix = 0 gives the prior alone.
inline double log_posterior_unconstrained(const ArTrendSpec& spec,
                                          const TimeSeries& data,
                                          std::size_t prefix,
                                          std::span<const double> x) {
  const ArTrendParams par = unpack(spec, x);
  double lp = log_prior(par, spec);
  if (spec.sigma_free()) lp += x[x.size() - 1];  // Jacobian of sigma = exp(x)
  if (!std::isfinite(lp)) return -std::numeric_limits<double>::infinity();
  for (std::size_t j = 1; j <= prefix; ++j)
    lp += log_normal_pdf(innovation_at(par, data, j), 0.0, par.sigma);
  return lp;
}

// Conjugate Gaussian posterior over b for p = 0 with known sigma:
// precision A = X'X / sigma^2 + I / b_sd^2, mean = A^{-1} X'y / sigma^2.
struct ConjugatePosterior {
  Eigen::VectorXd mean;
  Eigen::LLT<Eigen::MatrixXd> chol_precision;
};

inline ConjugatePosterior conjugate_posterior(const ArTrendSpec& spec,
                                              const TimeSeries& data,
                                              std::size_t prefix) {
  const double sigma = *spec.fixed_sigma;
  const int q = spec.n_trend();
  Eigen::MatrixXd precision =
      Eigen::MatrixXd::Identity(q, q) / (spec.priors.b_sd * spec.priors.b_sd);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(q);
  if (prefix > 0) {
    const Eigen::MatrixXd X = trend_design(spec, data, prefix);
    const Eigen::Map<const Eigen::VectorXd> y(data.y().data(),
                                              static_cast<Eigen::Index>(prefix));
    precision += X.transpose() * X / (sigma * sigma);
    rhs = X.transpose() * y / (sigma * sigma);
  }
  ConjugatePosterior post;
  post.chol_precision.compute(precision);
  post.mean = post.chol_precision.solve(rhs);
  return post;
}

}  // namespace detail

/// Exact log marginal likelihood log p(y_{1:N}) for the trend-only model with
/// known sigma, from Gaussian linear-model marginalization:
///   y ~ N(0, sigma^2 I + b_sd^2 X X').
inline double conjugate_log_marginal(const ArTrendSpec& spec,
                                     const TimeSeries& data) {
  spec.validate();
  if (spec.p != 0 || spec.sigma_free())
    throw config_error(
        "conjugate_log_marginal requires p = 0 and a fixed sigma");
  const std::size_t n = data.size();
  const double sigma = *spec.fixed_sigma;
  const Eigen::MatrixXd X = detail::trend_design(spec, data, n);
  Eigen::MatrixXd cov = (spec.priors.b_sd * spec.priors.b_sd) * X * X.transpose();
  cov.diagonal().array() += sigma * sigma;
  const Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success)
    throw numeric_error("marginal covariance is not positive definite");
  const Eigen::Map<const Eigen::VectorXd> y(data.y().data(),
                                            static_cast<Eigen::Index>(n));
  const Eigen::VectorXd alpha = llt.solve(y);
  double log_det = 0.0;
  for (Eigen::Index i = 0; i < llt.matrixL().rows(); ++i)
    log_det += 2.0 * std::log(llt.matrixL()(i, i));
  return -0.5 * (static_cast<double>(n) * std::log(2.0 * M_PI) + log_det +
                 y.dot(alpha));
}

/// Draws from the prior by direct simulation; the i* = 0 case of fitting.
inline PosteriorDraws prior_sample(const ArTrendSpec& spec,
                                   const SamplerConfig& cfg, std::uint64_t seed) {
  spec.validate();
  cfg.validate();
  const int dim = spec.dim();
  Rng rng(derive_seed(seed, kStreamChain, 0));
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(cfg.draws) * dim);
  for (int s = 0; s < cfg.draws; ++s) {
    for (int d = 0; d < spec.n_trend(); ++d)
      values.push_back(rng.normal(0.0, spec.priors.b_sd));
    for (int k = 0; k < spec.p; ++k)
      values.push_back(rng.normal(0.0, spec.priors.phi_sd));
    if (spec.sigma_free())
      values.push_back(std::log(std::abs(rng.normal(0.0, spec.priors.sigma_sd))));
  }
  SamplerDiagnostics diag;
  diag.chains = 0;
  diag.seed = seed;
  diag.acceptance_rate = 1.0;
  return PosteriorDraws(std::move(values), cfg.draws, dim, 0, diag);
}

/// Exact draws from the closed-form Gaussian posterior over b, available for
/// the trend-only model with known sigma.
inline PosteriorDraws conjugate_fit(const ArTrendSpec& spec,
                                    const TimeSeries& data, std::size_t prefix,
                                    const SamplerConfig& cfg,
                                    std::uint64_t seed) {
  spec.validate();
  cfg.validate();
  if (spec.p != 0 || spec.sigma_free())
    throw config_error("conjugate_fit requires p = 0 and a fixed sigma");
  if (prefix > data.size()) throw config_error("fit prefix exceeds data length");
  if (prefix == 0) return prior_sample(spec, cfg, seed);
  const int dim = spec.dim();
  const detail::ConjugatePosterior post =
      detail::conjugate_posterior(spec, data, prefix);
  const Eigen::MatrixXd lower = post.chol_precision.matrixL();
  Rng rng(derive_seed(seed, kStreamChain, 0));
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(cfg.draws) * dim);
  Eigen::VectorXd z(dim);
  for (int s = 0; s < cfg.draws; ++s) {
    for (int d = 0; d < dim; ++d) z[d] = rng.normal();
    // b = mean + L^{-T} z has covariance A^{-1}.
    const Eigen::VectorXd b =
        post.mean + lower.transpose().triangularView<Eigen::Upper>().solve(z);
    for (int d = 0; d < dim; ++d) values.push_back(b[d]);
  }
  SamplerDiagnostics diag;
  diag.chains = 0;
  diag.seed = seed;
  diag.acceptance_rate = 1.0;
  return PosteriorDraws(std::move(values), cfg.draws, dim, prefix, diag);
}

/// Posterior sampling for the AR-trend model via adaptive random-walk
/// Metropolis on (b, phi, log sigma). The proposal covariance adapts during
/// warmup only; kept draws are thinned to the configured total. Throws
/// fit_failure when the pooled post-warmup acceptance rate leaves the
/// configured window. prefix = 0 falls back to direct prior sampling.
inline PosteriorDraws metropolis_fit(const ArTrendSpec& spec,
                                     const TimeSeries& data, std::size_t prefix,
                                     const SamplerConfig& cfg,
                                     std::uint64_t seed) {
  spec.validate();
  cfg.validate();
  if (prefix > data.size()) throw config_error("fit prefix exceeds data length");
  if (prefix == 0) return prior_sample(spec, cfg, seed);
  const int dim = spec.dim();

  SamplerDiagnostics diag;
  diag.chains = cfg.chains;
  diag.seed = seed;
  diag.warmup = cfg.warmup;

  // Shared starting point: least-squares trend coefficients and the residual
  // scale. Starting from b = 0 can drop trending data into the competing
  // near-unit-root AR mode, which a random-walk chain never leaves.
  Eigen::VectorXd x0 = Eigen::VectorXd::Zero(dim);
  {
    const Eigen::MatrixXd x_mat = detail::trend_design(spec, data, prefix);
    const Eigen::Map<const Eigen::VectorXd> y(data.y().data(),
                                              static_cast<Eigen::Index>(prefix));
    Eigen::MatrixXd gram = x_mat.transpose() * x_mat;
    gram.diagonal().array() += 1e-8;
    const Eigen::VectorXd b_ls = gram.llt().solve(x_mat.transpose() * y);
    for (int d = 0; d < spec.n_trend(); ++d) x0[d] = b_ls[d];
    if (spec.sigma_free()) {
      const Eigen::VectorXd resid = y - x_mat * b_ls;
      const double sd =
          prefix > 1 ? std::sqrt(resid.squaredNorm() /
                                 static_cast<double>(prefix - 1))
                     : 1.0;
      x0[dim - 1] = std::log(std::clamp(sd, 0.05, 1e6));
    }
  }
  {
    const double lp0 = detail::log_posterior_unconstrained(
        spec, data, prefix, {x0.data(), static_cast<std::size_t>(dim)});
    if (!std::isfinite(lp0))
      throw numeric_error("non-finite posterior density at initialization");
  }

  const int kept_per_chain = (cfg.draws + cfg.chains - 1) / cfg.chains;
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(kept_per_chain) * cfg.chains * dim);
  long accepted = 0, proposed = 0;

  constexpr int kWindow = 25;          // scale-tuning window
  constexpr int kCovPeriod = 100;      // proposal-covariance refresh period
  constexpr double kTargetAccept = 0.3;

  for (int chain = 0; chain < cfg.chains; ++chain) {
    Rng rng(derive_seed(seed, kStreamChain, static_cast<std::uint64_t>(chain)));
    Eigen::VectorXd x = x0;
    double lp = detail::log_posterior_unconstrained(
        spec, data, prefix, {x.data(), static_cast<std::size_t>(dim)});

    Eigen::MatrixXd prop_chol = Eigen::MatrixXd::Identity(dim, dim);
    double log_scale = std::log(0.5 / std::sqrt(static_cast<double>(dim)));

    // Running moments for the covariance adaptation. Accumulation starts
    // after the first fifth of warmup so the initialization transient does
    // not inflate the proposal.
    const long accumulate_from = cfg.warmup / 5;
    Eigen::VectorXd run_mean = Eigen::VectorXd::Zero(dim);
    Eigen::MatrixXd run_m2 = Eigen::MatrixXd::Zero(dim, dim);
    long run_n = 0;
    bool chol_adopted = false;
    int window_accepts = 0;

    Eigen::VectorXd z(dim), prop(dim);
    const auto step = [&] {
      for (int d = 0; d < dim; ++d) z[d] = rng.normal();
      prop = x + std::exp(log_scale) * (prop_chol * z);
      const double lp_prop = detail::log_posterior_unconstrained(
          spec, data, prefix, {prop.data(), static_cast<std::size_t>(dim)});
      const bool accept = std::log(rng.uniform_pos()) < lp_prop - lp;
      if (accept) {
        x = prop;
        lp = lp_prop;
      }
      return accept;
    };

    for (long it = 0; it < cfg.warmup; ++it) {
      window_accepts += step() ? 1 : 0;
      // Multiplicative scale tuning on windowed acceptance rates.
      if ((it + 1) % kWindow == 0) {
        const double rate = static_cast<double>(window_accepts) / kWindow;
        log_scale += 0.8 * (rate - kTargetAccept);
        log_scale = std::clamp(log_scale, std::log(1e-6), std::log(20.0));
        window_accepts = 0;
      }
      if (it >= accumulate_from) {
        ++run_n;
        const Eigen::VectorXd delta = x - run_mean;
        run_mean += delta / static_cast<double>(run_n);
        run_m2 += delta * (x - run_mean).transpose();
        if (run_n >= std::max<long>(50, 2 * dim) && run_n % kCovPeriod == 0) {
          Eigen::MatrixXd cov = run_m2 / static_cast<double>(run_n - 1);
          cov.diagonal().array() += 1e-8 * (cov.trace() / dim + 1e-8);
          const Eigen::LLT<Eigen::MatrixXd> llt(cov);
          if (llt.info() == Eigen::Success) {
            prop_chol = llt.matrixL();
            if (!chol_adopted) {
              // Empirical covariance absorbs the magnitudes; restart the
              // scale at the classical optimum.
              log_scale = std::log(2.38 / std::sqrt(static_cast<double>(dim)));
              chol_adopted = true;
            }
          }
        }
      }
    }

    for (int keep = 0; keep < kept_per_chain; ++keep) {
      for (int sub = 0; sub < cfg.thin; ++sub) {
        accepted += step() ? 1 : 0;
        ++proposed;
      }
      for (int d = 0; d < dim; ++d) values.push_back(x[d]);
    }
  }

  diag.acceptance_rate =
      proposed > 0 ? static_cast<double>(accepted) / static_cast<double>(proposed)
                   : 0.0;
  if (diag.acceptance_rate < cfg.accept_min ||
      diag.acceptance_rate > cfg.accept_max)
    throw fit_failure("post-warmup acceptance rate " +
                          std::to_string(diag.acceptance_rate) +
                          " outside [" + std::to_string(cfg.accept_min) + ", " +
                          std::to_string(cfg.accept_max) + "]",
                      diag);

  values.resize(static_cast<std::size_t>(cfg.draws) * dim);  // drop excess
  return PosteriorDraws(std::move(values), cfg.draws, dim, prefix, diag);
}

/// The built-in model, wrapping an ArTrendSpec behind the engine contract.
class ArTrendModel {
 public:
  explicit ArTrendModel(ArTrendSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
  }

  const ArTrendSpec& spec() const { return spec_; }

  /// Exact conjugate sampling where it exists (p = 0, fixed sigma), direct
  /// prior draws at i = 0, adaptive Metropolis otherwise.
  PosteriorDraws fit_prefix(const TimeSeries& data, std::size_t i,
                            const SamplerConfig& cfg, std::uint64_t seed) const {
    if (i == 0) return prior_sample(spec_, cfg, seed);
    if (spec_.p == 0 && !spec_.sigma_free())
      return conjugate_fit(spec_, data, i, cfg, seed);
    return metropolis_fit(spec_, data, i, cfg, seed);
  }

  double conditional_log_lik(std::span<const double> theta,
                             const TimeSeries& data, std::size_t j) const {
    if (j < 1 || j > data.size())
      throw config_error("conditional_log_lik: index out of range");
    const ArTrendParams par = detail::unpack(spec_, theta);
    return log_normal_pdf(detail::innovation_at(par, data, j), 0.0, par.sigma);
  }

  std::vector<double> predictive_sample(std::span<const double> theta,
                                        const TimeSeries& data, std::size_t i,
                                        std::size_t horizon, Rng& rng) const {
    if (i + horizon > data.size())
      throw config_error("predictive_sample: horizon runs past the series");
    const ArTrendParams par = detail::unpack(spec_, theta);
    // Residual history for the AR lags, zero before the first observation.
    std::vector<double> eps_hist(spec_.p, 0.0);
    for (int k = 0; k < spec_.p; ++k)
      eps_hist[k] = detail::residual_at(par, data,
                                        static_cast<std::ptrdiff_t>(i) - k);
    std::vector<double> out;
    out.reserve(horizon);
    for (std::size_t m = 1; m <= horizon; ++m) {
      double eps = par.sigma * rng.normal();
      for (int k = 0; k < spec_.p; ++k) eps += par.phi[k] * eps_hist[k];
      const double eta = detail::trend_at(par, detail::t_scaled_at(data, i + m));
      out.push_back(eta + eps);
      if (spec_.p > 0) {
        for (int k = spec_.p - 1; k > 0; --k) eps_hist[k] = eps_hist[k - 1];
        eps_hist[0] = eps;
      }
    }
    return out;
  }

  std::string describe() const {
    std::string s = "ar-trend(p=" + std::to_string(spec_.p) +
                    ", trend_degree=" + std::to_string(spec_.trend_degree);
    if (!spec_.sigma_free())
      s += ", sigma=" + std::to_string(*spec_.fixed_sigma);
    return s + ")";
  }

  ArTrendParams params_from_draw(std::span<const double> theta) const {
    return detail::unpack(spec_, theta);
  }

 private:
  ArTrendSpec spec_;
};

static_assert(TimeSeriesModel<ArTrendModel>);

}  // namespace lfocv
