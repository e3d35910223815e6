#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "lfocv/common.hpp"
#include "lfocv/model.hpp"
#include "lfocv/psis.hpp"
#include "lfocv/time_series.hpp"

namespace lfocv {

enum class LfoMode { forward, backward, exact };
enum class Measure { elpd, rmse };

inline std::string to_string(LfoMode m) {
  switch (m) {
    case LfoMode::forward: return "forward";
    case LfoMode::backward: return "backward";
    case LfoMode::exact: return "exact";
  }
  return "?";
}

inline std::string to_string(Measure m) {
  return m == Measure::elpd ? "elpd" : "rmse";
}

inline LfoMode lfo_mode_from_string(const std::string& s) {
  if (s == "forward") return LfoMode::forward;
  if (s == "backward") return LfoMode::backward;
  if (s == "exact") return LfoMode::exact;
  throw config_error("unknown mode '" + s + "' (forward|backward|exact)");
}

inline Measure measure_from_string(const std::string& s) {
  if (s == "elpd") return Measure::elpd;
  if (s == "rmse") return Measure::rmse;
  throw config_error("unknown measure '" + s + "' (elpd|rmse)");
}

/// Settings of one cross-validation run. `tau = 0` forces a refit at every
/// step, which reproduces exact LFO-CV step by step.
struct LfoConfig {
  std::size_t horizon = 1;      ///< M, number of steps predicted jointly
  std::size_t min_history = 25; ///< L, least history before any prediction
  double tau = 0.7;             ///< Pareto-k refit threshold
  LfoMode mode = LfoMode::forward;
  Measure measure = Measure::elpd;

  void validate(std::size_t n_obs) const {
    if (horizon < 1) throw config_error("M must be >= 1");
    if (!(tau >= 0.0 && tau <= 1.0)) throw config_error("tau must lie in [0, 1]");
    if (min_history + horizon > n_obs)
      throw config_error("empty evaluation set: need L + M <= N (L=" +
                         std::to_string(min_history) + ", M=" +
                         std::to_string(horizon) + ", N=" +
                         std::to_string(n_obs) + ")");
  }
};

/// One evaluated prediction index. `i` is the history length: the model saw
/// observations 1..i and the value scores observations i+1..i+M.
struct LfoPoint {
  std::size_t i = 0;
  double value = 0.0;
  std::optional<double> k{};  ///< absent at refit points
  bool refit = false;
};

struct LfoResult {
  LfoMode mode = LfoMode::forward;
  Measure measure = Measure::elpd;
  std::size_t horizon = 1;
  std::size_t min_history = 0;
  double tau = 0.7;
  double total = 0.0;
  std::optional<double> se{};
  std::vector<std::size_t> refit_indices;  ///< every fitted prefix, ascending
  double refit_proportion = 0.0;
  std::vector<LfoPoint> pointwise;

  std::vector<double> pointwise_values() const {
    std::vector<double> v;
    v.reserve(pointwise.size());
    for (const auto& p : pointwise) v.push_back(p.value);
    return v;
  }
};

/// Aborted run: the underlying failure plus everything computed so far.
struct lfo_abort : fit_failure {
  lfo_abort(const fit_failure& cause, LfoResult partial_)
      : fit_failure(cause), partial(std::move(partial_)) {}
  LfoResult partial;
};

// ---------------------------------------------------------------------------
// Pointwise estimators
// ---------------------------------------------------------------------------

namespace detail {

template <TimeSeriesModel M>
double checked_cll(const M& model, std::span<const double> theta,
                   const TimeSeries& data, std::size_t j, std::size_t i,
                   std::size_t s) {
  const double v = model.conditional_log_lik(theta, data, j);
  if (!std::isfinite(v))
    throw numeric_error("non-finite log predictive factor at i=" +
                        std::to_string(i) + ", j=" + std::to_string(j) +
                        ", draw=" + std::to_string(s));
  return v;
}

// Per-draw sums of log p(y_j | y_{1:j-1}, theta) over j = i+1 .. i+M.
template <TimeSeriesModel M>
std::vector<double> horizon_log_liks(const M& model, const PosteriorDraws& draws,
                                     const TimeSeries& data, std::size_t i,
                                     std::size_t horizon) {
  std::vector<double> sums(draws.size(), 0.0);
  for (std::size_t s = 0; s < draws.size(); ++s) {
    const auto theta = draws.draw(s);
    for (std::size_t j = i + 1; j <= i + horizon; ++j)
      sums[s] += checked_cll(model, theta, data, j, i, s);
  }
  return sums;
}

}  // namespace detail

/// Monte-Carlo M-step-ahead ELPD term from draws fitted to exactly y_{1:i}:
/// log(1/S sum_s exp(sum_j log p(y_j | ., theta_s))), via log-sum-exp.
template <TimeSeriesModel M>
double msap_elpd_term_exact(const M& model, const PosteriorDraws& draws,
                            const TimeSeries& data, std::size_t i,
                            std::size_t horizon) {
  const auto sums = detail::horizon_log_liks(model, draws, data, i, horizon);
  return log_mean_exp(sums);
}

/// Importance-weighted M-step-ahead ELPD term, self-normalized:
/// log( sum_s w_s exp(ll_s) / sum_s w_s ), all in log space.
template <TimeSeriesModel M>
double msap_elpd_term_psis(const M& model, const PosteriorDraws& draws,
                           const TimeSeries& data, std::size_t i,
                           std::size_t horizon, const PsisResult& psis) {
  if (psis.size() != draws.size())
    throw config_error("PSIS weight count does not match draw count");
  const auto sums = detail::horizon_log_liks(model, draws, data, i, horizon);
  std::vector<double> weighted(sums.size());
  for (std::size_t s = 0; s < sums.size(); ++s)
    weighted[s] = psis.log_weights[s] + sums[s];
  return log_sum_exp(weighted) - log_sum_exp(psis.log_weights);
}

/// Log importance ratios for moving forward from a fit at i* to index i > i*:
/// per draw, sum_{j = i*+1 .. i} log p(y_j | y_{1:j-1}, theta).
template <TimeSeriesModel M>
std::vector<double> forward_log_ratios(const M& model, const PosteriorDraws& draws,
                                       const TimeSeries& data, std::size_t i) {
  const std::size_t i_star = draws.fitted_prefix_len();
  if (i <= i_star)
    throw config_error("forward_log_ratios requires i > fitted prefix " +
                       std::to_string(i_star));
  std::vector<double> lr(draws.size(), 0.0);
  for (std::size_t s = 0; s < draws.size(); ++s) {
    const auto theta = draws.draw(s);
    for (std::size_t j = i_star + 1; j <= i; ++j)
      lr[s] += detail::checked_cll(model, theta, data, j, i, s);
  }
  return lr;
}

/// Log importance ratios for moving backward from a fit at i* to i < i*:
/// per draw, -sum_{j = i+1 .. i*} log p(y_j | y_{1:j-1}, theta).
template <TimeSeriesModel M>
std::vector<double> backward_log_ratios(const M& model,
                                        const PosteriorDraws& draws,
                                        const TimeSeries& data, std::size_t i) {
  const std::size_t i_star = draws.fitted_prefix_len();
  if (i >= i_star)
    throw config_error("backward_log_ratios requires i < fitted prefix " +
                       std::to_string(i_star));
  std::vector<double> lr(draws.size(), 0.0);
  for (std::size_t s = 0; s < draws.size(); ++s) {
    const auto theta = draws.draw(s);
    for (std::size_t j = i + 1; j <= i_star; ++j)
      lr[s] -= detail::checked_cll(model, theta, data, j, i, s);
  }
  return lr;
}

/// Squared-error accuracy of S predictive paths against the observed window,
/// optionally importance weighted; summed over the M response positions.
/// Despite the conventional name there is no square root in this measure.
inline double rmse_term(const std::vector<std::vector<double>>& predictions,
                        std::span<const double> y_obs,
                        std::span<const double> weights = {}) {
  const std::size_t n_draws = predictions.size();
  if (n_draws == 0) throw config_error("rmse_term: no predictions");
  const std::size_t horizon = y_obs.size();
  if (!weights.empty() && weights.size() != n_draws)
    throw config_error("rmse_term: weight count does not match draw count");
  double weight_sum = 0.0;
  if (weights.empty())
    weight_sum = static_cast<double>(n_draws);
  else
    for (double w : weights) weight_sum += w;
  double total = 0.0;
  for (std::size_t s = 0; s < n_draws; ++s) {
    if (predictions[s].size() != horizon)
      throw config_error("rmse_term: prediction path length mismatch");
    const double w = weights.empty() ? 1.0 : weights[s];
    for (std::size_t m = 0; m < horizon; ++m) {
      const double d = predictions[s][m] - y_obs[m];
      if (!std::isfinite(d)) throw numeric_error("rmse_term: non-finite prediction");
      total += w * d * d;
    }
  }
  return total / weight_sum;
}

/// Standard error of the summed pointwise contributions. For M > 1 only every
/// Mth point (starting at the first evaluation index) is treated as
/// independent; the subsequence SE is rescaled by the count ratio.
inline std::optional<double> elpd_standard_error(std::span<const double> pointwise,
                                                 std::size_t horizon) {
  std::vector<double> sub;
  for (std::size_t idx = 0; idx < pointwise.size(); idx += horizon)
    sub.push_back(pointwise[idx]);
  if (sub.size() < 2) return std::nullopt;
  const double se_sub =
      sample_sd(sub) * std::sqrt(static_cast<double>(sub.size()));
  return se_sub * static_cast<double>(pointwise.size()) /
         static_cast<double>(sub.size());
}

// ---------------------------------------------------------------------------
// Engine
// ---------------------------------------------------------------------------

namespace detail {

template <TimeSeriesModel M>
class LfoEngine {
 public:
  LfoEngine(const M& model, const TimeSeries& data, const LfoConfig& cfg,
            const SamplerConfig& sampler, std::uint64_t seed)
      : model_(model), data_(data), cfg_(cfg), sampler_(sampler), seed_(seed) {
    cfg_.validate(data_.size());
    result_.mode = cfg.mode;
    result_.measure = cfg.measure;
    result_.horizon = cfg.horizon;
    result_.min_history = cfg.min_history;
    result_.tau = cfg.tau;
  }

  LfoResult run() {
    switch (cfg_.mode) {
      case LfoMode::forward: run_forward(); break;
      case LfoMode::backward: run_backward(); break;
      case LfoMode::exact: run_exact(); break;
    }
    finalize();
    return std::move(result_);
  }

 private:
  // One model fit with the retry-once-with-doubled-warmup policy. On the
  // second failure everything computed so far rides along in the error.
  PosteriorDraws fit_at(std::size_t i) {
    const std::uint64_t child = derive_seed(seed_, kStreamFit, i);
    try {
      return model_.fit_prefix(data_, i, sampler_, child);
    } catch (const fit_failure& first) {
      SamplerConfig retry = sampler_;
      retry.warmup *= 2;
      try {
        return model_.fit_prefix(data_, i, retry, child);
      } catch (const fit_failure& second) {
        finalize();
        throw lfo_abort(second, std::move(result_));
      }
    }
  }

  double value_exact(const PosteriorDraws& draws, std::size_t i) {
    if (cfg_.measure == Measure::elpd)
      return msap_elpd_term_exact(model_, draws, data_, i, cfg_.horizon);
    return value_rmse(draws, i, {});
  }

  double value_weighted(const PosteriorDraws& draws, std::size_t i,
                        const PsisResult& psis) {
    if (cfg_.measure == Measure::elpd)
      return msap_elpd_term_psis(model_, draws, data_, i, cfg_.horizon, psis);
    std::vector<double> w(psis.size());
    const double m = *std::max_element(psis.log_weights.begin(),
                                       psis.log_weights.end());
    for (std::size_t s = 0; s < w.size(); ++s)
      w[s] = std::exp(psis.log_weights[s] - m);
    return value_rmse(draws, i, w);
  }

  double value_rmse(const PosteriorDraws& draws, std::size_t i,
                    std::span<const double> weights) {
    Rng rng(derive_seed(seed_, kStreamPredict, i));
    std::vector<std::vector<double>> paths;
    paths.reserve(draws.size());
    for (std::size_t s = 0; s < draws.size(); ++s)
      paths.push_back(
          model_.predictive_sample(draws.draw(s), data_, i, cfg_.horizon, rng));
    const std::span<const double> window(data_.y().data() + i, cfg_.horizon);
    return rmse_term(paths, window, weights);
  }

  void record(std::size_t i, double value, std::optional<double> k, bool refit) {
    result_.pointwise.push_back(LfoPoint{i, value, k, refit});
    if (refit) result_.refit_indices.push_back(i);
  }

  bool check_refit(double k_hat) {
    ++n_checks_;
    const bool refit = cfg_.tau <= 0.0 || k_hat > cfg_.tau;
    if (refit) ++n_triggered_;
    return refit;
  }

  void add_factor(std::vector<double>& lr, const PosteriorDraws& draws,
                  std::size_t j, double sign) {
    for (std::size_t s = 0; s < draws.size(); ++s)
      lr[s] += sign * checked_cll(model_, draws.draw(s), data_, j, j, s);
  }

  void run_forward() {
    const std::size_t last = data_.size() - cfg_.horizon;
    PosteriorDraws draws = fit_at(cfg_.min_history);
    record(cfg_.min_history, value_exact(draws, cfg_.min_history), std::nullopt,
           true);
    std::vector<double> lr(draws.size(), 0.0);
    for (std::size_t i = cfg_.min_history + 1; i <= last; ++i) {
      add_factor(lr, draws, i, +1.0);
      const PsisResult psis = pareto_smooth(lr);
      if (check_refit(psis.k_hat)) {
        draws = fit_at(i);
        std::fill(lr.begin(), lr.end(), 0.0);
        record(i, value_exact(draws, i), std::nullopt, true);
      } else {
        record(i, value_weighted(draws, i, psis), psis.k_hat, false);
      }
    }
  }

  void run_backward() {
    const std::size_t n = data_.size();
    const std::size_t last = n - cfg_.horizon;
    PosteriorDraws draws = fit_at(n);
    result_.refit_indices.push_back(n);  // the initial full-data fit
    std::vector<double> lr(draws.size(), 0.0);
    for (std::size_t j = last + 1; j <= n; ++j) add_factor(lr, draws, j, -1.0);
    for (std::size_t i = last;; --i) {
      const PsisResult psis = pareto_smooth(lr);
      if (check_refit(psis.k_hat)) {
        draws = fit_at(i);
        std::fill(lr.begin(), lr.end(), 0.0);
        record(i, value_exact(draws, i), std::nullopt, true);
      } else {
        record(i, value_weighted(draws, i, psis), psis.k_hat, false);
      }
      if (i == cfg_.min_history) break;
      add_factor(lr, draws, i, -1.0);
    }
  }

  void run_exact() {
    const std::size_t last = data_.size() - cfg_.horizon;
    for (std::size_t i = cfg_.min_history; i <= last; ++i) {
      const PosteriorDraws draws = fit_at(i);
      record(i, value_exact(draws, i), std::nullopt, true);
    }
  }

  void finalize() {
    // Pointwise entries ascending in i regardless of visit order, and the
    // total summed in that one canonical order.
    std::sort(result_.pointwise.begin(), result_.pointwise.end(),
              [](const LfoPoint& a, const LfoPoint& b) { return a.i < b.i; });
    std::sort(result_.refit_indices.begin(), result_.refit_indices.end());
    double total = 0.0;
    std::vector<double> values;
    values.reserve(result_.pointwise.size());
    for (const auto& p : result_.pointwise) {
      total += p.value;
      values.push_back(p.value);
    }
    result_.total = total;
    result_.se = elpd_standard_error(values, cfg_.horizon);
    // Proportion of k-checked steps that triggered a refit. The initial fit
    // (at L forward, at N backward) is unconditional and does not count.
    if (cfg_.mode == LfoMode::exact)
      result_.refit_proportion = 1.0;
    else if (n_checks_ == 0)
      result_.refit_proportion = 0.0;
    else
      result_.refit_proportion = static_cast<double>(n_triggered_) /
                                 static_cast<double>(n_checks_);
  }

  const M& model_;
  const TimeSeries& data_;
  LfoConfig cfg_;
  SamplerConfig sampler_;
  std::uint64_t seed_;
  LfoResult result_;
  std::size_t n_checks_ = 0;
  std::size_t n_triggered_ = 0;
};

}  // namespace detail

/// Forward PSIS-LFO-CV: fit at L, then walk forward, refitting whenever the
/// Pareto-k diagnostic exceeds tau.
template <TimeSeriesModel M>
LfoResult lfo_forward(const M& model, const TimeSeries& data, LfoConfig cfg,
                      const SamplerConfig& sampler, std::uint64_t seed) {
  cfg.mode = LfoMode::forward;
  return detail::LfoEngine<M>(model, data, cfg, sampler, seed).run();
}

/// Backward PSIS-LFO-CV: fit on the full series, then walk i downward from
/// N - M to L, refitting whenever the diagnostic exceeds tau.
template <TimeSeriesModel M>
LfoResult lfo_backward(const M& model, const TimeSeries& data, LfoConfig cfg,
                       const SamplerConfig& sampler, std::uint64_t seed) {
  cfg.mode = LfoMode::backward;
  return detail::LfoEngine<M>(model, data, cfg, sampler, seed).run();
}

/// Exact LFO-CV: refit at every evaluation index.
template <TimeSeriesModel M>
LfoResult lfo_exact(const M& model, const TimeSeries& data, LfoConfig cfg,
                    const SamplerConfig& sampler, std::uint64_t seed) {
  cfg.mode = LfoMode::exact;
  return detail::LfoEngine<M>(model, data, cfg, sampler, seed).run();
}

template <TimeSeriesModel M>
LfoResult run_lfo(const M& model, const TimeSeries& data, const LfoConfig& cfg,
                  const SamplerConfig& sampler, std::uint64_t seed) {
  return detail::LfoEngine<M>(model, data, cfg, sampler, seed).run();
}

// ---------------------------------------------------------------------------
// PSIS-LOO baseline
// ---------------------------------------------------------------------------

struct LooPoint {
  std::size_t j = 0;  ///< observation index, 1-based
  double value = 0.0;
  double k = 0.0;
  bool flagged = false;  ///< k > 0.7; never triggers a refit
};

struct LooResult {
  double total = 0.0;
  std::optional<double> se{};
  std::size_t n_flagged = 0;
  std::vector<LooPoint> pointwise;

  std::vector<double> pointwise_values() const {
    std::vector<double> v;
    v.reserve(pointwise.size());
    for (const auto& p : pointwise) v.push_back(p.value);
    return v;
  }
};

inline constexpr double kLooFlagThreshold = 0.7;

/// PSIS-LOO-CV from a single full-data fit. Each observation's raw log ratio
/// is -log p(y_j | y_{1:j-1}, theta); high-k observations are flagged, never
/// refit. Ignores time ordering by construction, which is what makes it a
/// biased baseline for M-step-ahead evaluation.
template <TimeSeriesModel M>
LooResult psis_loo(const M& model, const TimeSeries& data,
                   const SamplerConfig& sampler, std::uint64_t seed) {
  const std::size_t n = data.size();
  PosteriorDraws draws = [&] {
    const std::uint64_t child = derive_seed(seed, kStreamFit, n);
    try {
      return model.fit_prefix(data, n, sampler, child);
    } catch (const fit_failure&) {
      SamplerConfig retry = sampler;
      retry.warmup *= 2;
      return model.fit_prefix(data, n, retry, child);
    }
  }();

  LooResult res;
  res.pointwise.reserve(n);
  std::vector<double> cll(draws.size());
  std::vector<double> neg(draws.size());
  std::vector<double> weighted(draws.size());
  for (std::size_t j = 1; j <= n; ++j) {
    for (std::size_t s = 0; s < draws.size(); ++s) {
      cll[s] = detail::checked_cll(model, draws.draw(s), data, j, j, s);
      neg[s] = -cll[s];
    }
    const PsisResult psis = pareto_smooth(neg);
    for (std::size_t s = 0; s < draws.size(); ++s)
      weighted[s] = psis.log_weights[s] + cll[s];
    LooPoint pt;
    pt.j = j;
    pt.value = log_sum_exp(weighted) - log_sum_exp(psis.log_weights);
    pt.k = psis.k_hat;
    pt.flagged = psis.k_hat > kLooFlagThreshold;  // +inf (unfittable) counts
    if (pt.flagged) ++res.n_flagged;
    res.total += pt.value;
    res.pointwise.push_back(pt);
  }
  res.se = elpd_standard_error(res.pointwise_values(), 1);
  return res;
}

// ---------------------------------------------------------------------------
// Marginal likelihood via the sequential predictive decomposition
// ---------------------------------------------------------------------------

/// log p(y) = sum_i log p(y_i | y_{1:i-1}), i.e. 1-step-ahead LFO with L = 0;
/// the first term is the prior predictive density of y_1. Runs the exact
/// engine by default, or forward PSIS-LFO-CV when `approximate` is set.
template <TimeSeriesModel M>
double log_marginal_likelihood(const M& model, const TimeSeries& data,
                               const SamplerConfig& sampler, std::uint64_t seed,
                               bool approximate = false, double tau = 0.7) {
  LfoConfig cfg;
  cfg.horizon = 1;
  cfg.min_history = 0;
  cfg.tau = approximate ? tau : 0.0;
  cfg.mode = approximate ? LfoMode::forward : LfoMode::exact;
  cfg.measure = Measure::elpd;
  return run_lfo(model, data, cfg, sampler, seed).total;
}

// ---------------------------------------------------------------------------
// JSON serialization (the reporting contract consumed by simlab and the CLI)
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const LfoResult& r) {
  nlohmann::json pw = nlohmann::json::array();
  for (const auto& p : r.pointwise) {
    nlohmann::json entry{{"i", p.i}, {"value", p.value}, {"refit", p.refit}};
    if (p.k && std::isfinite(*p.k))
      entry["k"] = *p.k;
    else
      entry["k"] = nullptr;
    pw.push_back(std::move(entry));
  }
  nlohmann::json j{{"mode", to_string(r.mode)},
                   {"measure", to_string(r.measure)},
                   {"M", r.horizon},
                   {"L", r.min_history},
                   {"tau", r.tau},
                   {"total", r.total},
                   {"refit_indices", r.refit_indices},
                   {"refit_proportion", r.refit_proportion},
                   {"pointwise", std::move(pw)}};
  if (r.se)
    j["se"] = *r.se;
  else
    j["se"] = nullptr;
  return j;
}

inline nlohmann::json to_json(const LooResult& r) {
  nlohmann::json pw = nlohmann::json::array();
  for (const auto& p : r.pointwise) {
    nlohmann::json entry{{"i", p.j}, {"value", p.value}, {"flagged", p.flagged}};
    if (std::isfinite(p.k))
      entry["k"] = p.k;
    else
      entry["k"] = nullptr;
    pw.push_back(std::move(entry));
  }
  nlohmann::json j{{"measure", "elpd"},
                   {"total", r.total},
                   {"n_flagged", r.n_flagged},
                   {"pointwise", std::move(pw)}};
  if (r.se)
    j["se"] = *r.se;
  else
    j["se"] = nullptr;
  return j;
}

}  // namespace lfocv
