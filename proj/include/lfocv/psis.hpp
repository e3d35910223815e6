#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <vector>

#include "lfocv/gpd.hpp"

namespace lfocv {

/// Smoothed log importance weights plus the Pareto shape diagnostic.
/// k_hat carries two sentinels: -inf for the benign all-equal-ratio case
/// (i = i*, nothing to smooth, never refit) and +inf when a tail exists but
/// cannot be fitted (mass concentrated on a handful of draws), which should
/// always trigger a refit.
struct PsisResult {
  std::vector<double> log_weights;  ///< length S, unnormalized
  double k_hat = 0.0;
  std::size_t n_tail = 0;
  bool degenerate = false;  ///< all-equal case; no fit attempted

  std::size_t size() const { return log_weights.size(); }
};

/// Log-span below which a tail is considered degenerate (all-equal ratios,
/// e.g. the i = i* case where every ratio is 1).
inline constexpr double kDegenerateLogSpan = 1e-12;

/// Pareto-smooth a vector of log importance ratios.
///
/// The tail_length(S) largest ratios are replaced by expected order
/// statistics of a generalized Pareto distribution fitted to their excesses
/// over the tail cutpoint, then truncated at the largest raw ratio. Ratios
/// below the cutpoint pass through unchanged. All arithmetic happens on
/// ratios shifted by the sample maximum in log space, so the exponentiation
/// cannot overflow.
///
/// When `debug` is non-null one JSON line {S, n_tail, k_hat, cutpoint} is
/// appended per call.
inline PsisResult pareto_smooth(std::span<const double> log_ratios,
                                std::ostream* debug = nullptr) {
  const std::size_t n = log_ratios.size();
  const std::size_t n_tail = tail_length(n);  // also enforces n >= 25
  for (double v : log_ratios)
    if (!std::isfinite(v)) throw numeric_error("non-finite log importance ratio");

  PsisResult res;
  res.log_weights.assign(log_ratios.begin(), log_ratios.end());
  res.n_tail = n_tail;

  // Ranks of the n_tail largest ratios, ascending within the tail.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return log_ratios[a] < log_ratios[b];
  });

  const double log_max = log_ratios[order.back()];
  const double log_tail_min = log_ratios[order[n - n_tail]];
  if (log_max - log_tail_min < kDegenerateLogSpan) {
    res.degenerate = true;
    res.k_hat = -std::numeric_limits<double>::infinity();
    if (debug)
      *debug << "{\"S\":" << n << ",\"n_tail\":" << n_tail
             << ",\"k_hat\":null,\"cutpoint\":null}\n";
    return res;
  }

  // Cutpoint = largest ratio not in the tail. Work on the e^(lr - log_max)
  // scale; the GPD shape is scale-invariant and sigma maps back trivially.
  const double log_cut = log_ratios[order[n - n_tail - 1]];
  const double cut = std::exp(log_cut - log_max);

  std::vector<double> excess;
  excess.reserve(n_tail);
  std::vector<std::size_t> tail_ids;
  tail_ids.reserve(n_tail);
  for (std::size_t r = n - n_tail; r < n; ++r) {
    const double e = std::exp(log_ratios[order[r]] - log_max) - cut;
    if (e > 0.0) {
      excess.push_back(e);
      tail_ids.push_back(order[r]);
    }
  }
  // The weight mass can concentrate so strongly on a few draws that the
  // remaining tail underflows or collapses onto the cutpoint. That is the
  // diagnostic's worst case, not an error: report k = +inf, leave the
  // ratios unsmoothed, and let the caller refit.
  const auto unfittable = [&] {
    res.k_hat = std::numeric_limits<double>::infinity();
    if (debug)
      *debug << "{\"S\":" << n << ",\"n_tail\":" << excess.size()
             << ",\"k_hat\":\"inf\",\"cutpoint\":" << log_cut << "}\n";
    return res;
  };
  if (excess.size() < kMinTail) return unfittable();

  GpdFit fit;
  try {
    fit = fit_generalized_pareto(excess);
  } catch (const error&) {
    return unfittable();
  }
  res.k_hat = fit.k_hat;
  res.n_tail = excess.size();

  // Replace tail ratios by expected order statistics of the fitted GPD,
  // truncated at the raw maximum (log 1 on the shifted scale = log_max).
  const double m = static_cast<double>(excess.size());
  for (std::size_t z = 0; z < excess.size(); ++z) {
    const double p = (static_cast<double>(z) + 0.5) / m;
    const double q = cut + gpd_quantile(p, fit.k_hat, fit.sigma_hat);
    const double lw = std::min(std::log(q) + log_max, log_max);
    res.log_weights[tail_ids[z]] = lw;
  }

  if (debug)
    *debug << "{\"S\":" << n << ",\"n_tail\":" << res.n_tail
           << ",\"k_hat\":" << res.k_hat << ",\"cutpoint\":" << log_cut << "}\n";
  return res;
}

}  // namespace lfocv
