#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lfocv {

inline constexpr const char* kVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Base class for all library errors.
struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Invalid configuration, precondition, or input schema. CLI exit code 2.
struct config_error : error {
  using error::error;
};

/// A value outside the mathematical domain of an operation.
struct domain_error : error {
  using error::error;
};

/// A non-finite value appeared where a finite one is required.
struct numeric_error : error {
  using error::error;
};

// ---------------------------------------------------------------------------
// Seed derivation
// ---------------------------------------------------------------------------

/// splitmix64 finalizer; used to derive independent child seeds.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Derive a child seed from (master, stream, index). Distinct (stream, index)
/// pairs give statistically independent streams, so per-index fits are
/// reproducible no matter which mode or order requested them.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream,
                                    std::uint64_t index = 0) {
  return mix64(mix64(master ^ mix64(stream)) ^ mix64(index));
}

// Stream tags used by the engine and the simulation lab.
inline constexpr std::uint64_t kStreamFit = 0x66697421ULL;        // "fit!"
inline constexpr std::uint64_t kStreamPredict = 0x70726564ULL;    // "pred"
inline constexpr std::uint64_t kStreamGenerate = 0x67656e21ULL;   // "gen!"
inline constexpr std::uint64_t kStreamChain = 0x6368616eULL;      // "chan"

// ---------------------------------------------------------------------------
// Rng
// ---------------------------------------------------------------------------

/// Random number generator with explicit, portable draw logic. The normal
/// variate uses Box-Muller so the stream does not depend on the standard
/// library's unspecified std::normal_distribution algorithm.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t bits() { return engine_(); }

  /// Uniform on [0, 1) with 53-bit resolution.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  /// Uniform on (0, 1); never returns exactly 0.
  double uniform_pos() {
    double u;
    do {
      u = uniform();
    } while (u <= 0.0);
    return u;
  }

  /// Standard normal draw (Box-Muller, pairs cached).
  double normal() {
    if (has_cache_) {
      has_cache_ = false;
      return cache_;
    }
    const double u1 = uniform_pos();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * M_PI * u2;
    cache_ = radius * std::sin(angle);
    has_cache_ = true;
    return radius * std::cos(angle);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

 private:
  std::mt19937_64 engine_;
  double cache_ = 0.0;
  bool has_cache_ = false;
};

// ---------------------------------------------------------------------------
// Numerics
// ---------------------------------------------------------------------------

/// log(sum(exp(x))) with the usual max shift. Empty input -> -inf.
inline double log_sum_exp(std::span<const double> x) {
  if (x.empty()) return -std::numeric_limits<double>::infinity();
  const double m = *std::max_element(x.begin(), x.end());
  if (!std::isfinite(m)) return m;  // all -inf, or a stray inf/nan propagates
  double acc = 0.0;
  for (double v : x) acc += std::exp(v - m);
  return m + std::log(acc);
}

inline double log_mean_exp(std::span<const double> x) {
  return log_sum_exp(x) - std::log(static_cast<double>(x.size()));
}

inline double mean(std::span<const double> x) {
  if (x.empty()) return std::numeric_limits<double>::quiet_NaN();
  double acc = 0.0;
  for (double v : x) acc += v;
  return acc / static_cast<double>(x.size());
}

/// Sample standard deviation (n-1 denominator).
inline double sample_sd(std::span<const double> x) {
  const std::size_t n = x.size();
  if (n < 2) return std::numeric_limits<double>::quiet_NaN();
  const double m = mean(x);
  double acc = 0.0;
  for (double v : x) acc += (v - m) * (v - m);
  return std::sqrt(acc / static_cast<double>(n - 1));
}

/// Linear-interpolation quantile (R type 7). p in [0, 1].
inline double quantile(std::vector<double> x, double p) {
  if (x.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(x.begin(), x.end());
  const double h = p * static_cast<double>(x.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, x.size() - 1);
  return x[lo] + (h - static_cast<double>(lo)) * (x[hi] - x[lo]);
}

inline double log_normal_pdf(double x, double mu, double sd) {
  static const double kLogSqrt2Pi = 0.5 * std::log(2.0 * M_PI);
  const double z = (x - mu) / sd;
  return -kLogSqrt2Pi - std::log(sd) - 0.5 * z * z;
}

// ---------------------------------------------------------------------------
// FNV-1a content digest (manifest bookkeeping, not cryptographic)
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a64(std::span<const char> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace lfocv
