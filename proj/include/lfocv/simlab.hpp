#pragma once

#include <array>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "lfocv/ar_trend.hpp"
#include "lfocv/lfo.hpp"
#include "lfocv/time_series.hpp"

namespace lfocv {

// ---------------------------------------------------------------------------
// Data generators
// ---------------------------------------------------------------------------

enum class GenKind {
  constant,
  linear,
  quadratic,
  ar2_only,
  ar2_linear,
  ar2_quadratic
};

inline const std::array<GenKind, 6>& all_gen_kinds() {
  static const std::array<GenKind, 6> kinds{
      GenKind::constant,   GenKind::linear,     GenKind::quadratic,
      GenKind::ar2_only,   GenKind::ar2_linear, GenKind::ar2_quadratic};
  return kinds;
}

inline std::string to_string(GenKind k) {
  switch (k) {
    case GenKind::constant: return "constant";
    case GenKind::linear: return "linear";
    case GenKind::quadratic: return "quadratic";
    case GenKind::ar2_only: return "ar2-only";
    case GenKind::ar2_linear: return "ar2-linear";
    case GenKind::ar2_quadratic: return "ar2-quadratic";
  }
  return "?";
}

inline GenKind gen_kind_from_string(const std::string& s) {
  for (GenKind k : all_gen_kinds())
    if (to_string(k) == s) return k;
  throw config_error("unknown generator kind '" + s + "'");
}

inline bool kind_has_ar(GenKind k) {
  return k == GenKind::ar2_only || k == GenKind::ar2_linear ||
         k == GenKind::ar2_quadratic;
}

inline int kind_trend_degree(GenKind k) {
  switch (k) {
    case GenKind::constant:
    case GenKind::ar2_only: return 0;
    case GenKind::linear:
    case GenKind::ar2_linear: return 1;
    case GenKind::quadratic:
    case GenKind::ar2_quadratic: return 2;
  }
  return 0;
}

/// Generating process for one synthetic series: quadratic trend on rescaled
/// time plus AR(2) residuals with Gaussian innovations.
struct GenSpec {
  GenKind kind = GenKind::constant;
  std::array<double, 3> b{0.0, 0.0, 0.0};
  std::array<double, 2> phi{0.0, 0.0};
  double sigma_innov = 1.0;
  std::size_t n = 100;

  /// Canonical parameter values per kind: b1 = 17 for linear terms,
  /// b2 = 25 for quadratic terms, phi = (0.5, 0.3) for AR(2) kinds.
  static GenSpec canonical(GenKind kind, std::size_t n, double sigma = 1.0) {
    GenSpec g;
    g.kind = kind;
    g.n = n;
    g.sigma_innov = sigma;
    const int deg = kind_trend_degree(kind);
    if (deg >= 1) g.b[1] = 17.0;
    if (deg >= 2) g.b[2] = 25.0;
    if (kind_has_ar(kind)) g.phi = {0.5, 0.3};
    return g;
  }

  void validate() const {
    if (!(sigma_innov > 0.0)) throw config_error("sigma_innov must be positive");
    if (n < 3) throw config_error("series length must be >= 3");
    const int deg = kind_trend_degree(kind);
    if (deg < 1 && b[1] != 0.0)
      throw config_error("kind " + to_string(kind) + " requires b1 = 0");
    if (deg < 2 && b[2] != 0.0)
      throw config_error("kind " + to_string(kind) + " requires b2 = 0");
    const bool ar = kind_has_ar(kind);
    if (!ar && (phi[0] != 0.0 || phi[1] != 0.0))
      throw config_error("kind " + to_string(kind) + " requires phi = 0");
  }
};

/// Simulate y_i = b0 + b1 t + b2 t^2 + eps_i with the AR(2) residual
/// recursion on Gaussian innovations, zero pre-sample residuals, and time
/// stamps 1..N rescaled to [0, 1].
inline TimeSeries generate_series(const GenSpec& gen, std::uint64_t seed) {
  gen.validate();
  Rng rng(seed);
  std::vector<double> t(gen.n), y(gen.n);
  for (std::size_t i = 0; i < gen.n; ++i) t[i] = static_cast<double>(i + 1);
  const std::vector<double> ts = time_rescale(t);
  double eps1 = 0.0, eps2 = 0.0;  // eps_{j-1}, eps_{j-2}
  for (std::size_t i = 0; i < gen.n; ++i) {
    const double eps = gen.phi[0] * eps1 + gen.phi[1] * eps2 +
                       gen.sigma_innov * rng.normal();
    y[i] = gen.b[0] + gen.b[1] * ts[i] + gen.b[2] * ts[i] * ts[i] + eps;
    eps2 = eps1;
    eps1 = eps;
  }
  return TimeSeries(std::move(t), std::move(y));
}

/// The true data-generating family as a fittable model spec.
inline ArTrendSpec model_for_kind(GenKind kind) {
  ArTrendSpec spec;
  spec.p = kind_has_ar(kind) ? 2 : 0;
  spec.trend_degree = kind_trend_degree(kind);
  return spec;
}

// ---------------------------------------------------------------------------
// Experiment matrix
// ---------------------------------------------------------------------------

struct ExperimentMatrix {
  std::vector<GenKind> kinds{all_gen_kinds().begin(), all_gen_kinds().end()};
  std::vector<double> taus{0.5, 0.6, 0.7};
  std::vector<std::size_t> horizons{1, 4};
  std::size_t trials = 20;
  std::size_t n = 100;
  std::size_t min_history = 25;
  double sigma_innov = 1.0;
  bool with_rmse = true;
  SamplerConfig sampler{};

  void validate() const {
    if (kinds.empty() || taus.empty() || horizons.empty())
      throw config_error("matrix: kinds, taus and Ms must be nonempty");
    if (trials < 1) throw config_error("matrix: trials must be >= 1");
    for (double tau : taus)
      if (!(tau >= 0.0 && tau <= 1.0))
        throw config_error("matrix: tau must lie in [0, 1]");
    for (std::size_t m : horizons)
      if (min_history + m > n)
        throw config_error("matrix: need L + M <= N for every M");
    sampler.validate();
  }
};

/// Forward/backward outcomes at one threshold.
struct TauOutcome {
  double tau = 0.7;
  double elpd_fwd = 0.0;
  double elpd_bwd = 0.0;
  double refit_prop_fwd = 0.0;
  double refit_prop_bwd = 0.0;
  std::optional<double> rmse_fwd{};
};

/// Everything measured on one simulated series.
struct TrialRecord {
  GenKind kind = GenKind::constant;
  std::size_t horizon = 1;
  std::size_t trial = 0;
  std::uint64_t seed = 0;  ///< series seed; engine runs derive from it
  bool failed = false;
  std::string error;
  double elpd_exact = 0.0;
  std::optional<double> elpd_loo{};   ///< only for M = 1
  std::optional<double> rmse_exact{};
  std::vector<TauOutcome> per_tau;
};

/// Aggregates for one (kind, M, tau) cell, over non-failed trials.
struct CellStats {
  GenKind kind = GenKind::constant;
  std::size_t horizon = 1;
  double tau = 0.7;
  std::size_t n_trials = 0;
  std::size_t n_failed = 0;
  double mean_diff_fwd = 0.0, sd_diff_fwd = 0.0;
  double q05_diff_fwd = 0.0, q50_diff_fwd = 0.0, q95_diff_fwd = 0.0;
  double mean_diff_bwd = 0.0, sd_diff_bwd = 0.0;
  double mean_refit_fwd = 0.0, mean_refit_bwd = 0.0;
  std::optional<double> mean_diff_loo{};
  std::optional<double> mean_diff_rmse_fwd{};
};

struct ExperimentReport {
  std::uint64_t master_seed = 0;
  ExperimentMatrix matrix;
  std::vector<TrialRecord> records;
  std::vector<CellStats> cells;
};

// ---------------------------------------------------------------------------
// JSON for trial persistence
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const TrialRecord& r) {
  nlohmann::json per_tau = nlohmann::json::array();
  for (const auto& t : r.per_tau) {
    nlohmann::json e{{"tau", t.tau},
                     {"elpd_fwd", t.elpd_fwd},
                     {"elpd_bwd", t.elpd_bwd},
                     {"refit_prop_fwd", t.refit_prop_fwd},
                     {"refit_prop_bwd", t.refit_prop_bwd}};
    e["rmse_fwd"] = t.rmse_fwd ? nlohmann::json(*t.rmse_fwd) : nlohmann::json();
    per_tau.push_back(std::move(e));
  }
  nlohmann::json j{{"kind", to_string(r.kind)},
                   {"M", r.horizon},
                   {"trial", r.trial},
                   {"seed", r.seed},
                   {"failed", r.failed},
                   {"error", r.error},
                   {"elpd_exact", r.elpd_exact},
                   {"per_tau", std::move(per_tau)}};
  j["elpd_loo"] = r.elpd_loo ? nlohmann::json(*r.elpd_loo) : nlohmann::json();
  j["rmse_exact"] =
      r.rmse_exact ? nlohmann::json(*r.rmse_exact) : nlohmann::json();
  return j;
}

inline TrialRecord trial_record_from_json(const nlohmann::json& j) {
  TrialRecord r;
  r.kind = gen_kind_from_string(j.at("kind").get<std::string>());
  r.horizon = j.at("M").get<std::size_t>();
  r.trial = j.at("trial").get<std::size_t>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.failed = j.at("failed").get<bool>();
  r.error = j.at("error").get<std::string>();
  r.elpd_exact = j.at("elpd_exact").get<double>();
  if (!j.at("elpd_loo").is_null()) r.elpd_loo = j.at("elpd_loo").get<double>();
  if (!j.at("rmse_exact").is_null())
    r.rmse_exact = j.at("rmse_exact").get<double>();
  for (const auto& e : j.at("per_tau")) {
    TauOutcome t;
    t.tau = e.at("tau").get<double>();
    t.elpd_fwd = e.at("elpd_fwd").get<double>();
    t.elpd_bwd = e.at("elpd_bwd").get<double>();
    t.refit_prop_fwd = e.at("refit_prop_fwd").get<double>();
    t.refit_prop_bwd = e.at("refit_prop_bwd").get<double>();
    if (!e.at("rmse_fwd").is_null()) t.rmse_fwd = e.at("rmse_fwd").get<double>();
    r.per_tau.push_back(std::move(t));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Runner
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint64_t trial_seed(std::uint64_t master, std::size_t kind_index,
                                std::size_t horizon, std::size_t trial) {
  const std::uint64_t cell =
      mix64(static_cast<std::uint64_t>(kind_index) * 1000003ULL + horizon);
  return derive_seed(derive_seed(master, kStreamGenerate, cell), cell, trial);
}

inline std::string trial_file_name(GenKind kind, std::size_t horizon,
                                   std::size_t trial) {
  std::ostringstream os;
  os << "trial_" << to_string(kind) << "_M" << horizon << "_t" << trial
     << ".json";
  return os.str();
}

}  // namespace detail

/// Measure one simulated trial: exact LFO, forward/backward PSIS-LFO at every
/// threshold, PSIS-LOO for the one-step case, plus squared-error variants.
inline TrialRecord run_trial(const ExperimentMatrix& matrix, GenKind kind,
                             std::size_t kind_index, std::size_t horizon,
                             std::size_t trial, std::uint64_t master_seed) {
  TrialRecord rec;
  rec.kind = kind;
  rec.horizon = horizon;
  rec.trial = trial;
  rec.seed = detail::trial_seed(master_seed, kind_index, horizon, trial);
  try {
    GenSpec gen = GenSpec::canonical(kind, matrix.n, matrix.sigma_innov);
    const TimeSeries data = generate_series(gen, rec.seed);
    const ArTrendModel model(model_for_kind(kind));

    LfoConfig cfg;
    cfg.horizon = horizon;
    cfg.min_history = matrix.min_history;
    cfg.measure = Measure::elpd;

    rec.elpd_exact = lfo_exact(model, data, cfg, matrix.sampler, rec.seed).total;
    if (horizon == 1)
      rec.elpd_loo = psis_loo(model, data, matrix.sampler, rec.seed).total;
    if (matrix.with_rmse) {
      LfoConfig rmse_cfg = cfg;
      rmse_cfg.measure = Measure::rmse;
      rec.rmse_exact =
          lfo_exact(model, data, rmse_cfg, matrix.sampler, rec.seed).total;
    }

    for (double tau : matrix.taus) {
      TauOutcome out;
      out.tau = tau;
      cfg.tau = tau;
      const LfoResult fwd = lfo_forward(model, data, cfg, matrix.sampler, rec.seed);
      const LfoResult bwd = lfo_backward(model, data, cfg, matrix.sampler, rec.seed);
      out.elpd_fwd = fwd.total;
      out.elpd_bwd = bwd.total;
      out.refit_prop_fwd = fwd.refit_proportion;
      out.refit_prop_bwd = bwd.refit_proportion;
      if (matrix.with_rmse) {
        LfoConfig rmse_cfg = cfg;
        rmse_cfg.measure = Measure::rmse;
        out.rmse_fwd =
            lfo_forward(model, data, rmse_cfg, matrix.sampler, rec.seed).total;
      }
      rec.per_tau.push_back(out);
    }
  } catch (const std::exception& ex) {
    rec.failed = true;
    rec.error = ex.what();
    rec.per_tau.clear();
  }
  return rec;
}

/// Aggregate per-cell statistics from the raw records.
inline std::vector<CellStats> aggregate_cells(const ExperimentMatrix& matrix,
                                              const std::vector<TrialRecord>& records) {
  std::vector<CellStats> cells;
  for (GenKind kind : matrix.kinds)
    for (std::size_t horizon : matrix.horizons)
      for (double tau : matrix.taus) {
        CellStats c;
        c.kind = kind;
        c.horizon = horizon;
        c.tau = tau;
        std::vector<double> diff_fwd, diff_bwd, diff_loo, diff_rmse;
        std::vector<double> refit_fwd, refit_bwd;
        for (const auto& r : records) {
          if (r.kind != kind || r.horizon != horizon) continue;
          if (r.failed) {
            ++c.n_failed;
            continue;
          }
          for (const auto& t : r.per_tau) {
            if (t.tau != tau) continue;
            diff_fwd.push_back(t.elpd_fwd - r.elpd_exact);
            diff_bwd.push_back(t.elpd_bwd - r.elpd_exact);
            refit_fwd.push_back(t.refit_prop_fwd);
            refit_bwd.push_back(t.refit_prop_bwd);
            if (r.elpd_loo) diff_loo.push_back(*r.elpd_loo - r.elpd_exact);
            if (t.rmse_fwd && r.rmse_exact)
              diff_rmse.push_back(*t.rmse_fwd - *r.rmse_exact);
          }
        }
        c.n_trials = diff_fwd.size();
        if (c.n_trials == 0 && c.n_failed == 0) continue;  // cell not in matrix
        if (!diff_fwd.empty()) {
          c.mean_diff_fwd = mean(diff_fwd);
          c.sd_diff_fwd = sample_sd(diff_fwd);
          c.q05_diff_fwd = quantile(diff_fwd, 0.05);
          c.q50_diff_fwd = quantile(diff_fwd, 0.50);
          c.q95_diff_fwd = quantile(diff_fwd, 0.95);
          c.mean_diff_bwd = mean(diff_bwd);
          c.sd_diff_bwd = sample_sd(diff_bwd);
          c.mean_refit_fwd = mean(refit_fwd);
          c.mean_refit_bwd = mean(refit_bwd);
        }
        if (!diff_loo.empty()) c.mean_diff_loo = mean(diff_loo);
        if (!diff_rmse.empty()) c.mean_diff_rmse_fwd = mean(diff_rmse);
        cells.push_back(std::move(c));
      }
  return cells;
}

/// Run (or resume) the full experiment matrix. When `out_dir` is nonempty,
/// every trial persists as its own JSON file and existing files are reused,
/// so an interrupted matrix picks up where it stopped. Trials run across
/// `n_threads` workers; results do not depend on the scheduling.
inline ExperimentReport run_experiment(const ExperimentMatrix& matrix,
                                       std::uint64_t master_seed,
                                       const std::string& out_dir = "",
                                       unsigned n_threads = 0) {
  matrix.validate();
  namespace fs = std::filesystem;
  if (!out_dir.empty()) fs::create_directories(out_dir);

  struct Task {
    GenKind kind;
    std::size_t kind_index;
    std::size_t horizon;
    std::size_t trial;
  };
  std::vector<Task> tasks;
  for (std::size_t ki = 0; ki < matrix.kinds.size(); ++ki)
    for (std::size_t horizon : matrix.horizons)
      for (std::size_t trial = 0; trial < matrix.trials; ++trial)
        tasks.push_back(Task{matrix.kinds[ki], ki, horizon, trial});

  std::vector<TrialRecord> records(tasks.size());
  std::atomic<std::size_t> next{0};

  const auto worker = [&] {
    for (;;) {
      const std::size_t idx = next.fetch_add(1);
      if (idx >= tasks.size()) return;
      const Task& task = tasks[idx];
      const fs::path file =
          out_dir.empty()
              ? fs::path{}
              : fs::path(out_dir) / detail::trial_file_name(task.kind, task.horizon,
                                                            task.trial);
      if (!file.empty() && fs::exists(file)) {
        try {
          std::ifstream in(file);
          nlohmann::json j;
          in >> j;
          records[idx] = trial_record_from_json(j);
          continue;
        } catch (const std::exception&) {
          // Unreadable leftover; recompute below.
        }
      }
      records[idx] = run_trial(matrix, task.kind, task.kind_index, task.horizon,
                               task.trial, master_seed);
      if (!file.empty()) {
        const fs::path tmp = file.string() + ".tmp";
        {
          std::ofstream out(tmp);
          out << to_json(records[idx]).dump(2) << '\n';
        }
        fs::rename(tmp, file);
      }
    }
  };

  if (n_threads == 0) {
    const char* env = std::getenv("LFOCV_THREADS");
    if (env != nullptr) n_threads = static_cast<unsigned>(std::atoi(env));
    if (n_threads == 0) n_threads = std::thread::hardware_concurrency();
    if (n_threads == 0) n_threads = 1;
  }
  n_threads = std::min<unsigned>(n_threads, static_cast<unsigned>(tasks.size()));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (unsigned w = 0; w < n_threads; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  ExperimentReport report;
  report.master_seed = master_seed;
  report.matrix = matrix;
  report.records = std::move(records);
  report.cells = aggregate_cells(matrix, report.records);
  return report;
}

// ---------------------------------------------------------------------------
// Tables
// ---------------------------------------------------------------------------

struct RefitRow {
  std::string mode;
  std::size_t horizon = 1;
  double tau = 0.7;
  GenKind kind = GenKind::constant;
  double mean_refit_prop = 0.0;
  std::size_t n_trials = 0;
};

/// Mean refit proportions per (mode, M, tau, kind), the refit-table shape.
inline std::vector<RefitRow> summarize_refits(const ExperimentReport& report) {
  std::vector<RefitRow> rows;
  for (const char* mode : {"forward", "backward"})
    for (std::size_t horizon : report.matrix.horizons)
      for (double tau : report.matrix.taus)
        for (GenKind kind : report.matrix.kinds) {
          std::vector<double> props;
          for (const auto& r : report.records) {
            if (r.failed || r.kind != kind || r.horizon != horizon) continue;
            for (const auto& t : r.per_tau)
              if (t.tau == tau)
                props.push_back(std::string(mode) == "forward"
                                    ? t.refit_prop_fwd
                                    : t.refit_prop_bwd);
          }
          if (props.empty()) continue;  // empty cell -> omitted row
          rows.push_back(RefitRow{mode, horizon, tau, kind, mean(props),
                                  props.size()});
        }
  return rows;
}

inline void write_refit_table_csv(const std::vector<RefitRow>& rows,
                                  std::ostream& out) {
  out << "mode,M,tau,kind,mean_refit_prop,n_trials\n";
  out.precision(17);
  for (const auto& r : rows)
    out << r.mode << ',' << r.horizon << ',' << r.tau << ','
        << to_string(r.kind) << ',' << r.mean_refit_prop << ',' << r.n_trials
        << '\n';
}

/// One row per (trial, estimator): the estimator total minus the exact total
/// on the same series, ready for histogram plotting.
inline void write_histogram_csv(const ExperimentReport& report,
                                std::ostream& out) {
  out << "value,kind,tau,M,estimator\n";
  out.precision(17);
  for (const auto& r : report.records) {
    if (r.failed) continue;
    for (const auto& t : r.per_tau) {
      out << (t.elpd_fwd - r.elpd_exact) << ',' << to_string(r.kind) << ','
          << t.tau << ',' << r.horizon << ",forward\n";
      out << (t.elpd_bwd - r.elpd_exact) << ',' << to_string(r.kind) << ','
          << t.tau << ',' << r.horizon << ",backward\n";
      if (r.elpd_loo)
        out << (*r.elpd_loo - r.elpd_exact) << ',' << to_string(r.kind) << ','
            << t.tau << ',' << r.horizon << ",loo\n";
      if (t.rmse_fwd && r.rmse_exact)
        out << (*t.rmse_fwd - *r.rmse_exact) << ',' << to_string(r.kind) << ','
            << t.tau << ',' << r.horizon << ",forward_rmse\n";
    }
  }
}

inline void write_cells_csv(const ExperimentReport& report, std::ostream& out) {
  out << "kind,M,tau,n_trials,n_failed,mean_diff_fwd,sd_diff_fwd,"
         "q05_diff_fwd,q50_diff_fwd,q95_diff_fwd,mean_diff_bwd,sd_diff_bwd,"
         "mean_refit_fwd,mean_refit_bwd,mean_diff_loo,mean_diff_rmse_fwd\n";
  out.precision(17);
  const auto opt = [](const std::optional<double>& v) {
    return v ? std::to_string(*v) : std::string("");
  };
  for (const auto& c : report.cells) {
    out << to_string(c.kind) << ',' << c.horizon << ',' << c.tau << ','
        << c.n_trials << ',' << c.n_failed << ',' << c.mean_diff_fwd << ','
        << c.sd_diff_fwd << ',' << c.q05_diff_fwd << ',' << c.q50_diff_fwd
        << ',' << c.q95_diff_fwd << ',' << c.mean_diff_bwd << ','
        << c.sd_diff_bwd << ',' << c.mean_refit_fwd << ',' << c.mean_refit_bwd
        << ',' << opt(c.mean_diff_loo) << ',' << opt(c.mean_diff_rmse_fwd)
        << '\n';
  }
}

}  // namespace lfocv
