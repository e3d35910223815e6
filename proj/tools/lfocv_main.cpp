// lfocv command-line front end: run LFO/LOO analyses on CSV data, drive
// simulation matrices, and emit plot-ready reports.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "lfocv/lfocv.hpp"

namespace {

namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitFitFailure = 3;

void write_json_file(const nlohmann::json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw lfocv::config_error("cannot write output file '" + path + "'");
  out << j.dump(2) << '\n';
}

std::string manifest_path(const std::string& out_path) {
  return out_path + ".manifest.json";
}

struct AnalysisArgs {
  std::string data_path;
  std::string model_path;
  std::string out_path;
  std::uint64_t seed = 1;
};

lfocv::RunManifest start_manifest(const std::string& command,
                                  const AnalysisArgs& args,
                                  nlohmann::json resolved) {
  lfocv::RunManifest m;
  m.command = command;
  m.resolved_config = std::move(resolved);
  m.seed = args.seed;
  m.started_at = lfocv::now_iso8601();
  m.add_input(args.data_path);
  m.add_input(args.model_path);
  return m;
}

int run_lfo_command(const AnalysisArgs& args, std::size_t horizon,
                    std::size_t min_history, double tau,
                    const std::string& mode_str, const std::string& measure_str) {
  const lfocv::TimeSeries data = lfocv::read_time_series_csv(args.data_path);
  const lfocv::ModelFile model_file =
      lfocv::model_file_from_json(lfocv::load_json_file(args.model_path));
  const lfocv::ArTrendModel model(model_file.spec);

  lfocv::LfoConfig cfg;
  cfg.horizon = horizon;
  cfg.min_history = min_history;
  cfg.tau = tau;
  cfg.mode = lfocv::lfo_mode_from_string(mode_str);
  cfg.measure = lfocv::measure_from_string(measure_str);
  cfg.validate(data.size());

  nlohmann::json resolved{{"M", horizon},       {"L", min_history},
                          {"tau", tau},         {"mode", mode_str},
                          {"measure", measure_str},
                          {"model", lfocv::to_json(model_file)},
                          {"data", args.data_path}};
  lfocv::RunManifest manifest = start_manifest("lfo", args, resolved);

  const auto summarize = [&](const lfocv::LfoResult& result) {
    double max_k = -std::numeric_limits<double>::infinity();
    bool any_k = false;
    for (const auto& p : result.pointwise)
      if (p.k && std::isfinite(*p.k)) {
        max_k = std::max(max_k, *p.k);
        any_k = true;
      }
    std::cout << "mode=" << lfocv::to_string(result.mode)
              << " measure=" << lfocv::to_string(result.measure)
              << " M=" << result.horizon << " L=" << result.min_history
              << " tau=" << result.tau << '\n';
    std::cout << "total=" << result.total;
    if (result.se)
      std::cout << " se=" << *result.se;
    else
      std::cout << " se=n/a";
    std::cout << " refits=" << result.refit_indices.size();
    if (any_k)
      std::cout << " max_k=" << max_k;
    else
      std::cout << " max_k=n/a";
    std::cout << '\n';
  };

  try {
    const lfocv::LfoResult result =
        lfocv::run_lfo(model, data, cfg, model_file.sampler, args.seed);
    write_json_file(lfocv::to_json(result), args.out_path);
    manifest.finished_at = lfocv::now_iso8601();
    lfocv::write_manifest(manifest, manifest_path(args.out_path));
    summarize(result);
    return kExitOk;
  } catch (const lfocv::lfo_abort& abort) {
    nlohmann::json partial = lfocv::to_json(abort.partial);
    partial["partial"] = true;
    partial["error"] = abort.what();
    write_json_file(partial, args.out_path);
    manifest.finished_at = lfocv::now_iso8601();
    lfocv::write_manifest(manifest, manifest_path(args.out_path));
    std::cerr << "fit failure: " << abort.what()
              << " (partial results written to " << args.out_path << ")\n";
    return kExitFitFailure;
  }
}

int run_loo_command(const AnalysisArgs& args) {
  const lfocv::TimeSeries data = lfocv::read_time_series_csv(args.data_path);
  const lfocv::ModelFile model_file =
      lfocv::model_file_from_json(lfocv::load_json_file(args.model_path));
  const lfocv::ArTrendModel model(model_file.spec);

  nlohmann::json resolved{{"model", lfocv::to_json(model_file)},
                          {"data", args.data_path}};
  lfocv::RunManifest manifest = start_manifest("loo", args, resolved);

  const lfocv::LooResult result =
      lfocv::psis_loo(model, data, model_file.sampler, args.seed);
  write_json_file(lfocv::to_json(result), args.out_path);
  manifest.finished_at = lfocv::now_iso8601();
  lfocv::write_manifest(manifest, manifest_path(args.out_path));

  std::cout << "total=" << result.total;
  if (result.se)
    std::cout << " se=" << *result.se;
  else
    std::cout << " se=n/a";
  std::cout << " flagged=" << result.n_flagged << '\n';
  return kExitOk;
}

void write_report_files(const lfocv::ExperimentReport& report,
                        const std::string& prefix) {
  {
    std::ofstream out(prefix + "refits.csv");
    if (!out) throw lfocv::config_error("cannot write " + prefix + "refits.csv");
    lfocv::write_refit_table_csv(lfocv::summarize_refits(report), out);
  }
  {
    std::ofstream out(prefix + "histogram.csv");
    if (!out)
      throw lfocv::config_error("cannot write " + prefix + "histogram.csv");
    lfocv::write_histogram_csv(report, out);
  }
  {
    std::ofstream out(prefix + "cells.csv");
    if (!out) throw lfocv::config_error("cannot write " + prefix + "cells.csv");
    lfocv::write_cells_csv(report, out);
  }
}

int run_simulate_command(const std::string& matrix_path,
                         const std::string& out_dir, std::uint64_t seed) {
  const nlohmann::json matrix_json = lfocv::load_json_file(matrix_path);
  const lfocv::ExperimentMatrix matrix =
      lfocv::experiment_matrix_from_json(matrix_json);

  lfocv::RunManifest manifest;
  manifest.command = "simulate";
  manifest.seed = seed;
  manifest.resolved_config = lfocv::to_json(matrix);
  manifest.started_at = lfocv::now_iso8601();
  manifest.add_input(matrix_path);

  fs::create_directories(out_dir);
  // Persist the resolved matrix so `report` can re-aggregate the directory.
  write_json_file(
      nlohmann::json{{"master_seed", seed}, {"matrix", lfocv::to_json(matrix)}},
      (fs::path(out_dir) / "matrix_resolved.json").string());

  const lfocv::ExperimentReport report =
      lfocv::run_experiment(matrix, seed, out_dir);
  write_report_files(report, (fs::path(out_dir) / "report_").string());

  manifest.finished_at = lfocv::now_iso8601();
  lfocv::write_manifest(manifest,
                        (fs::path(out_dir) / "manifest.json").string());

  std::size_t failed = 0;
  for (const auto& r : report.records) failed += r.failed ? 1 : 0;
  std::cout << "trials=" << report.records.size() << " failed=" << failed
            << " out=" << out_dir << '\n';
  return kExitOk;
}

int run_report_command(const std::string& dir, const std::string& out_prefix) {
  const fs::path resolved = fs::path(dir) / "matrix_resolved.json";
  if (!fs::exists(resolved))
    throw lfocv::config_error("no matrix_resolved.json in '" + dir +
                              "'; run simulate first");
  const nlohmann::json j = lfocv::load_json_file(resolved.string());
  const lfocv::ExperimentMatrix matrix =
      lfocv::experiment_matrix_from_json(j.at("matrix"));
  const std::uint64_t seed = j.at("master_seed").get<std::uint64_t>();
  const lfocv::ExperimentReport report =
      lfocv::run_experiment(matrix, seed, dir);
  write_report_files(report, out_prefix);
  std::cout << "records=" << report.records.size() << " prefix=" << out_prefix
            << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Leave-future-out cross-validation for Bayesian time-series "
               "models, with PSIS approximation"};
  app.require_subcommand(1);

  // lfo
  auto* lfo_cmd = app.add_subcommand(
      "lfo", "Exact or PSIS-approximated M-step-ahead cross-validation");
  AnalysisArgs lfo_args;
  std::size_t horizon = 1, min_history = 25;
  double tau = 0.7;
  std::string mode = "forward", measure = "elpd";
  lfo_cmd->add_option("--data", lfo_args.data_path, "Input CSV with header t,y")
      ->required();
  lfo_cmd->add_option("--model", lfo_args.model_path, "Model spec JSON path")
      ->required();
  lfo_cmd->add_option("--M", horizon, "Prediction horizon (steps ahead)");
  lfo_cmd->add_option("--L", min_history, "Minimum history before predicting");
  lfo_cmd->add_option("--tau", tau, "Pareto-k refit threshold; 0 forces refits");
  lfo_cmd->add_option("--mode", mode, "forward|backward|exact");
  lfo_cmd->add_option("--measure", measure, "elpd|rmse");
  lfo_cmd->add_option("--seed", lfo_args.seed, "Master seed");
  lfo_cmd->add_option("--out", lfo_args.out_path, "Result JSON path")->required();

  // loo
  auto* loo_cmd = app.add_subcommand(
      "loo", "PSIS leave-one-out baseline from a single full-data fit");
  AnalysisArgs loo_args;
  loo_cmd->add_option("--data", loo_args.data_path, "Input CSV with header t,y")
      ->required();
  loo_cmd->add_option("--model", loo_args.model_path, "Model spec JSON path")
      ->required();
  loo_cmd->add_option("--seed", loo_args.seed, "Master seed");
  loo_cmd->add_option("--out", loo_args.out_path, "Result JSON path")->required();

  // simulate
  auto* sim_cmd = app.add_subcommand(
      "simulate", "Run (or resume) a simulation matrix and write reports");
  std::string matrix_path, sim_out_dir;
  std::uint64_t sim_seed = 1;
  sim_cmd->add_option("--matrix", matrix_path, "Matrix config JSON")->required();
  sim_cmd->add_option("--out", sim_out_dir, "Output directory")->required();
  sim_cmd->add_option("--seed", sim_seed, "Master seed");

  // report
  auto* rep_cmd = app.add_subcommand(
      "report", "Re-aggregate an existing trial directory into CSV tables");
  std::string rep_dir, rep_prefix;
  rep_cmd->add_option("--dir", rep_dir, "Trial directory from simulate")
      ->required();
  rep_cmd->add_option("--out-prefix", rep_prefix, "Output path prefix")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*lfo_cmd)
      return run_lfo_command(lfo_args, horizon, min_history, tau, mode, measure);
    if (*loo_cmd) return run_loo_command(loo_args);
    if (*sim_cmd) return run_simulate_command(matrix_path, sim_out_dir, sim_seed);
    if (*rep_cmd) return run_report_command(rep_dir, rep_prefix);
  } catch (const lfocv::fit_failure& ex) {
    std::cerr << "fit failure: " << ex.what() << '\n';
    return kExitFitFailure;
  } catch (const lfocv::numeric_error& ex) {
    std::cerr << "numeric error: " << ex.what() << '\n';
    return kExitFitFailure;
  } catch (const lfocv::error& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return kExitConfig;
  }
  return kExitConfig;
}
