#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"
#include "lfocv/json_io.hpp"
#include "lfocv/manifest.hpp"
#include "lfocv/simlab.hpp"
#include "support/schema_check.hpp"

namespace fs = std::filesystem;
using Catch::Approx;

namespace {

std::string bin_path() {
  const char* env = std::getenv("LFOCV_BIN");
  REQUIRE(env != nullptr);
  return env;
}

std::string source_dir() {
  const char* env = std::getenv("LFOCV_SOURCE_DIR");
  REQUIRE(env != nullptr);
  return env;
}

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

struct Workspace {
  fs::path dir;
  Workspace() {
    static int counter = 0;
    dir = fs::temp_directory_path() /
          ("lfocv_cli_" + std::to_string(::getpid()) + "_" +
           std::to_string(counter++));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Workspace() { fs::remove_all(dir); }

  RunResult run(const std::string& args) const {
    const fs::path out_file = dir / "stdout.txt";
    const fs::path err_file = dir / "stderr.txt";
    const std::string cmd = bin_path() + " " + args + " > " +
                            out_file.string() + " 2> " + err_file.string();
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out_file);
    r.err = slurp(err_file);
    return r;
  }

  fs::path write(const std::string& name, const std::string& content) const {
    const fs::path p = dir / name;
    std::ofstream out(p);
    out << content;
    return p;
  }
};

std::string light_model_json(int p, int trend_degree) {
  lfocv::ModelFile f;
  f.spec.p = p;
  f.spec.trend_degree = trend_degree;
  f.sampler.chains = 2;
  f.sampler.warmup = 250;
  f.sampler.draws = 200;
  f.sampler.thin = 1;
  return lfocv::to_json(f).dump(2);
}

std::string series_csv(lfocv::GenKind kind, std::size_t n, std::uint64_t seed) {
  const lfocv::TimeSeries ts =
      lfocv::generate_series(lfocv::GenSpec::canonical(kind, n), seed);
  std::ostringstream buf;
  lfocv::write_time_series_csv(ts, buf);
  return buf.str();
}

nlohmann::json load(const fs::path& p) {
  std::ifstream in(p);
  nlohmann::json j;
  in >> j;
  return j;
}

void require_valid(const nlohmann::json& value, const std::string& schema_file) {
  const nlohmann::json schema =
      load(fs::path(source_dir()) / "schemas" / schema_file);
  const auto errors = schema_check::validate(value, schema);
  for (const auto& e : errors) UNSCOPED_INFO(e);
  REQUIRE(errors.empty());
}

}  // namespace

TEST_CASE("lfo: tau 0 forward equals exact, outputs validate, reruns are identical") {
  Workspace ws;
  const fs::path data = ws.write("data.csv", series_csv(lfocv::GenKind::linear, 36, 7));
  const fs::path model = ws.write("model.json", light_model_json(0, 1));

  const std::string common = "lfo --data " + data.string() + " --model " +
                             model.string() + " --L 25 --M 1 --seed 11 ";
  const RunResult fwd = ws.run(common + "--tau 0 --mode forward --out " +
                               (ws.dir / "fwd.json").string());
  const RunResult exact = ws.run(common + "--tau 0 --mode exact --out " +
                                 (ws.dir / "exact.json").string());
  REQUIRE(fwd.code == 0);
  REQUIRE(exact.code == 0);
  REQUIRE(fwd.out.find("total=") != std::string::npos);
  REQUIRE(fwd.out.find("refits=") != std::string::npos);
  REQUIRE(fwd.out.find("max_k=") != std::string::npos);

  const nlohmann::json fwd_json = load(ws.dir / "fwd.json");
  const nlohmann::json exact_json = load(ws.dir / "exact.json");
  REQUIRE(fwd_json.at("total").get<double>() ==
          exact_json.at("total").get<double>());
  require_valid(fwd_json, "lfo_result.schema.json");
  require_valid(exact_json, "lfo_result.schema.json");

  // Manifest exists, validates, and its digests match the inputs.
  const nlohmann::json manifest = load(ws.dir / "fwd.json.manifest.json");
  require_valid(manifest, "run_manifest.schema.json");
  for (const auto& input : manifest.at("inputs"))
    REQUIRE(input.at("digest").get<std::string>() ==
            lfocv::file_digest(input.at("path").get<std::string>()));

  // Byte-identical result on rerun (manifests carry timestamps, results not).
  const std::string before = slurp(ws.dir / "fwd.json");
  const RunResult again = ws.run(common + "--tau 0 --mode forward --out " +
                                 (ws.dir / "fwd.json").string());
  REQUIRE(again.code == 0);
  REQUIRE(slurp(ws.dir / "fwd.json") == before);
}

TEST_CASE("lfo: bad inputs exit with the usage code and a schema hint") {
  Workspace ws;
  const fs::path model = ws.write("model.json", light_model_json(0, 0));
  const fs::path bad_csv = ws.write("bad.csv", "time,value\n1,2\n2,3\n");
  const RunResult r = ws.run("lfo --data " + bad_csv.string() + " --model " +
                             model.string() + " --out " +
                             (ws.dir / "o.json").string());
  REQUIRE(r.code == 2);
  REQUIRE(r.err.find("t,y") != std::string::npos);

  const fs::path empty_csv = ws.write("empty.csv", "t,y\n");
  const RunResult r2 = ws.run("lfo --data " + empty_csv.string() + " --model " +
                              model.string() + " --out " +
                              (ws.dir / "o.json").string());
  REQUIRE(r2.code == 2);

  const fs::path data = ws.write("data.csv", series_csv(lfocv::GenKind::constant, 40, 1));
  const RunResult r3 = ws.run("lfo --data " + data.string() + " --model " +
                              model.string() + " --mode sideways --out " +
                              (ws.dir / "o.json").string());
  REQUIRE(r3.code == 2);

  const RunResult r4 = ws.run("lfo --data " + data.string() + " --model " +
                              model.string() + " --L 40 --out " +
                              (ws.dir / "o.json").string());
  REQUIRE(r4.code == 2);  // empty evaluation set

  const RunResult r5 = ws.run("frobnicate");
  REQUIRE(r5.code == 2);
}

TEST_CASE("lfo: fit failures exit 3 and leave partial results") {
  Workspace ws;
  lfocv::ModelFile f;
  f.spec.p = 2;
  f.spec.trend_degree = 1;
  f.sampler.chains = 2;
  f.sampler.warmup = 150;
  f.sampler.draws = 100;
  f.sampler.accept_min = 0.58;  // unreachable acceptance window
  f.sampler.accept_max = 0.60;
  const fs::path model = ws.write("model.json", lfocv::to_json(f).dump(2));
  const fs::path data =
      ws.write("data.csv", series_csv(lfocv::GenKind::ar2_linear, 40, 5));

  const RunResult r = ws.run("lfo --data " + data.string() + " --model " +
                             model.string() + " --L 25 --out " +
                             (ws.dir / "partial.json").string());
  REQUIRE(r.code == 3);
  const nlohmann::json out = load(ws.dir / "partial.json");
  REQUIRE(out.at("partial").get<bool>());
  REQUIRE(out.contains("error"));
  require_valid(out, "lfo_result.schema.json");
}

TEST_CASE("loo exceeds forward 1-SAP on trending data and validates") {
  Workspace ws;
  const fs::path data =
      ws.write("data.csv", series_csv(lfocv::GenKind::linear, 60, 19));
  const fs::path model = ws.write("model.json", light_model_json(0, 1));

  const RunResult loo = ws.run("loo --data " + data.string() + " --model " +
                               model.string() + " --seed 4 --out " +
                               (ws.dir / "loo.json").string());
  REQUIRE(loo.code == 0);
  REQUIRE(loo.out.find("flagged=") != std::string::npos);
  const nlohmann::json loo_json = load(ws.dir / "loo.json");
  require_valid(loo_json, "loo_result.schema.json");

  const RunResult lfo = ws.run("lfo --data " + data.string() + " --model " +
                               model.string() +
                               " --L 25 --M 1 --tau 0.7 --seed 4 --out " +
                               (ws.dir / "lfo.json").string());
  REQUIRE(lfo.code == 0);
  const nlohmann::json lfo_json = load(ws.dir / "lfo.json");
  REQUIRE(loo_json.at("total").get<double>() >
          lfo_json.at("total").get<double>());
}

TEST_CASE("loo and 1-SAP agree within noise on constant data") {
  Workspace ws;
  const fs::path data =
      ws.write("data.csv", series_csv(lfocv::GenKind::constant, 60, 29));
  const fs::path model = ws.write("model.json", light_model_json(0, 0));

  const RunResult loo = ws.run("loo --data " + data.string() + " --model " +
                               model.string() + " --seed 6 --out " +
                               (ws.dir / "loo.json").string());
  const RunResult lfo = ws.run("lfo --data " + data.string() + " --model " +
                               model.string() +
                               " --L 25 --M 1 --tau 0.7 --seed 6 --out " +
                               (ws.dir / "lfo.json").string());
  REQUIRE(loo.code == 0);
  REQUIRE(lfo.code == 0);
  const nlohmann::json loo_json = load(ws.dir / "loo.json");
  const nlohmann::json lfo_json = load(ws.dir / "lfo.json");
  // LOO is computed over all N observations, 1-SAP only over i >= L; compare
  // the shared tail of the series.
  double loo_tail = 0.0;
  for (const auto& p : loo_json.at("pointwise"))
    if (p.at("i").get<std::size_t>() >= 26) loo_tail += p.at("value").get<double>();
  const double lfo_total = lfo_json.at("total").get<double>();
  const double se = lfo_json.at("se").get<double>();
  REQUIRE(std::abs(loo_tail - lfo_total) < 2.0 * se);
}

TEST_CASE("simulate and report: schema-stable CSVs, byte-identical reruns") {
  Workspace ws;
  lfocv::ExperimentMatrix m;
  m.kinds = {lfocv::GenKind::linear};
  m.taus = {0.0};
  m.horizons = {1};
  m.trials = 1;
  m.n = 30;
  m.min_history = 25;
  m.sampler.chains = 2;
  m.sampler.warmup = 150;
  m.sampler.draws = 100;
  m.sampler.thin = 1;
  const fs::path matrix = ws.write("matrix.json", lfocv::to_json(m).dump(2));

  const fs::path out_dir = ws.dir / "sim";
  const RunResult sim = ws.run("simulate --matrix " + matrix.string() +
                               " --seed 42 --out " + out_dir.string());
  REQUIRE(sim.code == 0);
  REQUIRE(fs::exists(out_dir / "report_refits.csv"));
  REQUIRE(fs::exists(out_dir / "report_histogram.csv"));
  REQUIRE(fs::exists(out_dir / "report_cells.csv"));
  REQUIRE(fs::exists(out_dir / "manifest.json"));
  require_valid(load(out_dir / "manifest.json"), "run_manifest.schema.json");
  require_valid(load(out_dir / "trial_linear_M1_t0.json"),
                "trial_record.schema.json");

  // Golden column schemas, frozen from the first blessed run.
  const std::string refits = slurp(out_dir / "report_refits.csv");
  REQUIRE(refits.rfind("mode,M,tau,kind,mean_refit_prop,n_trials\n", 0) == 0);
  const std::string hist = slurp(out_dir / "report_histogram.csv");
  REQUIRE(hist.rfind("value,kind,tau,M,estimator\n", 0) == 0);
  const std::string cells = slurp(out_dir / "report_cells.csv");
  REQUIRE(cells.rfind(
              "kind,M,tau,n_trials,n_failed,mean_diff_fwd,sd_diff_fwd,"
              "q05_diff_fwd,q50_diff_fwd,q95_diff_fwd,mean_diff_bwd,"
              "sd_diff_bwd,mean_refit_fwd,mean_refit_bwd,mean_diff_loo,"
              "mean_diff_rmse_fwd\n",
              0) == 0);

  // tau = 0 cell: the difference column is exactly zero.
  std::istringstream hist_rows(hist);
  std::string line;
  std::getline(hist_rows, line);  // header
  bool saw_forward = false;
  while (std::getline(hist_rows, line)) {
    if (line.find(",forward") != std::string::npos &&
        line.find("forward_rmse") == std::string::npos) {
      REQUIRE(line.rfind("0,", 0) == 0);
      saw_forward = true;
    }
  }
  REQUIRE(saw_forward);

  // report over the same directory reproduces the CSVs byte for byte.
  const RunResult rep = ws.run("report --dir " + out_dir.string() +
                               " --out-prefix " + (ws.dir / "again_").string());
  REQUIRE(rep.code == 0);
  REQUIRE(slurp(ws.dir / "again_refits.csv") == refits);
  REQUIRE(slurp(ws.dir / "again_histogram.csv") == hist);
  REQUIRE(slurp(ws.dir / "again_cells.csv") == cells);

  const RunResult bad = ws.run("simulate --matrix " +
                               (ws.dir / "missing.json").string() + " --out " +
                               (ws.dir / "x").string());
  REQUIRE(bad.code == 2);

  const RunResult bad_rep =
      ws.run("report --dir " + (ws.dir / "nosuch").string() +
             " --out-prefix " + (ws.dir / "y_").string());
  REQUIRE(bad_rep.code == 2);
}
