#pragma once

#include <fstream>
#include <optional>
#include <string>

#include "json.hpp"
#include "lfocv/ar_trend.hpp"
#include "lfocv/model.hpp"
#include "lfocv/simlab.hpp"

namespace lfocv {

inline nlohmann::json to_json(const SamplerConfig& c) {
  return nlohmann::json{{"chains", c.chains},   {"warmup", c.warmup},
                        {"draws", c.draws},     {"thin", c.thin},
                        {"accept_min", c.accept_min},
                        {"accept_max", c.accept_max}};
}

inline SamplerConfig sampler_config_from_json(const nlohmann::json& j) {
  SamplerConfig c;
  c.chains = j.value("chains", c.chains);
  c.warmup = j.value("warmup", c.warmup);
  c.draws = j.value("draws", c.draws);
  c.thin = j.value("thin", c.thin);
  c.accept_min = j.value("accept_min", c.accept_min);
  c.accept_max = j.value("accept_max", c.accept_max);
  c.validate();
  return c;
}

inline nlohmann::json to_json(const ArTrendSpec& s) {
  nlohmann::json j{{"p", s.p},
                   {"trend_degree", s.trend_degree},
                   {"priors",
                    {{"b_sd", s.priors.b_sd},
                     {"phi_sd", s.priors.phi_sd},
                     {"sigma_sd", s.priors.sigma_sd}}}};
  j["fixed_sigma"] =
      s.fixed_sigma ? nlohmann::json(*s.fixed_sigma) : nlohmann::json();
  return j;
}

inline ArTrendSpec ar_trend_spec_from_json(const nlohmann::json& j) {
  ArTrendSpec s;
  s.p = j.value("p", 0);
  s.trend_degree = j.value("trend_degree", 0);
  if (j.contains("priors")) {
    const auto& pr = j.at("priors");
    s.priors.b_sd = pr.value("b_sd", s.priors.b_sd);
    s.priors.phi_sd = pr.value("phi_sd", s.priors.phi_sd);
    s.priors.sigma_sd = pr.value("sigma_sd", s.priors.sigma_sd);
  }
  if (j.contains("fixed_sigma") && !j.at("fixed_sigma").is_null())
    s.fixed_sigma = j.at("fixed_sigma").get<double>();
  s.validate();
  return s;
}

/// A model file bundles the model spec with its sampler settings.
struct ModelFile {
  ArTrendSpec spec;
  SamplerConfig sampler;
};

inline ModelFile model_file_from_json(const nlohmann::json& j) {
  ModelFile f;
  f.spec = ar_trend_spec_from_json(j);
  if (j.contains("sampler")) f.sampler = sampler_config_from_json(j.at("sampler"));
  return f;
}

inline nlohmann::json to_json(const ModelFile& f) {
  nlohmann::json j = to_json(f.spec);
  j["sampler"] = to_json(f.sampler);
  return j;
}

inline nlohmann::json to_json(const ExperimentMatrix& m) {
  nlohmann::json kinds = nlohmann::json::array();
  for (GenKind k : m.kinds) kinds.push_back(to_string(k));
  return nlohmann::json{{"kinds", std::move(kinds)},
                        {"taus", m.taus},
                        {"Ms", m.horizons},
                        {"trials", m.trials},
                        {"N", m.n},
                        {"L", m.min_history},
                        {"sigma_innov", m.sigma_innov},
                        {"rmse", m.with_rmse},
                        {"sampler", to_json(m.sampler)}};
}

inline ExperimentMatrix experiment_matrix_from_json(const nlohmann::json& j) {
  ExperimentMatrix m;
  if (j.contains("kinds")) {
    m.kinds.clear();
    for (const auto& k : j.at("kinds"))
      m.kinds.push_back(gen_kind_from_string(k.get<std::string>()));
  }
  if (j.contains("taus")) m.taus = j.at("taus").get<std::vector<double>>();
  if (j.contains("Ms"))
    m.horizons = j.at("Ms").get<std::vector<std::size_t>>();
  m.trials = j.value("trials", m.trials);
  m.n = j.value("N", m.n);
  m.min_history = j.value("L", m.min_history);
  m.sigma_innov = j.value("sigma_innov", m.sigma_innov);
  m.with_rmse = j.value("rmse", m.with_rmse);
  if (j.contains("sampler")) m.sampler = sampler_config_from_json(j.at("sampler"));
  m.validate();
  return m;
}

inline nlohmann::json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open JSON file '" + path + "'");
  try {
    nlohmann::json j;
    in >> j;
    return j;
  } catch (const nlohmann::json::exception& ex) {
    throw config_error("invalid JSON in '" + path + "': " + ex.what());
  }
}

}  // namespace lfocv
