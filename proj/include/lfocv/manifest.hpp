#pragma once

#include <chrono>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "lfocv/common.hpp"

namespace lfocv {

/// FNV-1a digest of a file's bytes, as a fixed-width hex string.
inline std::string file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw config_error("cannot open input file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string bytes = buf.str();
  std::ostringstream hex;
  hex << "fnv1a64:" << std::hex << std::setw(16) << std::setfill('0')
      << fnv1a64({bytes.data(), bytes.size()});
  return hex.str();
}

inline std::string now_iso8601() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

/// Provenance record emitted alongside every CLI output.
struct RunManifest {
  std::string command;
  nlohmann::json resolved_config;
  std::uint64_t seed = 0;
  std::string tool_version = kVersion;
  std::vector<std::pair<std::string, std::string>> inputs;  // path, digest
  std::string started_at;
  std::string finished_at;

  void add_input(const std::string& path) {
    inputs.emplace_back(path, file_digest(path));
  }
};

inline nlohmann::json to_json(const RunManifest& m) {
  nlohmann::json inputs = nlohmann::json::array();
  for (const auto& [path, digest] : m.inputs)
    inputs.push_back({{"path", path}, {"digest", digest}});
  return nlohmann::json{{"command", m.command},
                        {"resolved_config", m.resolved_config},
                        {"seed", m.seed},
                        {"tool_version", m.tool_version},
                        {"inputs", std::move(inputs)},
                        {"started_at", m.started_at},
                        {"finished_at", m.finished_at}};
}

inline void write_manifest(const RunManifest& m, const std::string& out_path) {
  std::ofstream out(out_path);
  if (!out) throw config_error("cannot write manifest '" + out_path + "'");
  out << to_json(m).dump(2) << '\n';
}

}  // namespace lfocv
