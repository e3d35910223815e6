#pragma once

#include <cmath>
#include <cstddef>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lfocv/common.hpp"

namespace lfocv {

/// An ordered univariate series y_1..y_N with strictly increasing time stamps.
/// Time stamps default to 1..N when not supplied.
class TimeSeries {
 public:
  TimeSeries(std::vector<double> t, std::vector<double> y,
             std::optional<std::string> unit = std::nullopt)
      : t_(std::move(t)), y_(std::move(y)), unit_(std::move(unit)) {
    validate();
  }

  explicit TimeSeries(std::vector<double> y,
                      std::optional<std::string> unit = std::nullopt)
      : y_(std::move(y)), unit_(std::move(unit)) {
    t_.resize(y_.size());
    for (std::size_t i = 0; i < y_.size(); ++i) t_[i] = static_cast<double>(i + 1);
    validate();
  }

  std::size_t size() const { return y_.size(); }
  const std::vector<double>& t() const { return t_; }
  const std::vector<double>& y() const { return y_; }
  const std::optional<std::string>& unit() const { return unit_; }

  /// First `n` observations as a new series (shares no state).
  TimeSeries prefix(std::size_t n) const {
    if (n < 1 || n > size()) throw config_error("prefix length out of range");
    return TimeSeries(std::vector<double>(t_.begin(), t_.begin() + n),
                      std::vector<double>(y_.begin(), y_.begin() + n), unit_);
  }

 private:
  void validate() const {
    if (y_.empty()) throw config_error("time series must have at least one observation");
    if (t_.size() != y_.size())
      throw config_error("time and value columns differ in length");
    for (std::size_t i = 0; i < y_.size(); ++i) {
      if (!std::isfinite(y_[i]))
        throw domain_error("non-finite observation at row " + std::to_string(i + 1));
      if (!std::isfinite(t_[i]))
        throw domain_error("non-finite time stamp at row " + std::to_string(i + 1));
      if (i > 0 && !(t_[i] > t_[i - 1]))
        throw domain_error("time stamps must be strictly increasing (row " +
                           std::to_string(i + 1) + ")");
    }
  }

  std::vector<double> t_;
  std::vector<double> y_;
  std::optional<std::string> unit_;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline double parse_double(const std::string& field, std::size_t line_no) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(field, &pos);
    if (pos != field.size()) throw std::invalid_argument(field);
    return v;
  } catch (const std::exception&) {
    throw config_error("line " + std::to_string(line_no) +
                       ": cannot parse numeric field '" + field + "'");
  }
}

}  // namespace detail

/// Parse the two-column `t,y` CSV format. The header line is mandatory.
inline TimeSeries read_time_series_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line))
    throw config_error("empty input; expected CSV with header 't,y'");
  // Strip a UTF-8 BOM if present.
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  {
    std::string header = detail::trim(line);
    const auto comma = header.find(',');
    if (comma == std::string::npos ||
        detail::trim(header.substr(0, comma)) != "t" ||
        detail::trim(header.substr(comma + 1)) != "y")
      throw config_error("bad CSV header '" + header + "'; expected 't,y'");
  }
  std::vector<double> t, y;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string row = detail::trim(line);
    if (row.empty()) continue;
    const auto comma = row.find(',');
    if (comma == std::string::npos)
      throw config_error("line " + std::to_string(line_no) + ": expected 't,y' row");
    t.push_back(detail::parse_double(detail::trim(row.substr(0, comma)), line_no));
    y.push_back(detail::parse_double(detail::trim(row.substr(comma + 1)), line_no));
  }
  if (y.empty()) throw config_error("CSV contains a header but no data rows");
  return TimeSeries(std::move(t), std::move(y));
}

inline TimeSeries read_time_series_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open data file '" + path + "'");
  return read_time_series_csv(in);
}

inline void write_time_series_csv(const TimeSeries& ts, std::ostream& out) {
  out << "t,y\n";
  out.precision(17);
  for (std::size_t i = 0; i < ts.size(); ++i)
    out << ts.t()[i] << ',' << ts.y()[i] << '\n';
}

}  // namespace lfocv
