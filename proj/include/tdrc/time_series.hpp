#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tdrc/errors.hpp"

namespace tdrc {

/// Equally spaced scalar observations with an integer time origin: values[i]
/// is the observation at time origin + i.
struct TimeSeries {
  std::vector<double> values;
  std::int64_t origin = 0;

  [[nodiscard]] std::size_t size() const { return values.size(); }
  [[nodiscard]] bool empty() const { return values.empty(); }
  [[nodiscard]] double operator[](std::size_t i) const { return values[i]; }

  [[nodiscard]] std::int64_t first_time() const { return origin; }
  [[nodiscard]] std::int64_t last_time() const {
    return origin + static_cast<std::int64_t>(values.size()) - 1;
  }

  /// Value at absolute time t. t must lie in [first_time, last_time].
  [[nodiscard]] double at_time(std::int64_t t) const {
    if (t < first_time() || t > last_time()) {
      throw InsufficientData("time " + std::to_string(t) + " outside series range [" +
                             std::to_string(first_time()) + ", " + std::to_string(last_time()) +
                             "]");
    }
    return values[static_cast<std::size_t>(t - origin)];
  }
};

[[nodiscard]] inline double series_mean(const TimeSeries& s) {
  if (s.empty()) throw InsufficientData("mean of empty series");
  double acc = 0.0;
  for (double v : s.values) acc += v;
  return acc / static_cast<double>(s.size());
}

/// Population variance (divides by the length, not length - 1).
[[nodiscard]] inline double series_variance(const TimeSeries& s) {
  const double m = series_mean(s);
  double acc = 0.0;
  for (double v : s.values) acc += (v - m) * (v - m);
  return acc / static_cast<double>(s.size());
}

/// Overlap of two series in absolute time: [first, last] or an empty range.
struct TimeOverlap {
  std::int64_t first = 0;
  std::int64_t last = -1;
  [[nodiscard]] bool empty() const { return last < first; }
  [[nodiscard]] std::size_t length() const {
    return empty() ? 0 : static_cast<std::size_t>(last - first + 1);
  }
};

[[nodiscard]] inline TimeOverlap overlap(const TimeSeries& a, const TimeSeries& b) {
  TimeOverlap o;
  o.first = std::max(a.first_time(), b.first_time());
  o.last = std::min(a.last_time(), b.last_time());
  if (a.empty() || b.empty()) o = TimeOverlap{};
  return o;
}

/// Writes a single-column CSV with header "value". Uses round-trip precision.
inline void write_series_csv(const std::filesystem::path& path, const TimeSeries& s) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << "value\n";
  out.precision(17);
  for (double v : s.values) out << v << "\n";
  if (!out) throw IoError("write failed: " + path.string());
}

/// Reads a single-column CSV with header "value". The origin is set to 0.
[[nodiscard]] inline TimeSeries read_series_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty file: " + path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "value") throw IoError("expected header 'value' in " + path.string());
  TimeSeries s;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    try {
      std::size_t pos = 0;
      const double v = std::stod(line, &pos);
      if (pos != line.size()) throw std::invalid_argument("trailing characters");
      s.values.push_back(v);
    } catch (const std::exception&) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": cannot parse '" + line +
                    "' as a number");
    }
  }
  return s;
}

}  // namespace tdrc
