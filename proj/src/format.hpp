#pragma once

// Text formatting shared by the CSV and JSON-lines writers.

#include <charconv>
#include <string>

namespace disel {

/// Shortest decimal string that round-trips to the same double.
inline std::string fmt_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace disel
