#pragma once

#include <charconv>
#include <string>

namespace deid {

// Shortest decimal form that parses back to the same double; every CSV,
// manifest and model file goes through this so reruns are byte-identical.
inline std::string format_double(double x) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
  (void)ec;
  return std::string(buf, end);
}

}  // namespace deid
