#pragma once

#include <charconv>
#include <string>

namespace cdpr {

/// Shortest decimal text that parses back to the same double.
inline std::string format_real(double x) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, end);
}

}  // namespace cdpr
