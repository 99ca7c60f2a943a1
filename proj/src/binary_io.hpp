// Little-endian fixed-width helpers for the binary file formats.
#pragma once

#include <bit>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace cdpr::binary {

static_assert(std::endian::native == std::endian::little, "little-endian host required");

template <class T>
void put(std::ostream& out, T value) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  out.write(bytes, sizeof(T));
}

template <class T>
T get(std::istream& in, const char* what) {
  T value{};
  char bytes[sizeof(T)];
  if (!in.read(bytes, sizeof(T))) throw std::runtime_error(std::string(what) + ": truncated");
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace cdpr::binary
