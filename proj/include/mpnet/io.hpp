#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mpnet {

static_assert(std::endian::native == std::endian::little,
              "on-disk formats assume a little-endian host");

struct FormatError : std::runtime_error {
  enum class Kind { bad_magic, bad_version, truncated, io };
  Kind kind;
  FormatError(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
};

namespace detail {
template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
void read_pod(std::istream& is, T& v) {
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw FormatError(FormatError::Kind::truncated, "file ends mid-record");
}
template <typename T>
void write_array(std::ostream& os, const std::vector<T>& v) {
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(T)));
}
template <typename T>
void read_array(std::istream& is, std::vector<T>& v, std::size_t count) {
  v.resize(count);
  is.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(count * sizeof(T)));
  if (!is) throw FormatError(FormatError::Kind::truncated, "file ends mid-array");
}
inline void write_string(std::ostream& os, const std::string& s) {
  write_pod(os, static_cast<std::uint64_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string read_string(std::istream& is, std::uint64_t max_len = 1 << 24) {
  std::uint64_t n = 0;
  read_pod(is, n);
  if (n > max_len)
    throw FormatError(FormatError::Kind::truncated, "implausible string length");
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw FormatError(FormatError::Kind::truncated, "file ends mid-string");
  return s;
}
}  // namespace detail

// 64-bit FNV-1a, used to fingerprint configuration text.
inline std::uint64_t fnv1a_hash(const std::string& text) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace mpnet
