#ifndef PNR_IO_UTIL_H
#define PNR_IO_UTIL_H

#include <bit>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

namespace pnr {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
void write_le(std::ostream& out, T value) {
  static_assert(std::is_integral_v<T> || std::is_floating_point_v<T>);
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                               std::conditional_t<sizeof(T) == 4, std::uint32_t,
                                                  std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint8_t>>>;
  U bits = std::bit_cast<U>(value);
  char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    buf[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  }
  out.write(buf, sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                               std::conditional_t<sizeof(T) == 4, std::uint32_t,
                                                  std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint8_t>>>;
  unsigned char buf[sizeof(T)];
  in.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (in.gcount() != static_cast<std::streamsize>(sizeof(T))) {
    throw FormatError("unexpected end of binary data");
  }
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bits |= static_cast<U>(buf[i]) << (8 * i);
  }
  return std::bit_cast<T>(bits);
}

std::uint64_t parse_u64(std::string_view s);
std::int64_t parse_i64(std::string_view s);
double parse_double(std::string_view s);

/// Minimal CSV reader for the comma-separated, unquoted tables this project
/// writes. The header row must match `expected_header` exactly.
class CsvReader {
 public:
  CsvReader(std::istream& in, std::vector<std::string> expected_header);
  std::optional<std::vector<std::string>> next();
  std::size_t line() const { return line_; }

 private:
  std::istream& in_;
  std::size_t columns_;
  std::size_t line_ = 0;
};

/// 64-bit FNV-1a, used for provenance hashes of configs and input files.
std::uint64_t fnv1a64(std::string_view data);
std::string hex64(std::uint64_t v);
std::uint64_t hash_file(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace pnr

#endif
