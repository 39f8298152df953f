#ifndef PNR_QRNG_H
#define PNR_QRNG_H

// Random bits from photon totals: each resolved event contributes the d-bit
// binary word of (total mod 2^d), most significant bit first.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "pnr/counting.h"
#include "pnr/theory.h"

namespace pnr {

inline constexpr int kMaxBitsPerEvent = 5;

class InsufficientDataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Word of n mod 2^d, MSB first: (6, 3) -> {1, 1, 0}.
std::vector<std::uint8_t> bits_from_count(std::uint64_t n, int d);

struct SourceMeta {
  std::optional<double> nbar;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> input_hash;  // for ingested data
};

/// Bits packed MSB-first within bytes; the final byte is zero padded.
class BitStream {
 public:
  BitStream() = default;
  explicit BitStream(int d);

  void append_word(std::uint32_t word);
  void append_bit(bool bit);
  bool bit(std::uint64_t i) const { return (bytes_[i >> 3] >> (7 - (i & 7))) & 1; }
  std::uint64_t size() const { return n_bits_; }
  int d() const { return d_; }
  const std::vector<std::uint8_t>& bytes() const { return bytes_; }
  /// Symbol i as a d-bit word.
  std::uint32_t word(std::uint64_t i) const;
  std::uint64_t words() const { return d_ > 0 ? n_bits_ / d_ : 0; }
  /// Bits [first, first + count) unpacked to 0/1 bytes.
  std::vector<std::uint8_t> unpack(std::uint64_t first, std::uint64_t count) const;
  static BitStream from_bytes(int d, std::vector<std::uint8_t> bytes, std::uint64_t n_bits);

  std::uint64_t n_events_used = 0;
  std::uint64_t n_discarded = 0;
  SourceMeta meta;

  friend bool operator==(const BitStream& a, const BitStream& b) {
    return a.d_ == b.d_ && a.n_bits_ == b.n_bits_ && a.bytes_ == b.bytes_;
  }

 private:
  int d_ = 1;
  std::uint64_t n_bits_ = 0;
  std::vector<std::uint8_t> bytes_;
};

/// Resolved records in order; anything discarded (including totals above
/// the cap) emits nothing.
BitStream generate(std::span<const CountRecord> records, int d, int n_cap = kDefaultCountCap);
BitStream generate_from_totals(std::span<const std::uint64_t> totals, int d);

/// Residue frequencies of the stream's symbols taken mod q (q a power of two
/// up to 2^d, using the low bits of each word). deviations[k] is the
/// frequency minus 1/q and errors[k] its multinomial standard error.
struct EmpiricalBias {
  int q = 0;
  std::uint64_t symbols = 0;
  std::vector<double> frequencies;
  std::vector<double> deviations;
  std::vector<double> errors;
  double max_bias = 0.0;
  double max_bias_sigma = 0.0;  // standard error of the largest deviation
};

/// Needs at least 100 q symbols.
EmpiricalBias empirical_bias(const BitStream& stream, int q);

// Bit file: "PNRB", u16 version, u8 d, u8 pad_bits, u64 event count, then
// the packed bytes. Provenance goes to a JSON sidecar (path + ".json").
inline constexpr std::uint16_t kBitFileVersion = 1;
void write_bitstream(std::ostream& out, const BitStream& stream);
BitStream read_bitstream(std::istream& in);
void save_bitstream(const std::filesystem::path& path, const BitStream& stream, const nlohmann::json& provenance);
BitStream load_bitstream(const std::filesystem::path& path);

}  // namespace pnr

#endif
