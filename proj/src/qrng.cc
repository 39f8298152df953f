#include "pnr/qrng.h"

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

#include "pnr/io_util.h"

namespace pnr {
namespace {

void check_d(int d) {
  if (d < 1 || d > kMaxBitsPerEvent) throw std::invalid_argument("bits per event must be in [1, 5]");
}

}  // namespace

std::vector<std::uint8_t> bits_from_count(std::uint64_t n, int d) {
  check_d(d);
  std::vector<std::uint8_t> out(d);
  for (int i = 0; i < d; ++i) out[i] = (n >> (d - 1 - i)) & 1;
  return out;
}

BitStream::BitStream(int d) : d_(d) { check_d(d); }

void BitStream::append_bit(bool bit) {
  if ((n_bits_ & 7) == 0) bytes_.push_back(0);
  if (bit) bytes_.back() |= static_cast<std::uint8_t>(0x80 >> (n_bits_ & 7));
  ++n_bits_;
}

void BitStream::append_word(std::uint32_t word) {
  for (int i = d_ - 1; i >= 0; --i) append_bit((word >> i) & 1);
}

std::uint32_t BitStream::word(std::uint64_t i) const {
  std::uint32_t w = 0;
  for (int k = 0; k < d_; ++k) w = (w << 1) | bit(i * d_ + k);
  return w;
}

std::vector<std::uint8_t> BitStream::unpack(std::uint64_t first, std::uint64_t count) const {
  if (first + count > n_bits_) throw std::out_of_range("bit range past the end of the stream");
  std::vector<std::uint8_t> out(count);
  for (std::uint64_t i = 0; i < count; ++i) out[i] = bit(first + i);
  return out;
}

BitStream BitStream::from_bytes(int d, std::vector<std::uint8_t> bytes, std::uint64_t n_bits) {
  BitStream s(d);
  if (bytes.size() != (n_bits + 7) / 8) throw std::invalid_argument("byte count does not match bit count");
  s.bytes_ = std::move(bytes);
  s.n_bits_ = n_bits;
  return s;
}

BitStream generate(std::span<const CountRecord> records, int d, int n_cap) {
  BitStream s(d);
  std::uint32_t mask = (1u << d) - 1;
  for (const auto& r : records) {
    if (r.total.is_resolved() && *r.total.photons <= n_cap) {
      s.append_word(static_cast<std::uint32_t>(*r.total.photons) & mask);
      ++s.n_events_used;
    } else {
      ++s.n_discarded;
    }
  }
  return s;
}

BitStream generate_from_totals(std::span<const std::uint64_t> totals, int d) {
  BitStream s(d);
  std::uint32_t mask = (1u << d) - 1;
  for (auto t : totals) s.append_word(static_cast<std::uint32_t>(t & mask));
  s.n_events_used = totals.size();
  return s;
}

EmpiricalBias empirical_bias(const BitStream& stream, int q) {
  int qd = ModQSpec{q}.bits();
  if (qd < 1 || qd > stream.d()) throw std::invalid_argument("q must be a power of two no larger than 2^d");
  EmpiricalBias r;
  r.q = q;
  r.symbols = stream.words();
  if (r.symbols < static_cast<std::uint64_t>(q) * 100) {
    throw InsufficientDataError("need at least " + std::to_string(q * 100) + " symbols for mod-" + std::to_string(q));
  }
  std::vector<std::uint64_t> counts(q, 0);
  for (std::uint64_t i = 0; i < r.symbols; ++i) ++counts[stream.word(i) & (q - 1)];
  double n = static_cast<double>(r.symbols);
  for (int k = 0; k < q; ++k) {
    double f = counts[k] / n;
    r.frequencies.push_back(f);
    r.deviations.push_back(f - 1.0 / q);
    r.errors.push_back(std::sqrt(f * (1.0 - f) / n));
    if (std::abs(r.deviations.back()) >= r.max_bias) {
      r.max_bias = std::abs(r.deviations.back());
      // Use the null-hypothesis spread so a zero-count residue still gets a scale.
      r.max_bias_sigma = std::sqrt((1.0 / q) * (1.0 - 1.0 / q) / n);
    }
  }
  return r;
}

void write_bitstream(std::ostream& out, const BitStream& stream) {
  out.write("PNRB", 4);
  write_le<std::uint16_t>(out, kBitFileVersion);
  write_le<std::uint8_t>(out, static_cast<std::uint8_t>(stream.d()));
  write_le<std::uint8_t>(out, static_cast<std::uint8_t>((8 - stream.size() % 8) % 8));
  write_le<std::uint64_t>(out, stream.n_events_used);
  out.write(reinterpret_cast<const char*>(stream.bytes().data()), static_cast<std::streamsize>(stream.bytes().size()));
}

BitStream read_bitstream(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::string(magic, 4) != "PNRB") throw FormatError("not a bit file");
  auto version = read_le<std::uint16_t>(in);
  if (version != kBitFileVersion) throw FormatError("unsupported bit file version " + std::to_string(version));
  int d = read_le<std::uint8_t>(in);
  int pad = read_le<std::uint8_t>(in);
  auto events = read_le<std::uint64_t>(in);
  if (d < 1 || d > kMaxBitsPerEvent || pad > 7) throw FormatError("corrupt bit file header");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.empty() && pad != 0) throw FormatError("corrupt bit file header");
  std::uint64_t n_bits = bytes.size() * 8 - pad;
  if (n_bits != events * d) {
    throw FormatError("bit file length disagrees with its event count");
  }
  if (!bytes.empty() && pad > 0 && (bytes.back() & ((1u << pad) - 1)) != 0) throw FormatError("non-zero padding bits");
  auto s = BitStream::from_bytes(d, std::move(bytes), n_bits);
  s.n_events_used = events;
  return s;
}

void save_bitstream(const std::filesystem::path& path, const BitStream& stream, const nlohmann::json& provenance) {
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    write_bitstream(out, stream);
  }
  nlohmann::json side = provenance;
  side["d"] = stream.d();
  side["bits"] = stream.size();
  side["n_events_used"] = stream.n_events_used;
  side["n_discarded"] = stream.n_discarded;
  if (stream.meta.nbar) side["nbar"] = *stream.meta.nbar;
  if (stream.meta.seed) side["seed"] = *stream.meta.seed;
  if (stream.meta.input_hash) side["input_hash"] = *stream.meta.input_hash;
  write_text_file(path.string() + ".json", side.dump(2) + "\n");
}

BitStream load_bitstream(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return read_bitstream(in);
}

}  // namespace pnr
