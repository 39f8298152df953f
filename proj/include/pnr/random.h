#ifndef PNR_RANDOM_H
#define PNR_RANDOM_H

#include <cstdint>
#include <random>

namespace pnr {

// Stream identifiers. A generator is keyed by (seed, stream, index) so that
// every event, pulse and test draw is reproducible without replaying the
// draws that came before it.
namespace streams {
inline constexpr std::uint64_t kEvents = 1;
inline constexpr std::uint64_t kPulseA = 2;  // kPulseA + channel index
inline constexpr std::uint64_t kLabeledPulses = 16;
inline constexpr std::uint64_t kUniformBits = 32;
}  // namespace streams

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  return mix64(mix64(mix64(seed) ^ stream) ^ index);
}

/// Deterministic generator built on std::mt19937_64.
///
/// The variate algorithms are fixed here rather than taken from <random>
/// distributions, whose output is implementation-defined:
///  - uniform(): top 53 bits of one engine word, offset by half an ulp, in (0,1).
///  - normal(): Marsaglia polar method; the second variate of each accepted
///    pair is cached and returned by the next call.
///  - poisson(): sequential-search inversion for mean < 10, Hormann's PTRS
///    transformed rejection otherwise.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index)
      : engine_(derive_seed(seed, stream, index)) {}

  std::uint64_t next_u64() { return engine_(); }
  double uniform() { return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53; }
  double normal();
  std::uint64_t poisson(double mean);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace pnr

#endif
