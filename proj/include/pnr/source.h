#ifndef PNR_SOURCE_H
#define PNR_SOURCE_H

// Pulsed coherent source split three ways by two beamsplitters, with a
// quantum efficiency per detector path, and per-event photon-number draws.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace pnr {

/// Amplitude coefficients of the two beamsplitters. Beamsplitter 1 reflects
/// into channel b; its transmitted port is split by beamsplitter 2 into
/// channel a (transmitted) and channel c (reflected).
struct SplitterNetwork {
  double r1 = 0.0, t1 = 1.0, r2 = 0.0, t2 = 1.0;

  /// Builds the network from intensity reflectances r1^2 and r2^2.
  static SplitterNetwork from_reflectances(double r1_sq, double r2_sq);
  /// Even three-way split: r1^2 = 1/3, r2^2 = 1/2.
  static SplitterNetwork balanced();
  void validate() const;
};

enum class Channel : std::uint8_t { kA = 0, kB = 1, kC = 2 };
char channel_label(Channel c);
Channel channel_from_label(char label);

struct ChannelModel {
  Channel label = Channel::kA;
  double efficiency = 1.0;
  double mean = 0.0;  // |beta_k|^2
};

using ChannelTriple = std::array<ChannelModel, 3>;

struct EventSample {
  std::uint64_t event_id = 0;
  std::array<std::uint32_t, 3> counts{};

  std::uint32_t total() const { return counts[0] + counts[1] + counts[2]; }
  friend bool operator==(const EventSample&, const EventSample&) = default;
};

ChannelTriple split_coherent(double nbar, const SplitterNetwork& net, const std::array<double, 3>& etas);

/// Mean of the summed count: |beta_a|^2 + |beta_b|^2 + |beta_c|^2.
double effective_nbar(const ChannelTriple& channels);

struct SamplingOptions {
  // Draw a uniform optical phase per event and carry it through the complex
  // amplitudes. Number statistics do not depend on it.
  bool phase_jitter = false;
};

/// Counts for one event. Depends only on (channels, seed, event_id, options).
EventSample sample_event(const ChannelTriple& channels, std::uint64_t seed, std::uint64_t event_id,
                         const SamplingOptions& options = {});

/// Events first_id .. first_id+count-1.
std::vector<EventSample> sample_events(const ChannelTriple& channels, std::uint64_t count, std::uint64_t seed,
                                       std::uint64_t first_id = 0, const SamplingOptions& options = {});

// Event files. CSV has the header "event_id,n_a,n_b,n_c". The binary form is
// a headerless sequence of 14-byte little-endian records: u64 event_id then
// three u16 counts.
void write_events_csv(std::ostream& out, std::span<const EventSample> events);
std::vector<EventSample> read_events_csv(std::istream& in);
void write_events_binary(std::ostream& out, std::span<const EventSample> events);
std::vector<EventSample> read_events_binary(std::istream& in);

}  // namespace pnr

#endif
