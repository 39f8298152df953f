#include "pnr/source.h"

#include <cmath>
#include <complex>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "pnr/io_util.h"
#include "pnr/random.h"

namespace pnr {

namespace {
constexpr double kNormTolerance = 1e-12;
}

SplitterNetwork SplitterNetwork::from_reflectances(double r1_sq, double r2_sq) {
  if (!(r1_sq >= 0.0 && r1_sq <= 1.0 && r2_sq >= 0.0 && r2_sq <= 1.0)) {
    throw std::invalid_argument("beamsplitter reflectances must lie in [0, 1]");
  }
  return SplitterNetwork{std::sqrt(r1_sq), std::sqrt(1.0 - r1_sq), std::sqrt(r2_sq), std::sqrt(1.0 - r2_sq)};
}

SplitterNetwork SplitterNetwork::balanced() { return from_reflectances(1.0 / 3.0, 0.5); }

void SplitterNetwork::validate() const {
  for (double c : {r1, t1, r2, t2}) {
    if (!(c >= 0.0 && c <= 1.0)) {
      throw std::invalid_argument("beamsplitter coefficients must lie in [0, 1]");
    }
  }
  if (std::fabs(r1 * r1 + t1 * t1 - 1.0) > kNormTolerance ||
      std::fabs(r2 * r2 + t2 * t2 - 1.0) > kNormTolerance) {
    throw std::invalid_argument("beamsplitter coefficients are not normalized (r^2 + t^2 != 1)");
  }
}

char channel_label(Channel c) { return static_cast<char>('a' + static_cast<int>(c)); }

Channel channel_from_label(char label) {
  if (label < 'a' || label > 'c') {
    throw std::invalid_argument(std::string("unknown channel label '") + label + "'");
  }
  return static_cast<Channel>(label - 'a');
}

ChannelTriple split_coherent(double nbar, const SplitterNetwork& net, const std::array<double, 3>& etas) {
  if (!(nbar >= 0.0) || !std::isfinite(nbar)) {
    throw std::domain_error("nbar must be finite and non-negative");
  }
  net.validate();
  for (double eta : etas) {
    if (!(eta >= 0.0 && eta <= 1.0)) {
      throw std::domain_error("efficiencies must lie in [0, 1]");
    }
  }
  const std::array<double, 3> fraction = {
      net.t1 * net.t1 * net.t2 * net.t2,
      net.r1 * net.r1,
      net.t1 * net.t1 * net.r2 * net.r2,
  };
  ChannelTriple out;
  for (int k = 0; k < 3; ++k) {
    out[k] = ChannelModel{static_cast<Channel>(k), etas[k], etas[k] * fraction[k] * nbar};
  }
  return out;
}

double effective_nbar(const ChannelTriple& channels) {
  return channels[0].mean + channels[1].mean + channels[2].mean;
}

EventSample sample_event(const ChannelTriple& channels, std::uint64_t seed, std::uint64_t event_id,
                         const SamplingOptions& options) {
  Rng rng(seed, streams::kEvents, event_id);
  EventSample ev;
  ev.event_id = event_id;
  std::complex<double> rotation = 1.0;
  if (options.phase_jitter) {
    rotation = std::polar(1.0, 2.0 * std::numbers::pi * rng.uniform());
  }
  for (int k = 0; k < 3; ++k) {
    double mean = channels[k].mean;
    if (options.phase_jitter) {
      mean = std::norm(std::sqrt(mean) * rotation);
    }
    ev.counts[k] = static_cast<std::uint32_t>(rng.poisson(mean));
  }
  return ev;
}

std::vector<EventSample> sample_events(const ChannelTriple& channels, std::uint64_t count, std::uint64_t seed,
                                       std::uint64_t first_id, const SamplingOptions& options) {
  std::vector<EventSample> out;
  out.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    out.push_back(sample_event(channels, seed, first_id + i, options));
  }
  return out;
}

void write_events_csv(std::ostream& out, std::span<const EventSample> events) {
  out << "event_id,n_a,n_b,n_c\n";
  for (const auto& ev : events) {
    out << ev.event_id << ',' << ev.counts[0] << ',' << ev.counts[1] << ',' << ev.counts[2] << '\n';
  }
}

std::vector<EventSample> read_events_csv(std::istream& in) {
  CsvReader reader(in, {"event_id", "n_a", "n_b", "n_c"});
  std::vector<EventSample> events;
  while (auto row = reader.next()) {
    EventSample ev;
    ev.event_id = parse_u64((*row)[0]);
    for (int k = 0; k < 3; ++k) {
      ev.counts[k] = static_cast<std::uint32_t>(parse_u64((*row)[k + 1]));
    }
    events.push_back(ev);
  }
  return events;
}

void write_events_binary(std::ostream& out, std::span<const EventSample> events) {
  for (const auto& ev : events) {
    write_le<std::uint64_t>(out, ev.event_id);
    for (auto c : ev.counts) {
      if (c > 0xFFFF) {
        throw std::out_of_range("photon count does not fit the 16-bit event record");
      }
      write_le<std::uint16_t>(out, static_cast<std::uint16_t>(c));
    }
  }
}

std::vector<EventSample> read_events_binary(std::istream& in) {
  std::vector<EventSample> events;
  while (in.peek() != std::char_traits<char>::eof()) {
    EventSample ev;
    ev.event_id = read_le<std::uint64_t>(in);
    for (auto& c : ev.counts) {
      c = read_le<std::uint16_t>(in);
    }
    events.push_back(ev);
  }
  return events;
}

}  // namespace pnr
