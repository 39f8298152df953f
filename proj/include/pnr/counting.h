#ifndef PNR_COUNTING_H
#define PNR_COUNTING_H

// Per-event totals across the three channels, the empirical photon-number
// distribution and its parity.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "json.hpp"
#include "pnr/calibrate.h"
#include "pnr/source.h"

namespace pnr {

inline constexpr int kDefaultCountCap = 100;

class EmptyDataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Sum of the three channels, or the first channel's discard reason.
Assignment total_count(std::span<const Assignment, 3> channels);

struct CountRecord {
  std::uint64_t event_id = 0;
  std::array<Assignment, 3> channels;
  Assignment total;  // resolved iff every channel is

  friend bool operator==(const CountRecord&, const CountRecord&) = default;
};

CountRecord make_record(std::uint64_t event_id, const std::array<Assignment, 3>& channels);
/// Exact counts, as from a perfect detector.
CountRecord record_from_sample(const EventSample& sample);
/// Channel areas through their calibrations; a missing area is discarded.
CountRecord record_from_areas(std::uint64_t event_id, const std::array<std::optional<double>, 3>& areas,
                              std::span<const Calibration, 3> calibrations);

/// Histogram of resolved totals. Totals above n_cap are counted apart and
/// take no part in the distribution or the parity. Merging is associative
/// and commutative.
struct Tally {
  explicit Tally(int n_cap = kDefaultCountCap);

  void add(const CountRecord& record);
  void add_total(int total);
  void merge(const Tally& other);

  int n_cap;
  std::vector<std::uint64_t> counts;  // index 0..n_cap
  std::uint64_t over_cap = 0;
  std::array<std::uint64_t, 3> discarded{};  // by DiscardReason
  std::uint64_t resolved() const;
  std::uint64_t n_discarded() const;

  friend bool operator==(const Tally&, const Tally&) = default;
};

struct Distribution {
  std::vector<double> pmf;
  std::vector<double> errors;  // one standard deviation
  std::uint64_t n_events = 0;  // events in the pmf
  std::uint64_t n_discarded = 0;  // discards plus totals above the cap
};

/// Probability that one event's total is misassigned, from the per-channel
/// error rates weighted by each channel's component weights.
double misclassification_rate(std::span<const Calibration> calibrations);

/// Errors add in quadrature the binomial sqrt(p(1-p)/N) and a first-order
/// misclassification term: with total misassignment rate E spread evenly to
/// both neighbours, dp(m) = E/2 (p(m-1) + p(m+1)) - E p(m).
Distribution empirical_distribution(const Tally& tally, double misclassification = 0.0);
Distribution empirical_distribution(std::span<const CountRecord> records, int n_cap = kDefaultCountCap,
                                    double misclassification = 0.0);

struct ParityEstimate {
  double value = 0.0;
  double std_error = 0.0;
};

/// (N_even - N_odd) / N with std error sqrt((1 - value^2) / N).
ParityEstimate parity_estimate(const Tally& tally);
ParityEstimate parity_estimate(std::span<const CountRecord> records, int n_cap = kDefaultCountCap);

nlohmann::json distribution_to_json(const Distribution& dist, const ParityEstimate& parity);
/// Columns n,probability,error.
void write_distribution_csv(std::ostream& out, const Distribution& dist);

// Record CSV: event_id,n_a,n_b,n_c,total with each cell a number or a discard
// reason name.
void write_records_csv(std::ostream& out, std::span<const CountRecord> records);
std::vector<CountRecord> read_records_csv(std::istream& in);

}  // namespace pnr

#endif
