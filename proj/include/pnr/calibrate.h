#ifndef PNR_CALIBRATE_H
#define PNR_CALIBRATE_H

// Photon-number calibration of one channel from its pulse-area histogram:
// a Gaussian mixture fit, bin edges where neighbouring unit-height Gaussians
// cross, and optional post-selection windows of +-window_frac sigma_n.

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace pnr {

struct AreaHistogram {
  std::vector<double> bin_edges;  // ascending, size = counts.size() + 1
  std::vector<std::uint64_t> counts;
  std::uint64_t total = 0;

  /// Uniform binning of `areas` over [lo, hi). By default the first bin is
  /// centred on min(0, min area) and the last one covers the largest area.
  static AreaHistogram from_areas(std::span<const double> areas, std::size_t bins,
                                  std::optional<double> lo = std::nullopt, std::optional<double> hi = std::nullopt);
  std::size_t size() const { return counts.size(); }
  double center(std::size_t i) const { return 0.5 * (bin_edges[i] + bin_edges[i + 1]); }
  double width(std::size_t i) const { return bin_edges[i + 1] - bin_edges[i]; }
  void validate() const;
};

struct GaussComponent {
  int n = 0;  // photon number
  double mu = 0.0;
  double sigma = 1.0;
  double weight = 0.0;  // fraction of all histogram entries
};

class FitError : public std::runtime_error {
 public:
  FitError(const std::string& what, int iterations, double last_change)
      : std::runtime_error(what), iterations(iterations), last_change(last_change) {}
  int iterations;
  double last_change;
};

struct FitOptions {
  std::size_t min_peak_events = 3;     // raw entries within +-1.5 sigma of a peak
  int max_iterations = 5000;           // EM iterations before FitError
  double tolerance = 1e-10;            // relative log-likelihood change
  bool polish = true;                  // joint Levenberg-Marquardt refinement
  int polish_iterations = 60;
  double sparse_events = 200.0;        // below this, mu/sigma follow the neighbours' trend
  double sigma_prior_events = 20.0;    // pseudo-counts pulling each variance toward the sigma(mu) trend
  std::optional<int> first_photon_number;
};

struct FitResult {
  std::vector<GaussComponent> components;  // ordered by mu
  double r_squared = 0.0;
  int em_iterations = 0;
  int polish_iterations = 0;
  std::vector<std::string> warnings;
};

/// Fits at most k_max (<= 38) Gaussians: peak finding on a smoothed
/// histogram, EM on the binned data, then a joint least-squares polish.
/// Photon numbers are inferred from the peak spacing unless given.
FitResult fit_mixture(const AreaHistogram& hist, std::size_t k_max, const FitOptions& options = {});

/// Expected entries per bin of `hist` under the mixture.
std::vector<double> mixture_bin_counts(const AreaHistogram& hist, std::span<const GaussComponent> components);
double r_squared(const AreaHistogram& hist, std::span<const GaussComponent> components);

enum class EdgeRule {
  kPeakNormalized,  // unit-height Gaussians: (x-mu1)/s1 = (mu2-x)/s2
  kAreaNormalized,  // unit-area densities; falls back to kPeakNormalized without a root in (mu1, mu2)
};

class ResolvabilityError : public std::runtime_error {
 public:
  ResolvabilityError(const std::string& what, std::size_t pair) : std::runtime_error(what), pair(pair) {}
  std::size_t pair;  // index of the lower component of the offending pair
};

/// One edge per adjacent pair, strictly inside (mu_k, mu_{k+1}). Throws
/// ResolvabilityError when mu2 - mu1 < (sigma1 + sigma2) / 2.
std::vector<double> place_edges(std::span<const GaussComponent> components, EdgeRule rule = EdgeRule::kPeakNormalized);

/// Height of the unit-peak Gaussian at x.
double normalized_gaussian(double x, const GaussComponent& c);

struct Calibration {
  std::vector<GaussComponent> components;
  std::vector<double> edges;
  double overflow_edge = 0.0;
  std::optional<double> window_frac;

  void validate() const;
};

struct CalibrationOptions {
  double overlap_threshold = 0.25;  // unit-peak Gaussian height at an edge beyond which bins stop
  std::optional<double> window_frac;
  EdgeRule rule = EdgeRule::kPeakNormalized;
};

/// Edges for the resolvable prefix of `components`. The first pair whose
/// edge overlap exceeds the threshold (or that is unresolvable) ends the
/// calibration; its edge becomes overflow_edge. Otherwise overflow_edge sits
/// as far above the last mean as the last edge sits below it.
Calibration build_calibration(std::vector<GaussComponent> components, const CalibrationOptions& options = {});

enum class DiscardReason : std::uint8_t { kOverflow, kOutsideWindow, kMissing };
const char* discard_reason_name(DiscardReason r);

struct Assignment {
  std::optional<int> photons;
  DiscardReason reason = DiscardReason::kMissing;  // meaningful only when !photons

  static Assignment resolved(int n) { return Assignment{n, DiscardReason::kMissing}; }
  static Assignment discard(DiscardReason r) { return Assignment{std::nullopt, r}; }
  bool is_resolved() const { return photons.has_value(); }
  friend bool operator==(const Assignment&, const Assignment&) = default;
};

/// Area on an edge goes to the lower bin; area >= overflow_edge overflows.
Assignment assign(double area, const Calibration& cal);

/// erf(f / sqrt 2); infinity keeps everything.
double window_keep_fraction(double window_frac);

struct ErrorRate {
  int n = 0;
  double error = 0.0;  // P(counted as m != n | true n, counted)
  double confidence = 1.0;
};

/// Misassignment probabilities from the Gaussian model, restricted to the
/// windows when the calibration has them. Overflow/window discards are not
/// counted as errors.
std::vector<ErrorRate> error_rates(const Calibration& cal);

struct ErrorTableRow {
  int n = 0;
  double error_all = 0.0;
  double error_2sigma = 0.0;  // window +-1 sigma
  double error_1sigma = 0.0;  // window +-sigma/2
};
std::vector<ErrorTableRow> error_table(const Calibration& cal);

/// Per-photon-number mean and spread of labelled areas. sigma is floored at
/// `sigma_floor` (point masses such as zero-area vacuum events).
std::vector<GaussComponent> components_from_labeled(std::span<const double> areas, std::span<const int> labels,
                                                    double sigma_floor = 1.0);

inline constexpr int kCalibrationSchemaVersion = 1;
nlohmann::json calibration_to_json(const Calibration& cal);
Calibration calibration_from_json(const nlohmann::json& j);

}  // namespace pnr

#endif
