#ifndef PNR_FIGURES_H
#define PNR_FIGURES_H

// Plottable tables for the detector, distribution, parity, randomness and
// residual-bias figures. Nothing is rendered.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "pnr/detector.h"

namespace pnr {

class MissingReportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Table {
  std::string name;  // file stem
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  void add_row(std::vector<std::string> row);
  void write_csv(std::ostream& out) const;
};

std::string format_number(double v);

/// Noiseless and one noisy trace per photon number, time in us.
Table pulse_traces(const WaveformParams& params, std::span<const int> photon_numbers, std::uint64_t seed,
                   int stride = 4);
/// Area histogram, fitted mixture and the bin edges, from a
/// calibration report.
Table area_histogram(const nlohmann::json& calibration_report);
/// Measured distribution against Poisson at the report's effective nbar.
Table distribution_table(const nlohmann::json& distribution_report);
/// Parity of analytically sampled events against exp(-2 nbar).
Table parity_scan(std::span<const double> nbars, std::uint64_t events, std::uint64_t seed);
/// Pass proportion per test with its Wilson bounds.
Table proportion_table(const nlohmann::json& randomness_report);
/// Assignment error per photon number without a window and with
/// +-sigma and +-sigma/2 windows.
Table error_table_figure(const nlohmann::json& calibration_report);
/// Truncated max residue bias for d = 1..5 over an nbar grid.
Table residual_bias(std::span<const double> nbars, int n_max = 100);

struct FigureOptions {
  std::vector<double> parity_nbars;  // empty: skip the inset scan
  std::uint64_t parity_events = 1000000;
  std::uint64_t seed = 1;
};

/// Writes every table whose inputs exist in `run_dir` (plus the theory-only
/// residual-bias table) into `out_dir`; returns the file names written. Throws
/// MissingReportError when the run directory holds no reports at all.
std::vector<std::string> write_figures(const std::filesystem::path& run_dir, const std::filesystem::path& out_dir,
                                       const FigureOptions& options);

}  // namespace pnr

#endif
