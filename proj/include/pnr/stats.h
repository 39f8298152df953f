#ifndef PNR_STATS_H
#define PNR_STATS_H

// Small hypothesis-testing helpers shared by the counting checks, the
// acceptance harness and the figure tables.

#include <cstdint>
#include <span>

namespace pnr {

struct ChiSquareResult {
  double statistic = 0.0;
  int dof = 0;
  double p_value = 1.0;
};

/// Upper tail of the chi-square distribution.
double chi_square_sf(double statistic, int dof);

/// Pearson goodness of fit of `observed` against `probabilities` (which
/// should sum to 1 over the same support). Adjacent cells are pooled from the
/// outside in until each pooled cell expects at least `min_expected`
/// entries; `fitted_params` is subtracted from the degrees of freedom.
ChiSquareResult chi_square_gof(std::span<const std::uint64_t> observed, std::span<const double> probabilities,
                               int fitted_params = 0, double min_expected = 5.0);

/// Homogeneity test of two count vectors over the same cells, pooling cells
/// whose combined count is small.
ChiSquareResult chi_square_two_sample(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b,
                                      double min_expected = 5.0);

/// Kolmogorov-Smirnov test of `samples` against U(0,1); returns the p-value.
double ks_uniform_p_value(std::span<const double> samples);

double pearson_correlation(std::span<const double> x, std::span<const double> y);

}  // namespace pnr

#endif
