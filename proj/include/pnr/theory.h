#ifndef PNR_THEORY_H
#define PNR_THEORY_H

// Closed-form photon-number statistics of coherent light. Everything here is
// a pure function; the simulated pipelines are checked against these values.

#include <cstdint>
#include <optional>
#include <vector>

namespace pnr {

struct CoherentSpec {
  double nbar = 0.0;   // mean photon number |alpha|^2
  double phase = 0.0;  // carried, never affects number statistics

  void validate() const;
};

/// Residue binning modulo q. `n_max` is the largest resolvable photon number;
/// std::nullopt means the distribution is not truncated.
struct ModQSpec {
  int q = 2;
  std::optional<int> n_max = 100;

  static ModQSpec from_bits(int d, std::optional<int> n_max = 100);
  /// log2(q) when q is a power of two, otherwise -1.
  int bits() const;
  void validate() const;
};

struct BiasReport {
  std::vector<double> probabilities;
  // P_k - 1/q, evaluated without the cancellation that limits
  // `probabilities` to ~1e-16 absolute accuracy.
  std::vector<double> deviations;
  double max_bias = 0.0;
  bool truncated = false;
};

double log_poisson_pmf(double nbar, std::uint64_t n);
double poisson_pmf(double nbar, std::uint64_t n);

/// Number of terms summed when a distribution is treated as unbounded:
/// floor(nbar + 20 sqrt(nbar) + 30). The neglected tail is below 1e-40 for
/// nbar <= 100.
std::uint64_t summation_cutoff(double nbar);

/// <(-1)^n> = exp(-2 nbar). Underflows to 0 for nbar > ~372; use
/// log_coherent_parity for the exponent.
double coherent_parity(double nbar);
double log_coherent_parity(double nbar);

BiasReport modq_probabilities(const CoherentSpec& spec, const ModQSpec& mod);

/// Closed form of the mod-4 residue probabilities (no truncation).
double mod4_probability_closed_form(double nbar, int k);

/// exp(-4 nbar / q): rough scale of the dominant residue bias.
double bias_trend(double nbar, int q);

/// Parity of the detected light when an independent environment with parity
/// `env_parity` is mixed in.
double parity_with_environment(double nbar, double env_parity);

/// Mean photon number after a loss channel of transmission eta.
double apply_loss(double nbar, double eta);

/// Photon-number distribution of the uniform phase mixture of |r e^{i phi}>,
/// averaged over `phases` equally spaced phases, for n = 0..n_max.
std::vector<double> phase_averaged_distribution(double nbar, int phases, int n_max);

/// Parity of the phase-randomized state. The averaged number distribution is
/// computed numerically and must match the Poisson law within 1e-12; the
/// returned parity is then exp(-2 nbar).
double phase_mixture_parity(double nbar, int phases = 64);

}  // namespace pnr

#endif
