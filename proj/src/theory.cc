#include "pnr/theory.h"

#include <algorithm>
#include <bit>
#include <limits>
#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>
#include <string>

namespace pnr {

void CoherentSpec::validate() const {
  if (!(nbar >= 0.0) || !std::isfinite(nbar)) {
    throw std::domain_error("nbar must be finite and non-negative");
  }
}

ModQSpec ModQSpec::from_bits(int d, std::optional<int> n_max) {
  if (d < 1 || d > 30) {
    throw std::domain_error("bits per symbol must be in [1, 30]");
  }
  return ModQSpec{1 << d, n_max};
}

int ModQSpec::bits() const {
  if (q < 2 || (q & (q - 1)) != 0) {
    return -1;
  }
  return std::countr_zero(static_cast<unsigned>(q));
}

void ModQSpec::validate() const {
  if (q < 2) {
    throw std::domain_error("modulus q must be >= 2");
  }
  if (n_max && *n_max < 1) {
    throw std::domain_error("n_max must be positive");
  }
}

namespace {

void check_nbar(double nbar) { CoherentSpec{nbar}.validate(); }

}  // namespace

double log_poisson_pmf(double nbar, std::uint64_t n) {
  check_nbar(nbar);
  if (nbar == 0.0) {
    return n == 0 ? 0.0 : -std::numeric_limits<double>::infinity();
  }
  double dn = static_cast<double>(n);
  return -nbar + dn * std::log(nbar) - std::lgamma(dn + 1.0);
}

double poisson_pmf(double nbar, std::uint64_t n) { return std::exp(log_poisson_pmf(nbar, n)); }

std::uint64_t summation_cutoff(double nbar) {
  check_nbar(nbar);
  return static_cast<std::uint64_t>(std::floor(nbar + 20.0 * std::sqrt(nbar) + 30.0));
}

double coherent_parity(double nbar) {
  check_nbar(nbar);
  return std::exp(-2.0 * nbar);
}

double log_coherent_parity(double nbar) {
  check_nbar(nbar);
  return -2.0 * nbar;
}

double mod4_probability_closed_form(double nbar, int k) {
  check_nbar(nbar);
  double sign = (k % 2 == 0) ? 1.0 : -1.0;
  return 0.25 * (1.0 + 2.0 * std::exp(-nbar) * std::cos(nbar - k * std::numbers::pi / 2.0) +
                 sign * std::exp(-2.0 * nbar));
}

namespace {

// P_k - 1/q for the untruncated law via the discrete Fourier transform of
// the residue distribution: (1/q) sum_{j=1}^{q-1} w^{-jk} exp(nbar (w^j - 1)).
std::vector<double> untruncated_deviations(double nbar, int q) {
  std::vector<double> dev(q, 0.0);
  for (int j = 1; j < q; ++j) {
    double theta = 2.0 * std::numbers::pi * j / q;
    double magnitude = std::exp(nbar * (std::cos(theta) - 1.0));
    double phase = nbar * std::sin(theta);
    for (int k = 0; k < q; ++k) {
      dev[k] += magnitude * std::cos(phase - theta * k);
    }
  }
  for (double& d : dev) {
    d /= q;
  }
  return dev;
}

}  // namespace

BiasReport modq_probabilities(const CoherentSpec& spec, const ModQSpec& mod) {
  spec.validate();
  mod.validate();
  const int q = mod.q;
  const std::uint64_t cutoff = summation_cutoff(spec.nbar);
  const bool truncated = mod.n_max.has_value() && static_cast<std::uint64_t>(*mod.n_max) < cutoff;

  BiasReport report;
  report.truncated = truncated;
  report.probabilities.assign(q, 0.0);
  std::vector<double> removed(q, 0.0);
  for (std::uint64_t m = 0; m <= cutoff; ++m) {
    double p = poisson_pmf(spec.nbar, m);
    if (truncated && m > static_cast<std::uint64_t>(*mod.n_max)) {
      removed[m % q] += p;
    } else {
      report.probabilities[m % q] += p;
    }
  }

  std::vector<double> dev = untruncated_deviations(spec.nbar, q);
  if (truncated) {
    double kept = 0.0;
    double removed_total = 0.0;
    for (int k = 0; k < q; ++k) {
      kept += report.probabilities[k];
      removed_total += removed[k];
    }
    for (int k = 0; k < q; ++k) {
      report.probabilities[k] /= kept;
      // S_k/K - 1/q with S_k = 1/q + dev_k - R_k and K = 1 - R.
      dev[k] = (dev[k] - (removed[k] - removed_total / q)) / kept;
    }
  }
  report.deviations = dev;
  report.max_bias = 0.0;
  for (double d : dev) {
    report.max_bias = std::max(report.max_bias, std::fabs(d));
  }
  return report;
}

double bias_trend(double nbar, int q) {
  check_nbar(nbar);
  if (q < 2) {
    throw std::domain_error("modulus q must be >= 2");
  }
  return std::exp(-4.0 * nbar / q);
}

double parity_with_environment(double nbar, double env_parity) {
  check_nbar(nbar);
  if (!(std::fabs(env_parity) <= 1.0)) {
    throw std::domain_error("environment parity must lie in [-1, 1]");
  }
  return coherent_parity(nbar) * env_parity;
}

double apply_loss(double nbar, double eta) {
  check_nbar(nbar);
  if (!(eta >= 0.0 && eta <= 1.0)) {
    throw std::domain_error("transmission eta must lie in [0, 1]");
  }
  return eta * nbar;
}

std::vector<double> phase_averaged_distribution(double nbar, int phases, int n_max) {
  check_nbar(nbar);
  if (phases < 1 || n_max < 0) {
    throw std::domain_error("phases must be positive and n_max non-negative");
  }
  std::vector<double> pmf(n_max + 1, 0.0);
  const double r = std::sqrt(nbar);
  for (int j = 0; j < phases; ++j) {
    const double phi = 2.0 * std::numbers::pi * j / phases;
    for (int n = 0; n <= n_max; ++n) {
      // <n|r e^{i phi}> = e^{-r^2/2} r^n e^{i n phi} / sqrt(n!)
      double log_mag = (nbar == 0.0)
                           ? (n == 0 ? 0.0 : -std::numeric_limits<double>::infinity())
                           : -0.5 * nbar + n * std::log(r) - 0.5 * std::lgamma(n + 1.0);
      std::complex<double> amp = std::polar(std::exp(log_mag), n * phi);
      pmf[n] += std::norm(amp);
    }
  }
  for (double& p : pmf) {
    p /= phases;
  }
  return pmf;
}

double phase_mixture_parity(double nbar, int phases) {
  const int n_max = static_cast<int>(summation_cutoff(nbar));
  std::vector<double> pmf = phase_averaged_distribution(nbar, phases, n_max);
  for (int n = 0; n <= n_max; ++n) {
    if (std::fabs(pmf[n] - poisson_pmf(nbar, n)) > 1e-12) {
      throw std::logic_error("phase-averaged distribution departs from Poisson at n=" +
                             std::to_string(n));
    }
  }
  return coherent_parity(nbar);
}

}  // namespace pnr
