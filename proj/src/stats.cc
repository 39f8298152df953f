#include "pnr/stats.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

namespace pnr {
namespace {

// Pools cells [lo, hi) so every group's expectation reaches min_expected.
// Groups grow from both ends toward the mode.
std::vector<std::pair<std::size_t, std::size_t>> pool_cells(std::span<const double> expected, double min_expected) {
  std::vector<std::pair<std::size_t, std::size_t>> groups;
  std::size_t n = expected.size();
  if (n == 0) return groups;
  std::size_t mode = static_cast<std::size_t>(std::max_element(expected.begin(), expected.end()) - expected.begin());
  std::vector<std::pair<std::size_t, std::size_t>> left, right;
  std::size_t start = 0;
  double acc = 0.0;
  for (std::size_t i = 0; i < mode; ++i) {
    acc += expected[i];
    if (acc >= min_expected) {
      left.push_back({start, i + 1});
      start = i + 1;
      acc = 0.0;
    }
  }
  std::size_t mid_lo = start;
  std::size_t end = n;
  acc = 0.0;
  for (std::size_t i = n; i-- > mode + 1;) {
    acc += expected[i];
    if (acc >= min_expected) {
      right.push_back({i, end});
      end = i;
      acc = 0.0;
    }
  }
  groups = left;
  groups.push_back({mid_lo, end});
  for (auto it = right.rbegin(); it != right.rend(); ++it) groups.push_back(*it);
  return groups;
}

}  // namespace

double chi_square_sf(double statistic, int dof) {
  if (dof < 1) throw std::domain_error("chi-square needs at least one degree of freedom");
  if (statistic <= 0.0) return 1.0;
  return boost::math::gamma_q(0.5 * dof, 0.5 * statistic);
}

ChiSquareResult chi_square_gof(std::span<const std::uint64_t> observed, std::span<const double> probabilities,
                               int fitted_params, double min_expected) {
  if (observed.size() != probabilities.size()) throw std::invalid_argument("observed and expected sizes differ");
  double n = 0.0;
  for (auto c : observed) n += static_cast<double>(c);
  if (n == 0.0) throw std::invalid_argument("no observations");
  double psum = std::accumulate(probabilities.begin(), probabilities.end(), 0.0);
  std::vector<double> expected(probabilities.size());
  for (std::size_t i = 0; i < expected.size(); ++i) expected[i] = n * probabilities[i] / psum;
  auto groups = pool_cells(expected, min_expected);
  ChiSquareResult r;
  for (auto [lo, hi] : groups) {
    double o = 0.0, e = 0.0;
    for (std::size_t i = lo; i < hi; ++i) {
      o += static_cast<double>(observed[i]);
      e += expected[i];
    }
    if (e > 0.0) r.statistic += (o - e) * (o - e) / e;
  }
  r.dof = static_cast<int>(groups.size()) - 1 - fitted_params;
  r.p_value = r.dof >= 1 ? chi_square_sf(r.statistic, r.dof) : 1.0;
  return r;
}

ChiSquareResult chi_square_two_sample(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b,
                                      double min_expected) {
  if (a.size() != b.size()) throw std::invalid_argument("samples cover different cells");
  double na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    na += static_cast<double>(a[i]);
    nb += static_cast<double>(b[i]);
  }
  if (na == 0.0 || nb == 0.0) throw std::invalid_argument("empty sample");
  // Pool on the smaller sample's expectation under the combined proportions.
  std::vector<double> expected(a.size());
  double small = std::min(na, nb);
  for (std::size_t i = 0; i < a.size(); ++i) {
    expected[i] = small * static_cast<double>(a[i] + b[i]) / (na + nb);
  }
  auto groups = pool_cells(expected, min_expected);
  ChiSquareResult r;
  for (auto [lo, hi] : groups) {
    double oa = 0.0, ob = 0.0;
    for (std::size_t i = lo; i < hi; ++i) {
      oa += static_cast<double>(a[i]);
      ob += static_cast<double>(b[i]);
    }
    double p = (oa + ob) / (na + nb);
    if (p <= 0.0) continue;
    double ea = na * p, eb = nb * p;
    r.statistic += (oa - ea) * (oa - ea) / ea + (ob - eb) * (ob - eb) / eb;
  }
  r.dof = static_cast<int>(groups.size()) - 1;
  r.p_value = r.dof >= 1 ? chi_square_sf(r.statistic, r.dof) : 1.0;
  return r;
}

double ks_uniform_p_value(std::span<const double> samples) {
  if (samples.empty()) throw std::invalid_argument("KS test needs samples");
  std::vector<double> x(samples.begin(), samples.end());
  std::sort(x.begin(), x.end());
  double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double v = std::clamp(x[i], 0.0, 1.0);
    d = std::max({d, (i + 1) / n - v, v - i / n});
  }
  // Asymptotic Kolmogorov distribution with Stephens' small-sample scaling.
  double sn = std::sqrt(n);
  double lambda = (sn + 0.12 + 0.11 / sn) * d;
  if (lambda < 0.2) return 1.0;
  double sum = 0.0;
  for (int k = 1; k <= 100; ++k) {
    double term = std::exp(-2.0 * k * k * lambda * lambda);
    sum += (k % 2 == 1 ? 2.0 : -2.0) * term;
    if (term < 1e-16) break;
  }
  return std::clamp(sum, 0.0, 1.0);
}

double pearson_correlation(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("correlation needs paired samples");
  double n = static_cast<double>(x.size());
  double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace pnr
