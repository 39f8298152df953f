#include "pnr/calibrate.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>
#include <deque>

#include <Eigen/Dense>

#include "pnr/detector.h"
#include "pnr/io_util.h"

namespace pnr {
namespace {

double phi_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }
double phi_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

constexpr double kSupport = 8.0;  // component support in sigmas

// Bin range [first, last) where a component has non-negligible mass.
std::pair<std::size_t, std::size_t> support(const AreaHistogram& h, double mu, double sigma) {
  auto lo = std::upper_bound(h.bin_edges.begin(), h.bin_edges.end(), mu - kSupport * sigma);
  auto hi = std::lower_bound(h.bin_edges.begin(), h.bin_edges.end(), mu + kSupport * sigma);
  std::size_t first = lo == h.bin_edges.begin() ? 0 : static_cast<std::size_t>(lo - h.bin_edges.begin()) - 1;
  std::size_t last = std::min(static_cast<std::size_t>(hi - h.bin_edges.begin()), h.size());
  return {first, std::max(first, last)};
}

// Probability mass of N(mu, sigma) in each bin of [first, last).
void bin_masses(const AreaHistogram& h, double mu, double sigma, std::size_t first, std::size_t last,
                std::vector<double>& out) {
  out.resize(last - first);
  double prev = phi_cdf((h.bin_edges[first] - mu) / sigma);
  for (std::size_t b = first; b < last; ++b) {
    double next = phi_cdf((h.bin_edges[b + 1] - mu) / sigma);
    out[b - first] = next - prev;
    prev = next;
  }
}

std::vector<double> smooth(std::span<const std::uint64_t> counts, double sigma_bins) {
  int radius = std::max(1, static_cast<int>(std::ceil(4.0 * sigma_bins)));
  std::vector<double> kernel(2 * radius + 1);
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * i * i / (sigma_bins * sigma_bins));
  }
  double norm = std::accumulate(kernel.begin(), kernel.end(), 0.0);
  int n = static_cast<int>(counts.size());
  std::vector<double> out(counts.size(), 0.0);
  for (int i = 0; i < n; ++i) {
    if (counts[i] == 0) continue;
    for (int k = std::max(0, i - radius); k <= std::min(n - 1, i + radius); ++k) {
      out[k] += counts[i] * kernel[k - i + radius] / norm;
    }
  }
  return out;
}

std::vector<std::size_t> local_maxima(const std::vector<double>& s) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    double left = i > 0 ? s[i - 1] : 0.0;
    double right = i + 1 < s.size() ? s[i + 1] : 0.0;
    if (s[i] > 0.0 && s[i] > left && s[i] >= right) out.push_back(i);
  }
  return out;
}

// Gaussian sigma (in bins) from the width at 80% of a peak's height, with
// the smoothing kernel deconvolved. The 80% level stays clear of the valleys
// between neighbours that are only ~3.5 sigma apart.
double peak_sigma_bins(const std::vector<double>& s, std::size_t i, double smoothing) {
  double level = 0.8 * s[i];
  std::size_t l = i, r = i;
  while (l > 0 && s[l - 1] >= level) --l;
  while (r + 1 < s.size() && s[r + 1] >= level) ++r;
  double sigma = (r - l + 1) / (2.0 * std::sqrt(2.0 * std::log(1.25)));
  return std::sqrt(std::max(sigma * sigma - smoothing * smoothing, 0.25));
}

double typical_sigma_bins(const std::vector<double>& s, double smoothing) {
  auto maxima = local_maxima(s);
  std::sort(maxima.begin(), maxima.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  std::vector<double> widths;
  for (std::size_t i = 0; i < maxima.size() && widths.size() < 5; ++i) {
    widths.push_back(peak_sigma_bins(s, maxima[i], smoothing));
  }
  if (widths.empty()) return 1.0;
  std::nth_element(widths.begin(), widths.begin() + widths.size() / 2, widths.end());
  return widths[widths.size() / 2];
}

struct Peak {
  std::size_t bin;
  double height;
  double mass;
};

double window_mass(std::span<const std::uint64_t> counts, double center, double reach) {
  long a = std::max(0L, static_cast<long>(std::floor(center - reach)));
  long b = std::min(static_cast<long>(counts.size()) - 1, static_cast<long>(std::ceil(center + reach)));
  double m = 0.0;
  for (long k = a; k <= b; ++k) m += counts[k];
  return m;
}

double window_centroid(std::span<const std::uint64_t> counts, double center, double reach) {
  long a = std::max(0L, static_cast<long>(std::floor(center - reach)));
  long b = std::min(static_cast<long>(counts.size()) - 1, static_cast<long>(std::ceil(center + reach)));
  double m = 0.0, s = 0.0;
  for (long k = a; k <= b; ++k) {
    m += counts[k];
    s += counts[k] * static_cast<double>(k);
  }
  return m > 0.0 ? s / m : center;
}

std::vector<Peak> find_peaks(std::span<const std::uint64_t> counts, const FitOptions& opt, double& sigma_typ) {
  double smoothing = 2.0;
  std::vector<double> s;
  for (int pass = 0; pass < 3; ++pass) {
    s = smooth(counts, smoothing);
    sigma_typ = typical_sigma_bins(s, smoothing);
    smoothing = std::max(1.0, 0.5 * sigma_typ);
  }
  s = smooth(counts, smoothing);
  double min_sep = 1.5 * sigma_typ;

  std::vector<Peak> kept;
  for (std::size_t i : local_maxima(s)) {
    double mass = window_mass(counts, static_cast<double>(i), min_sep);
    if (mass < static_cast<double>(opt.min_peak_events)) continue;
    Peak p{i, s[i], mass};
    if (!kept.empty()) {
      Peak& last = kept.back();
      double valley = *std::min_element(s.begin() + last.bin, s.begin() + i + 1);
      bool separated = valley < 0.95 * std::min(last.height, p.height);
      if (!separated || static_cast<double>(i - last.bin) < min_sep) {
        if (p.height > last.height) last = p;
        continue;
      }
    }
    kept.push_back(p);
  }
  return kept;
}

struct Seed {
  double bin;  // position in bin units
  bool point_mass;
};

// Least-squares quadratic (or lower) through (x, y), evaluated at x0.
double poly_predict(const std::vector<double>& x, const std::vector<double>& y, double x0) {
  int degree = std::min<int>(2, static_cast<int>(x.size()) - 1);
  Eigen::MatrixXd a(x.size(), degree + 1);
  Eigen::VectorXd b(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (int d = 0; d <= degree; ++d) a(i, d) = std::pow(x[i] - x0, d);
    b[i] = y[i];
  }
  Eigen::VectorXd coef = a.colPivHouseholderQr().solve(b);
  return coef[0];
}

// Initial component positions. Well-populated peaks form an evenly spaced
// chain (spurious neighbours dropped, missed ones interpolated); the chain is
// then extended outward one spacing at a time as long as the histogram holds
// events there. A spike confined to the first bin is the vacuum point mass.
std::vector<Seed> seed_components(const AreaHistogram& h, const FitOptions& opt, double& sigma_typ) {
  std::vector<std::uint64_t> counts = h.counts;
  std::vector<Seed> seeds;
  std::uint64_t beside = std::max(counts.size() > 1 ? counts[1] : 0, counts.size() > 2 ? counts[2] : 0);
  if (counts[0] >= opt.min_peak_events && counts[0] > 20 * (beside + 1)) {
    seeds.push_back({0.0, true});
    counts[0] = 0;
  }
  auto peaks = find_peaks(counts, opt, sigma_typ);
  if (peaks.empty()) return seeds;

  double max_mass = 0.0;
  for (const auto& p : peaks) max_mass = std::max(max_mass, p.mass);
  double reliable = std::max(static_cast<double>(opt.min_peak_events), 0.05 * max_mass);
  std::vector<double> pos, mass;
  for (const auto& p : peaks) {
    if (p.mass >= reliable) {
      pos.push_back(static_cast<double>(p.bin));
      mass.push_back(p.mass);
    }
  }
  if (pos.size() < 3) {
    for (const auto& p : peaks) seeds.push_back({static_cast<double>(p.bin), false});
    return seeds;
  }

  auto median_gap = [](const std::vector<double>& v) {
    std::vector<double> g;
    for (std::size_t i = 1; i < v.size(); ++i) g.push_back(v[i] - v[i - 1]);
    std::nth_element(g.begin(), g.begin() + g.size() / 2, g.end());
    return g[g.size() / 2];
  };
  for (bool changed = true; changed && pos.size() >= 3;) {
    changed = false;
    double g = median_gap(pos);
    for (std::size_t i = 1; i < pos.size(); ++i) {
      if (pos[i] - pos[i - 1] < 0.6 * g) {
        std::size_t drop = mass[i] < mass[i - 1] ? i : i - 1;
        pos.erase(pos.begin() + drop);
        mass.erase(mass.begin() + drop);
        changed = true;
        break;
      }
    }
  }
  {
    double g = median_gap(pos);
    std::vector<double> filled{pos[0]};
    for (std::size_t i = 1; i < pos.size(); ++i) {
      int steps = std::max(1, static_cast<int>(std::lround((pos[i] - pos[i - 1]) / g)));
      for (int s = 1; s < steps; ++s) filled.push_back(pos[i - 1] + (pos[i] - pos[i - 1]) * s / steps);
      filled.push_back(pos[i]);
    }
    pos = std::move(filled);
  }

  // Chain entries: position and whether the histogram has events there.
  std::deque<std::pair<double, bool>> chain;
  for (double p : pos) chain.push_back({p, true});
  auto predict = [&](bool lower) {
    std::vector<double> x, y;
    std::size_t m = std::min<std::size_t>(6, chain.size());
    for (std::size_t i = 0; i < m; ++i) {
      std::size_t idx = lower ? i : chain.size() - m + i;
      x.push_back(static_cast<double>(idx));
      y.push_back(chain[idx].first);
    }
    return poly_predict(x, y, lower ? -1.0 : static_cast<double>(chain.size()));
  };
  double limit_low = seeds.empty() ? 0.0 : 2.0 * sigma_typ;
  double limit_high = static_cast<double>(counts.size() - 1);
  for (bool lower : {true, false}) {
    int empty = 0;
    while (empty < 2) {
      double p = predict(lower);
      double step = lower ? chain.front().first - p : p - chain.back().first;
      if (!(step > 0.5 * sigma_typ) || p < limit_low || p > limit_high) break;
      bool present = window_mass(counts, p, sigma_typ) >= static_cast<double>(opt.min_peak_events);
      if (present) {
        double c = window_centroid(counts, p, sigma_typ);
        // A centroid from a handful of events only nudges the prediction.
        p += std::clamp(c - p, -0.5 * sigma_typ, 0.5 * sigma_typ);
      }
      empty = present ? 0 : empty + 1;
      if (lower) {
        chain.push_front({p, present});
      } else {
        chain.push_back({p, present});
      }
    }
  }
  for (const auto& [p, present] : chain) {
    if (present) seeds.push_back({p, false});
  }
  return seeds;
}

struct EmOutcome {
  int iterations = 0;
  double last_change = 0.0;
  bool converged = false;
};

// Variance prior: weighted quadratic trend of sigma^2 against mu over the
// well-populated components, evaluated at `mu`.
class SigmaTrend {
 public:
  SigmaTrend(const std::vector<double>& n, const std::vector<double>& mu, const std::vector<double>& var,
             const std::vector<bool>& fixed) {
    std::vector<std::size_t> use;
    double wsum = 0.0, vsum = 0.0;
    for (std::size_t k = 0; k < n.size(); ++k) {
      if (fixed[k] || n[k] < 10.0) continue;
      wsum += n[k];
      vsum += n[k] * var[k];
      if (n[k] >= 100.0) use.push_back(k);
    }
    if (wsum == 0.0) return;
    mean_ = vsum / wsum;
    valid_ = true;
    if (use.size() < 4) return;
    Eigen::MatrixXd a(use.size(), 3);
    Eigen::VectorXd b(use.size());
    double scale = 0.0;
    for (std::size_t k : use) scale = std::max(scale, std::abs(mu[k]));
    scale_ = scale > 0.0 ? scale : 1.0;
    for (std::size_t i = 0; i < use.size(); ++i) {
      double sw = std::sqrt(n[use[i]]);
      double x = mu[use[i]] / scale_;
      a(i, 0) = sw;
      a(i, 1) = sw * x;
      a(i, 2) = sw * x * x;
      b[i] = sw * var[use[i]];
    }
    coef_ = a.colPivHouseholderQr().solve(b);
    quadratic_ = coef_.allFinite();
  }

  bool valid() const { return valid_; }
  double at(double mu) const {
    if (!quadratic_) return mean_;
    double x = mu / scale_;
    double v = coef_[0] + coef_[1] * x + coef_[2] * x * x;
    return std::clamp(v, 0.25 * mean_, 4.0 * mean_);
  }

 private:
  bool valid_ = false;
  bool quadratic_ = false;
  double mean_ = 0.0;
  double scale_ = 1.0;
  Eigen::Vector3d coef_ = Eigen::Vector3d::Zero();
};

EmOutcome run_em(const AreaHistogram& h, std::vector<GaussComponent>& comps, const std::vector<bool>& fixed,
                 double sigma_floor, const FitOptions& opt) {
  const double total = static_cast<double>(h.total);
  std::vector<double> f(h.size());
  std::vector<std::vector<double>> mass(comps.size());
  std::vector<std::pair<std::size_t, std::size_t>> ranges(comps.size());
  double prev_ll = -std::numeric_limits<double>::infinity();
  double sheppard = h.width(0) * h.width(0) / 12.0;
  std::vector<double> nk(comps.size()), mu(comps.size()), var(comps.size());

  EmOutcome out;
  for (int it = 1; it <= opt.max_iterations; ++it) {
    out.iterations = it;
    std::fill(f.begin(), f.end(), 0.0);
    for (std::size_t k = 0; k < comps.size(); ++k) {
      ranges[k] = support(h, comps[k].mu, comps[k].sigma);
      bin_masses(h, comps[k].mu, comps[k].sigma, ranges[k].first, ranges[k].second, mass[k]);
      for (std::size_t b = ranges[k].first; b < ranges[k].second; ++b) {
        f[b] += comps[k].weight * mass[k][b - ranges[k].first];
      }
    }
    double ll = 0.0;
    for (std::size_t b = 0; b < h.size(); ++b) {
      if (h.counts[b] > 0 && f[b] > 1e-300) ll += h.counts[b] * std::log(f[b]);
    }

    for (std::size_t k = 0; k < comps.size(); ++k) {
      double n = 0.0, s1 = 0.0, s2 = 0.0;
      for (std::size_t b = ranges[k].first; b < ranges[k].second; ++b) {
        if (h.counts[b] == 0 || f[b] <= 1e-300) continue;
        double r = h.counts[b] * comps[k].weight * mass[k][b - ranges[k].first] / f[b];
        n += r;
        s1 += r * h.center(b);
      }
      double m = n > 0.0 ? s1 / n : comps[k].mu;
      for (std::size_t b = ranges[k].first; b < ranges[k].second; ++b) {
        if (h.counts[b] == 0 || f[b] <= 1e-300) continue;
        double r = h.counts[b] * comps[k].weight * mass[k][b - ranges[k].first] / f[b];
        s2 += r * (h.center(b) - m) * (h.center(b) - m);
      }
      nk[k] = n;
      mu[k] = m;
      var[k] = n > 0.0 ? std::max(s2 / n - sheppard, 0.0) : comps[k].sigma * comps[k].sigma;
    }
    SigmaTrend trend(nk, mu, var, fixed);
    for (std::size_t k = 0; k < comps.size(); ++k) {
      comps[k].weight = std::max(nk[k], 1e-12) / total;
      if (fixed[k]) continue;
      comps[k].mu = mu[k];
      double v = var[k];
      if (trend.valid()) v = (nk[k] * var[k] + opt.sigma_prior_events * trend.at(mu[k])) / (nk[k] + opt.sigma_prior_events);
      comps[k].sigma = std::sqrt(std::max(v, sigma_floor * sigma_floor));
    }

    out.last_change = std::abs(ll - prev_ll);
    if (std::isfinite(prev_ll) && out.last_change <= opt.tolerance * std::abs(ll)) {
      out.converged = true;
      break;
    }
    prev_ll = ll;
  }
  return out;
}


double weighted_chi2(const AreaHistogram& h, const std::vector<double>& model, const std::vector<double>& w) {
  double chi2 = 0.0;
  for (std::size_t b = 0; b < h.size(); ++b) {
    double r = static_cast<double>(h.counts[b]) - model[b];
    chi2 += w[b] * r * r;
  }
  return chi2;
}

// Joint Levenberg-Marquardt refinement of (mu, log sigma, log amplitude) for
// every component not marked fixed. Weights come from the EM model so the
// objective approximates Pearson's chi-square.
int polish(const AreaHistogram& h, std::vector<GaussComponent>& comps, const std::vector<bool>& fixed,
           double sigma_floor, int max_iter, std::vector<std::string>& warnings) {
  const double total = static_cast<double>(h.total);
  std::vector<int> col(comps.size(), -1);
  int p = 0;
  for (std::size_t k = 0; k < comps.size(); ++k) {
    if (!fixed[k]) {
      col[k] = p;
      p += 3;
    }
  }
  if (p == 0) return 0;

  std::vector<double> weights(h.size());
  {
    auto m0 = mixture_bin_counts(h, comps);
    for (std::size_t b = 0; b < h.size(); ++b) weights[b] = 1.0 / std::max(m0[b], 1.0);
  }
  auto chi2_of = [&](const std::vector<GaussComponent>& c) { return weighted_chi2(h, mixture_bin_counts(h, c), weights); };

  double lambda = 1e-3;
  double chi2 = chi2_of(comps);
  int it = 0;
  for (; it < max_iter; ++it) {
    Eigen::MatrixXd jtj = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd jtr = Eigen::VectorXd::Zero(p);
    auto model = mixture_bin_counts(h, comps);
    std::vector<std::vector<std::pair<int, double>>> rows(h.size());
    for (std::size_t k = 0; k < comps.size(); ++k) {
      if (fixed[k]) continue;
      const auto& c = comps[k];
      double amp = c.weight * total;
      auto [first, last] = support(h, c.mu, c.sigma);
      for (std::size_t b = first; b < last; ++b) {
        double zl = (h.bin_edges[b] - c.mu) / c.sigma;
        double zh = (h.bin_edges[b + 1] - c.mu) / c.sigma;
        double pl = phi_pdf(zl), ph = phi_pdf(zh);
        double mass = phi_cdf(zh) - phi_cdf(zl);
        rows[b].push_back({col[k], -amp * (ph - pl) / c.sigma});
        rows[b].push_back({col[k] + 1, -amp * (zh * ph - zl * pl)});
        rows[b].push_back({col[k] + 2, amp * mass});
      }
    }
    for (std::size_t b = 0; b < h.size(); ++b) {
      if (rows[b].empty()) continue;
      double r = static_cast<double>(h.counts[b]) - model[b];
      for (auto [i, ji] : rows[b]) {
        jtr[i] += weights[b] * ji * r;
        for (auto [j, jj] : rows[b]) jtj(i, j) += weights[b] * ji * jj;
      }
    }

    bool improved = false;
    for (int attempt = 0; attempt < 12 && !improved; ++attempt) {
      Eigen::MatrixXd a = jtj;
      for (int i = 0; i < p; ++i) a(i, i) += lambda * std::max(jtj(i, i), 1e-12);
      Eigen::VectorXd step = a.ldlt().solve(jtr);
      if (!step.allFinite()) {
        lambda *= 10.0;
        continue;
      }
      auto trial = comps;
      for (std::size_t k = 0; k < comps.size(); ++k) {
        if (fixed[k]) continue;
        trial[k].mu += step[col[k]];
        trial[k].sigma = std::max(sigma_floor, trial[k].sigma * std::exp(std::clamp(step[col[k] + 1], -1.0, 1.0)));
        trial[k].weight *= std::exp(std::clamp(step[col[k] + 2], -1.0, 1.0));
      }
      double c2 = chi2_of(trial);
      if (c2 < chi2) {
        improved = true;
        double rel = (chi2 - c2) / std::max(chi2, 1e-300);
        comps = std::move(trial);
        chi2 = c2;
        lambda = std::max(lambda / 10.0, 1e-12);
        if (rel < 1e-10) return it + 1;
      } else {
        lambda *= 10.0;
      }
    }
    if (!improved) break;
  }
  if (it == max_iter) warnings.push_back("least-squares polish stopped at its iteration limit");
  return it;
}

std::vector<int> label_photon_numbers(const AreaHistogram& h, const std::vector<GaussComponent>& comps,
                                      const std::vector<bool>& point_mass, const FitOptions& opt,
                                      std::vector<std::string>& warnings) {
  std::vector<int> n(comps.size(), 0);
  if (comps.empty()) return n;
  std::vector<double> gaps;
  for (std::size_t k = 1; k < comps.size(); ++k) {
    if (!point_mass[k - 1]) gaps.push_back(comps[k].mu - comps[k - 1].mu);
  }
  auto local_spacing = [&](std::size_t k) {
    // Median of gaps near pair (k-1, k), skipping the vacuum spike.
    std::vector<double> near;
    for (std::size_t j = std::max<std::size_t>(k, 3) - 3; j + 1 < comps.size() && j <= k + 2; ++j) {
      if (!point_mass[j]) near.push_back(comps[j + 1].mu - comps[j].mu);
    }
    if (near.empty()) return gaps.empty() ? 0.0 : gaps.front();
    std::nth_element(near.begin(), near.begin() + near.size() / 2, near.end());
    return near[near.size() / 2];
  };

  if (opt.first_photon_number) {
    n[0] = *opt.first_photon_number;
  } else if (point_mass[0] && comps[0].mu <= h.bin_edges.front() + h.width(0)) {
    n[0] = 0;
  } else if (comps.size() < 2) {
    warnings.push_back("single component; photon number assumed to be 0");
  }
  for (std::size_t k = 1; k < comps.size(); ++k) {
    if (point_mass[k - 1]) {
      double s = local_spacing(k + 1 < comps.size() ? k + 1 : k);
      n[k] = n[k - 1] + std::max(1, s > 0.0 ? static_cast<int>(std::lround((comps[k].mu - comps[k - 1].mu) / s)) : 1);
      continue;
    }
    double s = local_spacing(k);
    int step = std::max(1, static_cast<int>(std::lround((comps[k].mu - comps[k - 1].mu) / s)));
    if (step > 1) warnings.push_back("gap before photon number " + std::to_string(n[k - 1] + step));
    n[k] = n[k - 1] + step;
  }
  if (opt.first_photon_number || point_mass[0] || comps.size() < 2) return n;

  // No vacuum anchor: extrapolate the lowest well-populated peaks linearly to
  // zero area, which sits at photon number 0.
  std::vector<std::size_t> use;
  for (std::size_t k = 0; k < comps.size() && use.size() < 6; ++k) {
    if (comps[k].weight * static_cast<double>(h.total) >= opt.sparse_events) use.push_back(k);
  }
  if (use.size() < 2) {
    use.clear();
    for (std::size_t k = 0; k < comps.size() && use.size() < 6; ++k) use.push_back(k);
  }
  double mx = 0.0, my = 0.0;
  for (std::size_t k : use) {
    mx += n[k];
    my += comps[k].mu;
  }
  mx /= static_cast<double>(use.size());
  my /= static_cast<double>(use.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t k : use) {
    sxy += (n[k] - mx) * (comps[k].mu - my);
    sxx += (n[k] - mx) * (n[k] - mx);
  }
  double slope = sxx > 0.0 ? sxy / sxx : local_spacing(1);
  if (!(slope > 0.0)) return n;
  int offset = static_cast<int>(std::lround(mx - my / slope));
  int shift = -std::min(offset, n[0]);
  for (int& v : n) v += shift;
  return n;
}


double linear_predict(const std::vector<double>& x, const std::vector<double>& y, double x0) {
  double mx = std::accumulate(x.begin(), x.end(), 0.0) / x.size();
  double my = std::accumulate(y.begin(), y.end(), 0.0) / y.size();
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxx > 0.0 ? my + sxy / sxx * (x0 - mx) : my;
}

void regularize_sparse(std::vector<GaussComponent>& comps, const std::vector<bool>& point_mass, double total,
                       double sparse_events, double sigma_floor, std::vector<std::string>& warnings) {
  std::vector<std::size_t> populated;
  for (std::size_t k = 0; k < comps.size(); ++k) {
    if (!point_mass[k] && comps[k].weight * total >= sparse_events) populated.push_back(k);
  }
  if (populated.size() < 3) return;
  auto original = comps;
  for (std::size_t k = 0; k < comps.size(); ++k) {
    if (point_mass[k] || comps[k].weight * total >= sparse_events) continue;
    std::vector<std::size_t> near = populated;
    std::sort(near.begin(), near.end(), [&](std::size_t a, std::size_t b) {
      return std::abs(original[a].n - original[k].n) < std::abs(original[b].n - original[k].n);
    });
    near.resize(std::min<std::size_t>(near.size(), 6));
    std::vector<double> x, mu, sigma;
    for (std::size_t j : near) {
      x.push_back(original[j].n);
      mu.push_back(original[j].mu);
      sigma.push_back(original[j].sigma);
    }
    comps[k].mu = linear_predict(x, mu, original[k].n);
    comps[k].sigma = std::max(sigma_floor, std::accumulate(sigma.begin(), sigma.end(), 0.0) / sigma.size());
    std::ostringstream msg;
    msg << "photon number " << comps[k].n << " has " << std::lround(comps[k].weight * total)
        << " entries; mean and width taken from the neighbouring trend";
    warnings.push_back(msg.str());
  }
}

// Merges neighbours closer than half the median spacing (one physical peak
// split by noise in the smoothed histogram). Returns true if anything merged.
bool merge_close(std::vector<GaussComponent>& comps, bool has_point_mass) {
  std::size_t first = has_point_mass ? 1 : 0;
  if (comps.size() < first + 3) return false;
  std::vector<double> gaps;
  for (std::size_t k = first + 1; k < comps.size(); ++k) gaps.push_back(comps[k].mu - comps[k - 1].mu);
  std::nth_element(gaps.begin(), gaps.begin() + gaps.size() / 2, gaps.end());
  double limit = 0.5 * gaps[gaps.size() / 2];
  std::vector<GaussComponent> out;
  bool merged = false;
  for (const auto& c : comps) {
    if (out.size() > first && c.mu - out.back().mu < limit) {
      auto& a = out.back();
      double w = a.weight + c.weight;
      double mu = (a.weight * a.mu + c.weight * c.mu) / w;
      double var = (a.weight * (a.sigma * a.sigma + (a.mu - mu) * (a.mu - mu)) +
                    c.weight * (c.sigma * c.sigma + (c.mu - mu) * (c.mu - mu))) / w;
      a = {a.n, mu, std::sqrt(var), w};
      merged = true;
    } else {
      out.push_back(c);
    }
  }
  comps = std::move(out);
  return merged;
}

}  // namespace

AreaHistogram AreaHistogram::from_areas(std::span<const double> areas, std::size_t bins, std::optional<double> lo,
                                        std::optional<double> hi) {
  if (bins == 0) throw std::invalid_argument("histogram needs at least one bin");
  double a = lo.value_or(0.0), b = hi.value_or(1.0);
  if (!lo || !hi) {
    double mn = 0.0, mx = 0.0;
    for (double x : areas) {
      if (!std::isfinite(x)) throw std::invalid_argument("non-finite pulse area");
      mn = std::min(mn, x);
      mx = std::max(mx, x);
    }
    if (!lo && !hi) {
      // First bin centred on the origin (zero-area events form a symmetric
      // spike), last bin centred on the largest area.
      double w = bins > 1 ? (mx - mn) / (static_cast<double>(bins) - 1.0) : mx - mn + 1.0;
      if (!(w > 0.0)) w = 1.0;
      a = mn - 0.5 * w;
      b = a + w * static_cast<double>(bins);
    } else if (!lo) {
      a = mn - 0.5 * (b - mn) / (static_cast<double>(bins) - 0.5);
    } else {
      b = mx + std::max(1.0, 1e-6 * (mx - a));
    }
  }
  if (!(b > a)) throw std::invalid_argument("histogram range is empty");
  AreaHistogram h;
  h.bin_edges.resize(bins + 1);
  for (std::size_t i = 0; i <= bins; ++i) h.bin_edges[i] = a + (b - a) * static_cast<double>(i) / bins;
  h.counts.assign(bins, 0);
  double scale = bins / (b - a);
  for (double x : areas) {
    if (x < a || x >= b) continue;
    std::size_t i = std::min(bins - 1, static_cast<std::size_t>((x - a) * scale));
    ++h.counts[i];
    ++h.total;
  }
  return h;
}

void AreaHistogram::validate() const {
  if (counts.empty() || bin_edges.size() != counts.size() + 1) {
    throw std::invalid_argument("histogram edges and counts disagree");
  }
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (!(bin_edges[i + 1] > bin_edges[i])) throw std::invalid_argument("histogram edges must increase");
  }
  if (std::accumulate(counts.begin(), counts.end(), std::uint64_t{0}) != total) {
    throw std::invalid_argument("histogram total does not match its counts");
  }
}

std::vector<double> mixture_bin_counts(const AreaHistogram& hist, std::span<const GaussComponent> components) {
  std::vector<double> out(hist.size(), 0.0), mass;
  for (const auto& c : components) {
    auto [first, last] = support(hist, c.mu, c.sigma);
    bin_masses(hist, c.mu, c.sigma, first, last, mass);
    for (std::size_t b = first; b < last; ++b) out[b] += c.weight * hist.total * mass[b - first];
  }
  return out;
}

double r_squared(const AreaHistogram& hist, std::span<const GaussComponent> components) {
  auto model = mixture_bin_counts(hist, components);
  double mean = static_cast<double>(hist.total) / hist.size();
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t b = 0; b < hist.size(); ++b) {
    double c = static_cast<double>(hist.counts[b]);
    ss_res += (c - model[b]) * (c - model[b]);
    ss_tot += (c - mean) * (c - mean);
  }
  return ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
}

FitResult fit_mixture(const AreaHistogram& hist, std::size_t k_max, const FitOptions& options) {
  hist.validate();
  if (k_max < 1 || k_max > static_cast<std::size_t>(kMaxPhotonsPerChannel + 1)) {
    throw std::invalid_argument("k_max must be in [1, 38]");
  }
  if (hist.total == 0) throw FitError("histogram is empty", 0, 0.0);

  FitResult result;
  double sigma_typ = 1.0;
  auto seeds = seed_components(hist, options, sigma_typ);
  if (seeds.empty()) throw FitError("no peaks found in the area histogram", 0, 0.0);
  if (seeds.size() > k_max) {
    result.warnings.push_back("found " + std::to_string(seeds.size()) + " peaks; keeping the lowest " +
                              std::to_string(k_max));
    seeds.resize(k_max);
  } else if (seeds.size() < k_max) {
    result.warnings.push_back("found " + std::to_string(seeds.size()) + " peaks, fewer than the requested " +
                              std::to_string(k_max));
  }

  const double bin_w = hist.width(0);
  const double sigma_floor = 0.5 * bin_w;
  const bool has_point_mass = seeds.front().point_mass;
  std::vector<GaussComponent> comps;
  for (const auto& s : seeds) {
    if (s.point_mass) {
      comps.push_back({0, hist.center(0), 0.125 * bin_w, 1.0});
    } else {
      double mu = hist.bin_edges[0] + (s.bin + 0.5) * bin_w;
      comps.push_back({0, mu, std::max(sigma_floor, sigma_typ * bin_w), 1.0});
    }
  }
  for (auto& c : comps) c.weight = 1.0 / static_cast<double>(comps.size());
  auto fixed_flags = [&] {
    std::vector<bool> f(comps.size(), false);
    if (has_point_mass) f[0] = true;
    return f;
  };

  auto em = run_em(hist, comps, fixed_flags(), sigma_floor, options);
  result.em_iterations = em.iterations;
  for (int round = 0; round < 5 && merge_close(comps, has_point_mass); ++round) {
    result.warnings.push_back("merged components split by histogram noise");
    em = run_em(hist, comps, fixed_flags(), sigma_floor, options);
    result.em_iterations += em.iterations;
  }
  // Components that lost every entry to their neighbours carry no information.
  for (std::size_t k = comps.size(); k-- > (has_point_mass ? 1 : 0);) {
    if (comps[k].weight * static_cast<double>(hist.total) < 0.5) comps.erase(comps.begin() + k);
  }
  if (comps.empty()) throw FitError("every component vanished during EM", em.iterations, em.last_change);
  if (!em.converged && !options.polish) {
    throw FitError("EM did not converge", em.iterations, em.last_change);
  }
  std::vector<bool> point_mass = fixed_flags();

  if (options.polish) {
    auto before = comps;
    double r2_before = r_squared(hist, before);
    result.polish_iterations =
        polish(hist, comps, point_mass, sigma_floor, options.polish_iterations, result.warnings);
    bool sane = std::is_sorted(comps.begin(), comps.end(), [](const auto& a, const auto& b) { return a.mu < b.mu; });
    double w_before = 0.0, w_after = 0.0;
    for (std::size_t k = 0; k < comps.size(); ++k) {
      w_before += before[k].weight;
      w_after += comps[k].weight;
      // A component pushed off the histogram can grow without changing the fit.
      sane = sane && comps[k].weight <= 1.0 && comps[k].sigma <= 2.0 * before[k].sigma &&
             std::abs(comps[k].mu - before[k].mu) <= 2.0 * before[k].sigma;
    }
    sane = sane && std::abs(w_after - w_before) <= 0.05 * w_before;
    if (!sane || r_squared(hist, comps) < r2_before) {
      comps = std::move(before);
      result.warnings.push_back("least-squares polish rejected");
      if (!em.converged) throw FitError("EM did not converge", em.iterations, em.last_change);
    }
  }

  auto labels = label_photon_numbers(hist, comps, point_mass, options, result.warnings);
  for (std::size_t k = 0; k < comps.size(); ++k) comps[k].n = labels[k];
  regularize_sparse(comps, point_mass, static_cast<double>(hist.total), options.sparse_events, sigma_floor,
                    result.warnings);

  result.r_squared = r_squared(hist, comps);
  result.components = std::move(comps);
  return result;
}

double normalized_gaussian(double x, const GaussComponent& c) {
  double z = (x - c.mu) / c.sigma;
  return std::exp(-0.5 * z * z);
}

namespace {

double peak_normalized_edge(const GaussComponent& a, const GaussComponent& b) {
  return (a.mu * b.sigma + b.mu * a.sigma) / (a.sigma + b.sigma);
}

double area_normalized_edge(const GaussComponent& a, const GaussComponent& b) {
  double ia = 1.0 / (a.sigma * a.sigma), ib = 1.0 / (b.sigma * b.sigma);
  double qa = ia - ib;
  double qb = -2.0 * (a.mu * ia - b.mu * ib);
  double qc = a.mu * a.mu * ia - b.mu * b.mu * ib + 2.0 * std::log(a.sigma / b.sigma);
  std::vector<double> roots;
  if (std::abs(qa) < 1e-15 * std::max(ia, ib)) {
    roots.push_back(-qc / qb);
  } else {
    double disc = qb * qb - 4.0 * qa * qc;
    if (disc >= 0.0) {
      double sq = std::sqrt(disc);
      roots.push_back((-qb + sq) / (2.0 * qa));
      roots.push_back((-qb - sq) / (2.0 * qa));
    }
  }
  for (double r : roots) {
    if (r > a.mu && r < b.mu) return r;
  }
  return peak_normalized_edge(a, b);
}

void check_pair(const GaussComponent& a, const GaussComponent& b, std::size_t k) {
  if (!(b.mu > a.mu)) throw std::invalid_argument("component means must increase");
  if (!(a.sigma > 0.0) || !(b.sigma > 0.0)) throw std::invalid_argument("component widths must be positive");
  if (b.mu - a.mu < 0.5 * (a.sigma + b.sigma)) {
    std::ostringstream msg;
    msg << "photon numbers " << a.n << " and " << b.n << " are not resolvable";
    throw ResolvabilityError(msg.str(), k);
  }
}

}  // namespace

std::vector<double> place_edges(std::span<const GaussComponent> components, EdgeRule rule) {
  std::vector<double> edges;
  for (std::size_t k = 0; k + 1 < components.size(); ++k) {
    const auto& a = components[k];
    const auto& b = components[k + 1];
    check_pair(a, b, k);
    edges.push_back(rule == EdgeRule::kPeakNormalized ? peak_normalized_edge(a, b) : area_normalized_edge(a, b));
  }
  return edges;
}

void Calibration::validate() const {
  if (components.empty()) throw std::invalid_argument("calibration has no components");
  if (edges.size() + 1 != components.size()) throw std::invalid_argument("calibration needs one edge per pair");
  for (std::size_t k = 0; k < components.size(); ++k) {
    const auto& c = components[k];
    if (!std::isfinite(c.mu) || !(c.sigma > 0.0)) throw std::invalid_argument("bad calibration component");
    if (k > 0 && c.n <= components[k - 1].n) throw std::invalid_argument("photon numbers must increase");
    if (k + 1 < components.size() && !(edges[k] > c.mu && edges[k] < components[k + 1].mu)) {
      throw std::invalid_argument("edge outside its pair of means");
    }
  }
  if (!(overflow_edge > components.back().mu)) throw std::invalid_argument("overflow edge below the last mean");
  if (window_frac && !(*window_frac > 0.0)) throw std::invalid_argument("window fraction must be positive");
}

Calibration build_calibration(std::vector<GaussComponent> components, const CalibrationOptions& options) {
  if (components.empty()) throw std::invalid_argument("calibration needs at least one component");
  if (options.window_frac && !(*options.window_frac > 0.0)) {
    throw std::invalid_argument("window fraction must be positive");
  }
  Calibration cal;
  cal.window_frac = options.window_frac;
  cal.components.push_back(components[0]);
  std::optional<double> stop_edge;
  for (std::size_t k = 0; k + 1 < components.size(); ++k) {
    const auto& a = components[k];
    const auto& b = components[k + 1];
    double edge;
    try {
      check_pair(a, b, k);
      edge = options.rule == EdgeRule::kPeakNormalized ? peak_normalized_edge(a, b) : area_normalized_edge(a, b);
    } catch (const ResolvabilityError&) {
      stop_edge = peak_normalized_edge(a, b);
      break;
    }
    double overlap = std::max(normalized_gaussian(edge, a), normalized_gaussian(edge, b));
    if (overlap > options.overlap_threshold) {
      stop_edge = edge;
      break;
    }
    cal.edges.push_back(edge);
    cal.components.push_back(b);
  }
  const auto& last = cal.components.back();
  if (stop_edge) {
    cal.overflow_edge = *stop_edge;
  } else if (!cal.edges.empty()) {
    cal.overflow_edge = 2.0 * last.mu - cal.edges.back();
  } else {
    cal.overflow_edge = last.mu + 4.0 * last.sigma;
  }
  cal.validate();
  return cal;
}

const char* discard_reason_name(DiscardReason r) {
  switch (r) {
    case DiscardReason::kOverflow:
      return "overflow";
    case DiscardReason::kOutsideWindow:
      return "outside_window";
    case DiscardReason::kMissing:
      return "missing";
  }
  return "unknown";
}

Assignment assign(double area, const Calibration& cal) {
  if (area >= cal.overflow_edge) return Assignment::discard(DiscardReason::kOverflow);
  std::size_t i = static_cast<std::size_t>(std::lower_bound(cal.edges.begin(), cal.edges.end(), area) - cal.edges.begin());
  const auto& c = cal.components[i];
  if (cal.window_frac && std::abs(area - c.mu) > *cal.window_frac * c.sigma) {
    return Assignment::discard(DiscardReason::kOutsideWindow);
  }
  return Assignment::resolved(c.n);
}

double window_keep_fraction(double window_frac) {
  if (!(window_frac > 0.0)) throw std::domain_error("window fraction must be positive");
  if (std::isinf(window_frac)) return 1.0;
  return std::erf(window_frac / std::numbers::sqrt2);
}

std::vector<ErrorRate> error_rates(const Calibration& cal) {
  cal.validate();
  const auto& comps = cal.components;
  std::size_t k = comps.size();
  std::vector<ErrorRate> out;
  for (std::size_t n = 0; n < k; ++n) {
    const auto& src = comps[n];
    auto cdf = [&](double x) {
      if (x == -std::numeric_limits<double>::infinity()) return 0.0;
      return phi_cdf((x - src.mu) / src.sigma);
    };
    double self = 0.0, counted = 0.0;
    for (std::size_t m = 0; m < k; ++m) {
      double lo = m == 0 ? -std::numeric_limits<double>::infinity() : cal.edges[m - 1];
      double hi = m + 1 < k ? cal.edges[m] : cal.overflow_edge;
      if (cal.window_frac) {
        lo = std::max(lo, comps[m].mu - *cal.window_frac * comps[m].sigma);
        hi = std::min(hi, comps[m].mu + *cal.window_frac * comps[m].sigma);
      }
      double p = hi > lo ? cdf(hi) - cdf(lo) : 0.0;
      counted += p;
      if (m == n) self = p;
    }
    double err = counted > 0.0 ? std::clamp(1.0 - self / counted, 0.0, 1.0) : 1.0;
    out.push_back({src.n, err, 1.0 - err});
  }
  return out;
}

std::vector<ErrorTableRow> error_table(const Calibration& cal) {
  Calibration all = cal, two = cal, one = cal;
  all.window_frac.reset();
  two.window_frac = 1.0;
  one.window_frac = 0.5;
  auto a = error_rates(all), b = error_rates(two), c = error_rates(one);
  std::vector<ErrorTableRow> rows;
  for (std::size_t i = 0; i < a.size(); ++i) rows.push_back({a[i].n, a[i].error, b[i].error, c[i].error});
  return rows;
}

std::vector<GaussComponent> components_from_labeled(std::span<const double> areas, std::span<const int> labels,
                                                    double sigma_floor) {
  if (areas.size() != labels.size()) throw std::invalid_argument("areas and labels differ in length");
  if (areas.empty()) throw std::invalid_argument("no labelled areas");
  int max_n = *std::max_element(labels.begin(), labels.end());
  if (*std::min_element(labels.begin(), labels.end()) < 0) throw std::invalid_argument("negative photon label");
  std::vector<double> s0(max_n + 1, 0.0), s1(max_n + 1, 0.0), s2(max_n + 1, 0.0);
  for (std::size_t i = 0; i < areas.size(); ++i) {
    s0[labels[i]] += 1.0;
    s1[labels[i]] += areas[i];
  }
  for (std::size_t i = 0; i < areas.size(); ++i) {
    double d = areas[i] - s1[labels[i]] / s0[labels[i]];
    s2[labels[i]] += d * d;
  }
  std::vector<GaussComponent> out;
  for (int n = 0; n <= max_n; ++n) {
    if (s0[n] == 0.0) continue;
    double sd = s0[n] > 1.0 ? std::sqrt(s2[n] / (s0[n] - 1.0)) : 0.0;
    out.push_back({n, s1[n] / s0[n], std::max(sd, sigma_floor), s0[n] / static_cast<double>(areas.size())});
  }
  return out;
}

nlohmann::json calibration_to_json(const Calibration& cal) {
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& c : cal.components) {
    comps.push_back({{"n", c.n}, {"mu", c.mu}, {"sigma", c.sigma}, {"weight", c.weight}});
  }
  nlohmann::json j = {{"schema", "pnr.calibration"},
                      {"version", kCalibrationSchemaVersion},
                      {"components", comps},
                      {"edges", cal.edges},
                      {"overflow_edge", cal.overflow_edge}};
  j["window_frac"] = cal.window_frac ? nlohmann::json(*cal.window_frac) : nlohmann::json(nullptr);
  return j;
}

Calibration calibration_from_json(const nlohmann::json& j) {
  try {
    if (j.at("schema").get<std::string>() != "pnr.calibration") throw FormatError("not a calibration file");
    int version = j.at("version").get<int>();
    if (version != kCalibrationSchemaVersion) {
      throw FormatError("unsupported calibration schema version " + std::to_string(version));
    }
    Calibration cal;
    for (const auto& c : j.at("components")) {
      cal.components.push_back(
          {c.at("n").get<int>(), c.at("mu").get<double>(), c.at("sigma").get<double>(), c.at("weight").get<double>()});
    }
    cal.edges = j.at("edges").get<std::vector<double>>();
    cal.overflow_edge = j.at("overflow_edge").get<double>();
    if (j.contains("window_frac") && !j["window_frac"].is_null()) cal.window_frac = j["window_frac"].get<double>();
    cal.validate();
    return cal;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed calibration: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("invalid calibration: ") + e.what());
  }
}

}  // namespace pnr
