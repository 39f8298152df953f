#include "pnr/calibrate.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <numbers>
#include <random>
#include <stdexcept>
#include <vector>

#include "gtest/gtest.h"
#include "pnr/detector.h"
#include "pnr/io_util.h"
#include "pnr/random.h"
#include "pnr/stats.h"
#include "pnr/theory.h"

namespace pnr {
namespace {

std::vector<GaussComponent> ladder(int count, double spacing, double sigma) {
  std::vector<GaussComponent> c;
  for (int n = 0; n < count; ++n) c.push_back({n, spacing * n, sigma, 1.0 / count});
  return c;
}

// Areas drawn from a Gaussian mixture with Poisson weights; n = 0 is an
// exact zero (no pulse).
struct MixtureSample {
  std::vector<double> areas;
  std::vector<int> photons;
};

MixtureSample sample_mixture(double nbar, int n_max, double spacing, double sigma, std::size_t count,
                             std::uint64_t seed) {
  MixtureSample s;
  Rng rng(seed);
  while (s.areas.size() < count) {
    int n = static_cast<int>(rng.poisson(nbar));
    if (n > n_max) continue;
    s.photons.push_back(n);
    s.areas.push_back(n == 0 ? 0.0 : spacing * n + sigma * rng.normal());
  }
  return s;
}

TEST(Window, KeepFractions) {
  EXPECT_NEAR(window_keep_fraction(1.0), 0.6826894921370859, 1e-15);
  EXPECT_NEAR(1.0 - window_keep_fraction(0.5), 0.6170750774519738, 1e-15);
  EXPECT_EQ(window_keep_fraction(std::numeric_limits<double>::infinity()), 1.0);
  EXPECT_THROW(window_keep_fraction(0.0), std::domain_error);
}

TEST(Histogram, BinsAndTotals) {
  std::vector<double> a{0.0, 0.0, 1.0, 2.5, 10.0};
  auto h = AreaHistogram::from_areas(a, 11);
  EXPECT_EQ(h.counts.size() + 1, h.bin_edges.size());
  EXPECT_EQ(h.total, 5u);
  EXPECT_NEAR(h.center(0), 0.0, 1e-12);
  EXPECT_EQ(h.counts[0], 2u);
  EXPECT_EQ(h.counts[10], 1u);
  EXPECT_NO_THROW(h.validate());
  EXPECT_THROW(AreaHistogram::from_areas(a, 0), std::invalid_argument);
}

TEST(Histogram, ExplicitRangeDropsOutsiders) {
  std::vector<double> a{-1.0, 0.5, 1.5, 3.0};
  auto h = AreaHistogram::from_areas(a, 4, 0.0, 2.0);
  EXPECT_EQ(h.total, 2u);
  EXPECT_DOUBLE_EQ(h.bin_edges.back(), 2.0);
}

TEST(Edges, PeakNormalizedEqualWidthsAtMidpoint) {
  std::vector<GaussComponent> c{{0, 0.0, 1.0, 0.5}, {1, 4.0, 1.0, 0.5}};
  auto e = place_edges(c);
  ASSERT_EQ(e.size(), 1u);
  EXPECT_DOUBLE_EQ(e[0], 2.0);
  EXPECT_NEAR(normalized_gaussian(e[0], c[0]), normalized_gaussian(e[0], c[1]), 1e-15);
}

TEST(Edges, UnequalWidthsBalanceStandardScores) {
  std::vector<GaussComponent> c{{0, 0.0, 1.0, 0.5}, {1, 6.0, 2.0, 0.5}};
  double e = place_edges(c)[0];
  EXPECT_NEAR(e / 1.0, (6.0 - e) / 2.0, 1e-12);
  double area = place_edges(c, EdgeRule::kAreaNormalized)[0];
  EXPECT_GT(area, 0.0);
  EXPECT_LT(area, 6.0);
  auto pdf = [](double x, const GaussComponent& g) {
    return std::exp(-0.5 * std::pow((x - g.mu) / g.sigma, 2)) / g.sigma;
  };
  EXPECT_NEAR(pdf(area, c[0]), pdf(area, c[1]), 1e-12);
}

TEST(Edges, StrictlyInsideAdjacentMeans) {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<GaussComponent> c;
    double mu = 0.0;
    for (int n = 0; n < 12; ++n) {
      double sigma = 0.5 + 2.0 * u(gen);
      if (n > 0) mu += 0.5 * (sigma + c.back().sigma) + 5.0 * u(gen) + 1e-3;
      c.push_back({n, mu, sigma, 0.1});
    }
    for (auto rule : {EdgeRule::kPeakNormalized, EdgeRule::kAreaNormalized}) {
      auto e = place_edges(c, rule);
      ASSERT_EQ(e.size(), c.size() - 1);
      for (std::size_t k = 0; k < e.size(); ++k) {
        EXPECT_GT(e[k], c[k].mu);
        EXPECT_LT(e[k], c[k + 1].mu);
        if (k > 0) EXPECT_GT(e[k], e[k - 1]);
      }
    }
  }
}

TEST(Edges, UnresolvablePairReported) {
  std::vector<GaussComponent> c{{0, 0.0, 1.0, 0.3}, {1, 5.0, 1.0, 0.3}, {2, 5.5, 1.0, 0.3}};
  try {
    place_edges(c);
    FAIL() << "expected ResolvabilityError";
  } catch (const ResolvabilityError& e) {
    EXPECT_EQ(e.pair, 1u);
  }
}

TEST(Calibration, OverflowEdgeBeyondLastComponent) {
  auto cal = build_calibration(ladder(5, 10.0, 1.0));
  EXPECT_EQ(cal.edges.size(), 4u);
  EXPECT_DOUBLE_EQ(cal.overflow_edge, 45.0);
  EXPECT_NO_THROW(cal.validate());
}

TEST(Calibration, StopsAtFirstOverlappingPair) {
  auto c = ladder(6, 10.0, 1.0);
  c[4].sigma = 6.0;  // overlap with n = 3 at the edge exceeds 0.25
  auto cal = build_calibration(c);
  ASSERT_EQ(cal.components.size(), 4u);
  EXPECT_GT(cal.overflow_edge, cal.components.back().mu);
  EXPECT_LT(cal.overflow_edge, 40.0);
  EXPECT_EQ(assign(39.0, cal), Assignment::discard(DiscardReason::kOverflow));
}

TEST(Calibration, SingleComponent) {
  auto cal = build_calibration({{0, 0.0, 2.0, 1.0}});
  EXPECT_DOUBLE_EQ(cal.overflow_edge, 8.0);
  EXPECT_THROW(build_calibration({}), std::invalid_argument);
}

TEST(Assign, EdgesWindowsAndOverflow) {
  auto cal = build_calibration(ladder(4, 10.0, 1.0));
  EXPECT_EQ(assign(5.0, cal), Assignment::resolved(0));  // on the edge: lower bin
  EXPECT_EQ(assign(5.0001, cal), Assignment::resolved(1));
  EXPECT_EQ(assign(-3.0, cal), Assignment::resolved(0));
  EXPECT_EQ(assign(34.999, cal), Assignment::resolved(3));
  EXPECT_EQ(assign(35.0, cal), Assignment::discard(DiscardReason::kOverflow));
  cal.window_frac = 1.0;
  EXPECT_EQ(assign(11.0, cal), Assignment::resolved(1));
  EXPECT_EQ(assign(11.5, cal), Assignment::discard(DiscardReason::kOutsideWindow));
  EXPECT_STREQ(discard_reason_name(DiscardReason::kOutsideWindow), "outside_window");
}

TEST(ErrorRates, TwoSidedTailForInteriorComponent) {
  auto cal = build_calibration(ladder(3, 4.0, 1.0), {.overlap_threshold = 0.5});
  auto er = error_rates(cal);
  ASSERT_EQ(er.size(), 3u);
  EXPECT_NEAR(er[1].error, 0.04550026389635842, 1e-8);
  EXPECT_NEAR(er[1].confidence, 1.0 - 0.04550026389635842, 1e-8);
  EXPECT_NEAR(er[0].error, 0.5 * 0.04550026389635842, 1e-8);
}

TEST(ErrorRates, WindowsReduceErrors) {
  auto cal = build_calibration(ladder(8, 4.0, 1.0), {.overlap_threshold = 0.5});
  auto rows = error_table(cal);
  for (const auto& r : rows) {
    EXPECT_LE(r.error_2sigma, r.error_all + 1e-15);
    EXPECT_LE(r.error_1sigma, r.error_2sigma + 1e-15);
  }
}

TEST(ErrorRates, ConfidenceFallsWithPhotonNumber) {
  WaveformParams p;
  DaqThresholds thr;
  std::vector<double> areas;
  std::vector<int> labels;
  // n = 31 only gives n = 30 an upper neighbour.
  for (int n = 0; n <= 31; ++n) {
    for (int i = 0; i < 2000; ++i) {
      auto f = simulate_features(n, p, thr, derive_seed(31, n, i));
      areas.push_back(f ? static_cast<double>(f->area) : 0.0);
      labels.push_back(n);
    }
  }
  auto cal = build_calibration(components_from_labeled(areas, labels), {.overlap_threshold = 0.5});
  auto er = error_rates(cal);
  ASSERT_EQ(er.size(), 32u);
  // 2000 pulses per n leave ~1.6% noise in each width, worth a few 1e-3 of
  // confidence.
  for (std::size_t k = 1; k <= 30; ++k) EXPECT_LE(er[k].confidence, er[k - 1].confidence + 5e-3) << k;
  EXPECT_LT(er[30].confidence, er[2].confidence - 0.02);
}

TEST(Labeled, ComponentsFromTruth) {
  std::vector<double> a{0.0, 0.0, 9.0, 11.0, 19.0, 21.0};
  std::vector<int> n{0, 0, 1, 1, 2, 2};
  auto c = components_from_labeled(a, n, 0.5);
  ASSERT_EQ(c.size(), 3u);
  EXPECT_DOUBLE_EQ(c[0].mu, 0.0);
  EXPECT_DOUBLE_EQ(c[0].sigma, 0.5);
  EXPECT_DOUBLE_EQ(c[1].mu, 10.0);
  EXPECT_NEAR(c[2].weight, 1.0 / 3.0, 1e-15);
}

TEST(Fit, RecoversSyntheticMixture) {
  auto s = sample_mixture(6.0, 20, 100.0, 12.0, 200000, 3);
  auto h = AreaHistogram::from_areas(s.areas, 2048);
  auto fit = fit_mixture(h, 38);
  EXPECT_GT(fit.r_squared, 0.98);
  auto cal = build_calibration(fit.components);
  std::size_t right = 0, counted = 0;
  for (std::size_t i = 0; i < s.areas.size(); ++i) {
    auto a = assign(s.areas[i], cal);
    if (!a.is_resolved()) continue;
    ++counted;
    right += *a.photons == s.photons[i];
  }
  EXPECT_GT(static_cast<double>(counted) / s.areas.size(), 0.999);
  EXPECT_GT(static_cast<double>(right) / counted, 0.99);
  for (const auto& c : fit.components) {
    if (c.n == 0) {
      EXPECT_NEAR(c.mu, 0.0, h.width(0));
    } else if (c.weight * h.total > 1000) {
      EXPECT_NEAR(c.mu, 100.0 * c.n, 1.0) << c.n;
      EXPECT_NEAR(c.sigma, 12.0, 0.5) << c.n;
    }
  }
}

TEST(Fit, LabelsWithoutVacuumPeak) {
  // Bright illumination: no events near zero, labels come from the spacing.
  auto s = sample_mixture(19.0, 37, 80.0, 15.0, 100000, 4);
  auto h = AreaHistogram::from_areas(s.areas, 4096);
  auto fit = fit_mixture(h, 38);
  for (const auto& c : fit.components) {
    if (c.weight * h.total > 500) EXPECT_NEAR(c.mu, 80.0 * c.n, 5.0) << c.n;
  }
}

TEST(Fit, RefitOfModelHistogramIsStable) {
  auto s = sample_mixture(5.0, 20, 100.0, 15.0, 100000, 9);
  auto h = AreaHistogram::from_areas(s.areas, 2048);
  auto first = fit_mixture(h, 38);
  // The model's own expected histogram, rounded to whole entries.
  AreaHistogram m = h;
  auto model = mixture_bin_counts(h, first.components);
  m.total = 0;
  for (std::size_t b = 0; b < m.size(); ++b) {
    m.counts[b] = static_cast<std::uint64_t>(std::llround(model[b]));
    m.total += m.counts[b];
  }
  auto second = fit_mixture(m, 38);
  for (const auto& c : first.components) {
    double count = c.weight * h.total;
    if (count < 100) continue;
    auto it = std::find_if(second.components.begin(), second.components.end(),
                           [&](const GaussComponent& g) { return g.n == c.n; });
    ASSERT_NE(it, second.components.end()) << c.n;
    EXPECT_LE(std::abs(it->mu - c.mu), 0.5 * c.sigma / std::sqrt(count)) << c.n;
  }
}

TEST(Fit, Errors) {
  AreaHistogram empty = AreaHistogram::from_areas(std::vector<double>{}, 16, 0.0, 1.0);
  EXPECT_THROW(fit_mixture(empty, 5), FitError);
  auto h = AreaHistogram::from_areas(std::vector<double>{1.0, 2.0}, 16);
  EXPECT_THROW(fit_mixture(h, 0), std::invalid_argument);
  EXPECT_THROW(fit_mixture(h, 39), std::invalid_argument);
}

TEST(Fit, KMaxKeepsLowestPeaks) {
  auto s = sample_mixture(6.0, 20, 100.0, 12.0, 50000, 5);
  auto h = AreaHistogram::from_areas(s.areas, 2048);
  auto fit = fit_mixture(h, 4);
  ASSERT_LE(fit.components.size(), 4u);
  EXPECT_FALSE(fit.warnings.empty());
  EXPECT_EQ(fit.components.front().n, 0);
}

TEST(PostSelection, WindowedDistributionUnbiased) {
  auto s = sample_mixture(6.0, 20, 150.0, 20.0, 1000000, 12);
  std::vector<GaussComponent> truth;
  truth.push_back({0, 0.0, 1.0, poisson_pmf(6.0, 0)});
  for (int n = 1; n <= 20; ++n) truth.push_back({n, 150.0 * n, 20.0, poisson_pmf(6.0, n)});
  auto all = build_calibration(truth);
  auto win = build_calibration(truth, {.window_frac = 1.0});
  std::vector<std::uint64_t> h_all(21, 0), h_win(21, 0);
  std::uint64_t kept = 0, nonzero = 0;
  for (double a : s.areas) {
    auto x = assign(a, all);
    if (x.is_resolved()) ++h_all[*x.photons];
    auto y = assign(a, win);
    if (a != 0.0) ++nonzero;
    if (y.is_resolved()) {
      ++h_win[*y.photons];
      if (a != 0.0) ++kept;
    }
  }
  EXPECT_NEAR(static_cast<double>(kept) / nonzero, window_keep_fraction(1.0), 0.002);
  // Vacuum events sit on their mean and are always kept; compare n >= 1.
  std::vector<std::uint64_t> a(h_all.begin() + 1, h_all.end()), b(h_win.begin() + 1, h_win.end());
  double total = std::accumulate(a.begin(), a.end(), 0.0);
  std::vector<double> p;
  for (auto c : a) p.push_back(c / total);
  EXPECT_GT(chi_square_gof(b, p).p_value, 0.001);
}

TEST(CalibrationJson, RoundTrip) {
  auto cal = build_calibration(ladder(4, 10.0, 1.5), {.window_frac = 1.0});
  auto back = calibration_from_json(calibration_to_json(cal));
  ASSERT_EQ(back.components.size(), cal.components.size());
  for (std::size_t k = 0; k < cal.components.size(); ++k) {
    EXPECT_EQ(back.components[k].n, cal.components[k].n);
    EXPECT_DOUBLE_EQ(back.components[k].mu, cal.components[k].mu);
    EXPECT_DOUBLE_EQ(back.components[k].sigma, cal.components[k].sigma);
  }
  EXPECT_EQ(back.edges, cal.edges);
  EXPECT_EQ(back.window_frac, cal.window_frac);
  EXPECT_DOUBLE_EQ(back.overflow_edge, cal.overflow_edge);
}

TEST(CalibrationJson, RejectsWrongSchema) {
  auto j = calibration_to_json(build_calibration(ladder(2, 10.0, 1.0)));
  j["version"] = 99;
  EXPECT_THROW(calibration_from_json(j), FormatError);
  EXPECT_THROW(calibration_from_json(nlohmann::json::object()), FormatError);
}

}  // namespace
}  // namespace pnr
