#include "pnr/stats.h"

#include <cmath>
#include <vector>

#include "gtest/gtest.h"
#include "pnr/random.h"

namespace pnr {
namespace {

TEST(ChiSquare, SurvivalFunction) {
  EXPECT_NEAR(chi_square_sf(3.841458820694124, 1), 0.05, 1e-12);
  EXPECT_NEAR(chi_square_sf(2.0, 2), std::exp(-1.0), 1e-14);
  EXPECT_DOUBLE_EQ(chi_square_sf(0.0, 3), 1.0);
}

TEST(ChiSquare, PerfectFit) {
  std::vector<std::uint64_t> obs{25, 25, 25, 25};
  std::vector<double> p{0.25, 0.25, 0.25, 0.25};
  auto r = chi_square_gof(obs, p);
  EXPECT_DOUBLE_EQ(r.statistic, 0.0);
  EXPECT_EQ(r.dof, 3);
  EXPECT_DOUBLE_EQ(r.p_value, 1.0);
}

TEST(ChiSquare, PoolsSparseTails) {
  std::vector<std::uint64_t> obs{1, 2, 40, 50, 5, 1, 1};
  std::vector<double> p{0.01, 0.02, 0.4, 0.5, 0.05, 0.01, 0.01};
  auto r = chi_square_gof(obs, p);
  EXPECT_LT(r.dof, 6);
  EXPECT_GT(r.p_value, 0.5);
}

TEST(ChiSquare, RejectsWrongDistribution) {
  std::vector<std::uint64_t> obs{600, 400};
  std::vector<double> p{0.5, 0.5};
  EXPECT_LT(chi_square_gof(obs, p).p_value, 1e-9);
}

TEST(ChiSquare, TwoSample) {
  std::vector<std::uint64_t> a{100, 200, 300}, b{200, 400, 600}, c{300, 200, 100};
  EXPECT_NEAR(chi_square_two_sample(a, b).p_value, 1.0, 1e-12);
  EXPECT_LT(chi_square_two_sample(a, c).p_value, 1e-9);
}

TEST(KolmogorovSmirnov, UniformAndSkewed) {
  Rng rng(1);
  std::vector<double> u, s;
  for (int i = 0; i < 2000; ++i) {
    double x = rng.uniform();
    u.push_back(x);
    s.push_back(x * x);
  }
  EXPECT_GT(ks_uniform_p_value(u), 0.001);
  EXPECT_LT(ks_uniform_p_value(s), 1e-6);
}

TEST(Correlation, Extremes) {
  std::vector<double> x{1, 2, 3, 4}, y{2, 4, 6, 8}, z{4, 3, 2, 1};
  EXPECT_NEAR(pearson_correlation(x, y), 1.0, 1e-15);
  EXPECT_NEAR(pearson_correlation(x, z), -1.0, 1e-15);
}

}  // namespace
}  // namespace pnr
