#include "pnr/nist.h"

#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "gtest/gtest.h"
#include "pnr/random.h"
#include "pnr/stats.h"

namespace pnr {
namespace {

std::vector<std::uint8_t> parse(const std::string& s) {
  std::vector<std::uint8_t> b;
  for (char c : s) b.push_back(c == '1');
  return b;
}

std::vector<std::uint8_t> random_bits(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::uint8_t> b(n);
  for (std::size_t i = 0; i < n; i += 64) {
    std::uint64_t w = rng.next_u64();
    for (std::size_t j = 0; j < 64 && i + j < n; ++j) b[i + j] = (w >> j) & 1u;
  }
  return b;
}

// The first 100 binary digits of pi.
const std::vector<std::uint8_t> kPi = parse(
    "1100100100001111110110101010001000100001011010001100001000110100110001001100011001100010100010111000");

TEST(Frequency, PiDigits) { EXPECT_NEAR(frequency_test(kPi), 0.109599, 1e-6); }

TEST(Frequency, AllZerosUnderflowsNothing) {
  std::vector<std::uint8_t> z(100, 0);
  EXPECT_NEAR(frequency_test(z) / 1.524e-23, 1.0, 1e-3);
  EXPECT_THROW(frequency_test(std::vector<std::uint8_t>(99, 0)), SequenceTooShort);
}

TEST(BlockFrequency, PiDigits) { EXPECT_NEAR(block_frequency_test(kPi, 10), 0.706438, 1e-6); }

TEST(Runs, PiDigits) { EXPECT_NEAR(runs_test(kPi), 0.500798, 1e-6); }

TEST(CumulativeSums, PiDigits) {
  auto p = cumulative_sums_test(kPi);
  EXPECT_NEAR(p.forward, 0.219194, 1e-6);
  EXPECT_NEAR(p.reverse, 0.114866, 1e-6);
}

TEST(ApproximateEntropy, PiDigits) { EXPECT_NEAR(approximate_entropy_test(kPi, 2), 0.235301, 1e-6); }

TEST(ApproximateEntropy, ShortExample) {
  EXPECT_NEAR(approximate_entropy_test(parse("0100110101"), 3), 0.261961, 1e-6);
}

TEST(Serial, PiDigits) {
  auto p = serial_test(kPi, 2);
  EXPECT_NEAR(p.p1, 0.256661, 1e-6);
  EXPECT_NEAR(p.p2, 0.689157, 1e-6);
}

TEST(Serial, ShortExample) {
  auto p = serial_test(parse("0011011101"), 3);
  EXPECT_NEAR(p.p1, 0.808792, 1e-6);
  EXPECT_NEAR(p.p2, 0.670320, 1e-6);
}

TEST(Spectral, PiDigits) { EXPECT_NEAR(spectral_test(kPi), 0.646355, 1e-6); }

TEST(LongestRun, ReferenceVector) {
  auto bits = parse(
      "11001100000101010110110001001100111000000000001001001101010100010001001111010110100000001101011111001100"
      "111001101101100010110010");
  ASSERT_EQ(bits.size(), 128u);
  EXPECT_NEAR(longest_run_test(bits), 0.180609, 1e-6);
}

TEST(LongestRun, BlockLengthByLength) {
  EXPECT_EQ(longest_run_block_length(128), 8);
  EXPECT_EQ(longest_run_block_length(6271), 8);
  EXPECT_EQ(longest_run_block_length(6272), 128);
  EXPECT_EQ(longest_run_block_length(750000), 10000);
  EXPECT_THROW(longest_run_block_length(127), SequenceTooShort);
}

// P-values of each test on independent uniform sequences are uniform.
struct UniformityCase {
  const char* name;
  std::function<std::vector<double>(BitSpan)> run;
};

void PrintTo(const UniformityCase& c, std::ostream* os) { *os << c.name; }

class PValueUniformity : public ::testing::TestWithParam<UniformityCase> {};

TEST_P(PValueUniformity, KolmogorovSmirnov) {
  const auto& c = GetParam();
  std::vector<std::vector<double>> ps;
  for (int i = 0; i < 500; ++i) {
    auto bits = random_bits(20000, derive_seed(2024, std::hash<std::string>{}(c.name) & 0xFFFF, i));
    auto p = c.run(bits);
    if (ps.empty()) ps.resize(p.size());
    for (std::size_t k = 0; k < p.size(); ++k) {
      ASSERT_GE(p[k], 0.0);
      ASSERT_LE(p[k], 1.0);
      ps[k].push_back(p[k]);
    }
  }
  for (const auto& v : ps) EXPECT_GT(ks_uniform_p_value(v), 0.001) << c.name;
}

INSTANTIATE_TEST_SUITE_P(
    CoreTests, PValueUniformity,
    ::testing::Values(
        UniformityCase{"frequency", [](BitSpan b) { return std::vector<double>{frequency_test(b)}; }},
        UniformityCase{"block_frequency", [](BitSpan b) { return std::vector<double>{block_frequency_test(b, 128)}; }},
        UniformityCase{"runs", [](BitSpan b) { return std::vector<double>{runs_test(b)}; }},
        UniformityCase{"longest_run", [](BitSpan b) { return std::vector<double>{longest_run_test(b)}; }},
        UniformityCase{"spectral", [](BitSpan b) { return std::vector<double>{spectral_test(b)}; }},
        UniformityCase{"cumulative_sums",
                       [](BitSpan b) {
                         auto p = cumulative_sums_test(b);
                         return std::vector<double>{p.forward, p.reverse};
                       }},
        UniformityCase{"serial",
                       [](BitSpan b) {
                         auto p = serial_test(b, 6);
                         return std::vector<double>{p.p1, p.p2};
                       }},
        UniformityCase{"approximate_entropy",
                       [](BitSpan b) { return std::vector<double>{approximate_entropy_test(b, 4)}; }}),
    [](const auto& info) { return std::string(info.param.name); });

TEST(Wilson, AllSuccessesAt431) {
  auto ci = wilson_interval(431, 431, 0.01);
  EXPECT_NEAR(ci.low, 0.9848392, 1e-7);
  EXPECT_DOUBLE_EQ(ci.high, 1.0);
  EXPECT_NEAR(normal_quantile(1.0 - 0.005), 2.5758293035489004, 1e-12);
}

TEST(Wilson, SymmetricUnderSuccessFailureSwap) {
  for (std::uint64_t n : {10u, 143u, 1000u}) {
    for (double k = 0; k <= n; k += n / 10.0) {
      auto a = wilson_interval(k, n, 0.05);
      auto b = wilson_interval(n - k, n, 0.05);
      EXPECT_NEAR(a.low, 1.0 - b.high, 1e-12);
      EXPECT_NEAR(a.high, 1.0 - b.low, 1e-12);
    }
  }
}

TEST(Wilson, EndpointsInUnitIntervalAndOrdered) {
  for (std::uint64_t n : {1u, 2u, 7u, 50u, 719u}) {
    for (std::uint64_t k = 0; k <= n; ++k) {
      for (double alpha : {0.001, 0.01, 0.1}) {
        auto ci = wilson_interval(static_cast<double>(k), n, alpha);
        EXPECT_GE(ci.low, 0.0);
        EXPECT_LE(ci.high, 1.0);
        EXPECT_LT(ci.low, ci.high);
      }
    }
  }
}

TEST(Wilson, ApproachesNormalIntervalForLargeN) {
  const double p = 0.3, z = normal_quantile(0.975);
  double prev_ratio = 0.0;
  for (std::uint64_t n : {1000u, 100000u, 10000000u}) {
    auto ci = wilson_interval(p * n, n, 0.05);
    double wald = z * std::sqrt(p * (1 - p) / n);
    double ratio = (ci.high - ci.low) / (2.0 * wald);
    EXPECT_NEAR(ratio, 1.0, 2.0 / std::sqrt(static_cast<double>(n)));
    EXPECT_NEAR(0.5 * (ci.high + ci.low), p, 1.0 / n);
    if (prev_ratio > 0.0) EXPECT_LE(std::abs(ratio - 1.0), std::abs(prev_ratio - 1.0) + 1e-12);
    prev_ratio = ratio;
  }
  EXPECT_THROW(wilson_interval(1, 0, 0.01), std::domain_error);
}

TEST(NormalQuantile, Accuracy) {
  for (double p : {1e-10, 0.001, 0.025, 0.3, 0.5, 0.8, 0.995, 1 - 1e-9}) {
    double x = normal_quantile(p);
    EXPECT_NEAR(0.5 * std::erfc(-x / std::sqrt(2.0)), p, 1e-12 * std::max(1.0, p / (1 - p)));
  }
  EXPECT_DOUBLE_EQ(normal_quantile(0.5), 0.0);
}

TEST(Trials, PaperArithmetic) {
  const std::uint64_t events = 107911769;
  const std::uint64_t expected[] = {143, 287, 431, 575, 719};
  for (int d = 1; d <= 5; ++d) EXPECT_EQ(trial_count(events * d, 750000), expected[d - 1]);
}

TEST(Plan, Validation) {
  TrialPlan p;
  EXPECT_NO_THROW(p.validate());
  p.trial_size = 50000;
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p = TrialPlan::with_trial_size(100000);
  EXPECT_NO_THROW(p.validate());
  p.alpha = 1.0;
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p = {};
  p.params.serial_m = 17;
  EXPECT_THROW(p.validate(), std::invalid_argument);
  EXPECT_EQ(TestParams::recommended(750000).serial_m, 16);
  EXPECT_EQ(TestParams::recommended(750000).entropy_m, 10);
}

TEST(Names, RoundTrip) {
  for (TestId id : all_tests()) EXPECT_EQ(test_from_name(test_name(id)), id);
  EXPECT_EQ(all_tests().size(), static_cast<std::size_t>(kTestCount));
  EXPECT_THROW(test_from_name("rank"), std::invalid_argument);
}

TEST(Score, ThresholdAtExpectedRate) {
  TestOutcome o;
  o.p_values.assign(100, 0.5);
  for (int i = 0; i < 4; ++i) o.p_values[i] = 0.001;
  score_outcome(o, 0.01);
  EXPECT_EQ(o.n, 100u);
  EXPECT_EQ(o.n_s, 96u);
  EXPECT_DOUBLE_EQ(o.proportion, 0.96);
  EXPECT_NEAR(o.threshold, wilson_interval(99.0, 100, 0.01).low, 1e-15);
  EXPECT_TRUE(o.pass);
  EXPECT_LT(o.ci_low, o.ci_high);
  for (int i = 4; i < 8; ++i) o.p_values[i] = 0.001;
  score_outcome(o, 0.01);
  EXPECT_FALSE(o.pass);
}

TEST(Suite, DeterministicAcrossThreads) {
  auto bits = random_bits(4 * 100000, 9);
  auto plan = TrialPlan::with_trial_size(100000);
  auto a = run_test_suite(bits, plan, 1);
  auto b = run_test_suite(bits, plan, 3);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].p_values, b[i].p_values);
    EXPECT_EQ(a[i].n, 4u);
  }
  BitStream s(1);
  for (auto bit : bits) s.append_bit(bit);
  auto c = run_test_suite(s, plan, 2);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].p_values, c[i].p_values);
}

TEST(Suite, BiasedStreamFails) {
  std::vector<std::uint8_t> bits = random_bits(2 * 100000, 10);
  for (std::size_t i = 0; i < bits.size(); i += 10) bits[i] = 1;
  auto out = run_test_suite(bits, TrialPlan::with_trial_size(100000));
  auto v = verdict(out);
  EXPECT_FALSE(v.random);
  EXPECT_FALSE(v.failed.empty());
}

TEST(Report, JsonAndCsv) {
  auto bits = random_bits(100000, 11);
  auto plan = TrialPlan::with_trial_size(100000);
  auto out = run_test_suite(bits, plan);
  auto j = report_to_json(out, plan);
  EXPECT_EQ(j["tests"].size(), out.size());
  EXPECT_TRUE(j.contains("verdict"));
  std::stringstream s;
  write_report_csv(s, out);
  EXPECT_EQ(s.str().substr(0, s.str().find('\n')), "test,n,n_s,proportion,ci_low,ci_high,threshold,pass");
}

}  // namespace
}  // namespace pnr
