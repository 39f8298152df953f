#ifndef PNR_NIST_H
#define PNR_NIST_H

// A core subset of the SP800-22 statistical tests, run per fixed-size trial,
// with pass proportions judged against Wilson score bounds.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "pnr/qrng.h"

namespace pnr {

class SequenceTooShort : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Bits are 0/1 bytes.
using BitSpan = std::span<const std::uint8_t>;

double frequency_test(BitSpan bits);
double block_frequency_test(BitSpan bits, int block_len);
double runs_test(BitSpan bits);
/// Block length 8, 128 or 10^4 chosen from the sequence length.
double longest_run_test(BitSpan bits);
int longest_run_block_length(std::size_t n);
double spectral_test(BitSpan bits);
struct CusumPair {
  double forward = 0.0;
  double reverse = 0.0;
};
CusumPair cumulative_sums_test(BitSpan bits);
struct SerialPair {
  double p1 = 0.0;
  double p2 = 0.0;
};
SerialPair serial_test(BitSpan bits, int m);
double approximate_entropy_test(BitSpan bits, int m);

/// One entry per reported P-value.
enum class TestId : std::uint8_t {
  kFrequency,
  kBlockFrequency,
  kCusumForward,
  kCusumReverse,
  kRuns,
  kLongestRun,
  kSpectral,
  kSerial1,
  kSerial2,
  kApproximateEntropy,
};
inline constexpr int kTestCount = 10;
const char* test_name(TestId id);
TestId test_from_name(const std::string& name);
std::vector<TestId> all_tests();

struct TestParams {
  int block_frequency_len = 128;
  int serial_m = 16;
  int entropy_m = 10;

  /// Standard parameters for trials of n bits; m values shrink for short
  /// trials so the pattern tests stay within their validity limits.
  static TestParams recommended(std::uint64_t n);
};

struct TrialPlan {
  std::uint64_t trial_size = 750000;
  double alpha = 0.01;
  std::vector<TestId> tests = all_tests();
  TestParams params = TestParams::recommended(750000);

  static TrialPlan with_trial_size(std::uint64_t trial_size);
  void validate() const;
};

/// Number of whole trials in a stream of `bits`.
std::uint64_t trial_count(std::uint64_t bits, std::uint64_t trial_size);

/// Lower-tail inverse of the standard normal CDF. Acklam's rational
/// approximation refined by one Halley step (error well below 1e-12).
double normal_quantile(double p);

struct Interval {
  double low = 0.0;
  double high = 1.0;
};

/// Wilson score interval for n_s successes in n trials at confidence 1-alpha.
/// n_s may be fractional (an expected count).
Interval wilson_interval(double n_s, std::uint64_t n, double alpha);

struct TestOutcome {
  TestId id = TestId::kFrequency;
  std::vector<double> p_values;  // one per trial
  std::uint64_t n = 0;
  std::uint64_t n_s = 0;
  double proportion = 0.0;
  double ci_low = 0.0;  // Wilson interval around the observed proportion
  double ci_high = 1.0;
  double threshold = 0.0;  // Wilson lower bound at the expected pass rate 1-alpha
  bool pass = false;
};

/// Splits the stream into trial_count disjoint trials. Results do not
/// depend on `threads`.
std::vector<TestOutcome> run_test_suite(const BitStream& stream, const TrialPlan& plan, int threads = 1);
/// Same on explicit 0/1 bits.
std::vector<TestOutcome> run_test_suite(BitSpan bits, const TrialPlan& plan, int threads = 1);

/// Fills n_s, proportion, intervals and pass from the P-values: a trial
/// passes when P >= alpha, a test when its proportion is at or above the
/// Wilson lower bound computed at the expected success count (1-alpha) n.
void score_outcome(TestOutcome& outcome, double alpha);

struct Verdict {
  bool random = false;
  std::vector<TestId> failed;
};
Verdict verdict(std::span<const TestOutcome> outcomes);

nlohmann::json report_to_json(std::span<const TestOutcome> outcomes, const TrialPlan& plan);
/// Columns test,n,n_s,proportion,ci_low,ci_high,threshold,pass.
void write_report_csv(std::ostream& out, std::span<const TestOutcome> outcomes);
/// Columns trial then one per test.
void write_p_values_csv(std::ostream& out, std::span<const TestOutcome> outcomes);

}  // namespace pnr

#endif
