#include "pnr/nist.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <mutex>
#include <numbers>
#include <ostream>
#include <thread>

#include <fftw3.h>

#include <boost/math/special_functions/gamma.hpp>

namespace pnr {
namespace {

double igamc(double a, double x) {
  if (x <= 0.0) return 1.0;
  return boost::math::gamma_q(a, x);
}

double phi(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

void require(BitSpan bits, std::size_t min_len, const char* test) {
  if (bits.size() < min_len) {
    throw SequenceTooShort(std::string(test) + " needs at least " + std::to_string(min_len) + " bits");
  }
}

// Pattern counts of every overlapping m-bit window, wrapping around the end.
std::vector<std::uint64_t> pattern_counts(BitSpan bits, int m) {
  std::vector<std::uint64_t> counts(std::size_t{1} << m, 0);
  if (m == 0) {
    counts[0] = bits.size();
    return counts;
  }
  std::size_t n = bits.size();
  std::uint32_t mask = (1u << m) - 1;
  std::uint32_t w = 0;
  for (int i = 0; i < m - 1; ++i) w = (w << 1) | bits[i % n];
  for (std::size_t i = 0; i < n; ++i) {
    w = ((w << 1) | bits[(i + m - 1) % n]) & mask;
    ++counts[w];
  }
  return counts;
}

double psi_squared(BitSpan bits, int m) {
  if (m <= 0) return 0.0;
  auto counts = pattern_counts(bits, m);
  double n = static_cast<double>(bits.size());
  double sum = 0.0;
  for (auto c : counts) sum += static_cast<double>(c) * static_cast<double>(c);
  return std::ldexp(sum, m) / n - n;
}

double apen_phi(BitSpan bits, int m) {
  if (m <= 0) return 0.0;
  auto counts = pattern_counts(bits, m);
  double n = static_cast<double>(bits.size());
  double sum = 0.0;
  for (auto c : counts) {
    if (c > 0) sum += (c / n) * std::log(c / n);
  }
  return sum;
}

double cusum_p(long n, long z) {
  double sn = std::sqrt(static_cast<double>(n));
  double sum1 = 0.0, sum2 = 0.0;
  // Integer division as in the reference implementation.
  for (long k = (-n / z + 1) / 4; k <= (n / z - 1) / 4; ++k) {
    sum1 += phi((4 * k + 1) * z / sn) - phi((4 * k - 1) * z / sn);
  }
  for (long k = (-n / z - 3) / 4; k <= (n / z - 1) / 4; ++k) {
    sum2 += phi((4 * k + 3) * z / sn) - phi((4 * k + 1) * z / sn);
  }
  return std::clamp(1.0 - sum1 + sum2, 0.0, 1.0);
}

std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

double frequency_test(BitSpan bits) {
  require(bits, 100, "frequency test");
  long s = 0;
  for (auto b : bits) s += b ? 1 : -1;
  double s_obs = std::abs(static_cast<double>(s)) / std::sqrt(static_cast<double>(bits.size()));
  return std::erfc(s_obs / std::numbers::sqrt2);
}

double block_frequency_test(BitSpan bits, int block_len) {
  if (block_len < 1) throw std::invalid_argument("block length must be positive");
  require(bits, static_cast<std::size_t>(block_len), "block frequency test");
  std::size_t blocks = bits.size() / block_len;
  double chi2 = 0.0;
  for (std::size_t i = 0; i < blocks; ++i) {
    int ones = 0;
    for (int j = 0; j < block_len; ++j) ones += bits[i * block_len + j];
    double pi = static_cast<double>(ones) / block_len - 0.5;
    chi2 += pi * pi;
  }
  chi2 *= 4.0 * block_len;
  return igamc(blocks / 2.0, chi2 / 2.0);
}

double runs_test(BitSpan bits) {
  require(bits, 100, "runs test");
  double n = static_cast<double>(bits.size());
  std::size_t ones = std::count(bits.begin(), bits.end(), std::uint8_t{1});
  double pi = ones / n;
  if (std::abs(pi - 0.5) >= 2.0 / std::sqrt(n)) return 0.0;
  std::size_t v = 1;
  for (std::size_t i = 1; i < bits.size(); ++i) v += bits[i] != bits[i - 1];
  double num = std::abs(v - 2.0 * n * pi * (1.0 - pi));
  return std::erfc(num / (2.0 * std::sqrt(2.0 * n) * pi * (1.0 - pi)));
}

int longest_run_block_length(std::size_t n) {
  if (n < 128) throw SequenceTooShort("longest run test needs at least 128 bits");
  if (n < 6272) return 8;
  if (n < 750000) return 128;
  return 10000;
}

double longest_run_test(BitSpan bits) {
  int m = longest_run_block_length(bits.size());
  std::vector<double> pi;
  int v_lo = 0;
  if (m == 8) {
    pi = {0.21484375, 0.3671875, 0.23046875, 0.1875};
    v_lo = 1;
  } else if (m == 128) {
    pi = {0.1174035788, 0.242955959, 0.249363483, 0.17517706, 0.102701071, 0.112398847};
    v_lo = 4;
  } else {
    pi = {0.0882, 0.2092, 0.2483, 0.1933, 0.1208, 0.0675, 0.0727};
    v_lo = 10;
  }
  int k = static_cast<int>(pi.size()) - 1;
  std::size_t blocks = bits.size() / m;
  std::vector<double> v(pi.size(), 0.0);
  for (std::size_t b = 0; b < blocks; ++b) {
    int run = 0, longest = 0;
    for (int j = 0; j < m; ++j) {
      run = bits[b * m + j] ? run + 1 : 0;
      longest = std::max(longest, run);
    }
    v[std::clamp(longest - v_lo, 0, k)] += 1.0;
  }
  double chi2 = 0.0;
  for (int i = 0; i <= k; ++i) {
    double e = blocks * pi[i];
    chi2 += (v[i] - e) * (v[i] - e) / e;
  }
  return igamc(k / 2.0, chi2 / 2.0);
}

double spectral_test(BitSpan bits) {
  require(bits, 100, "spectral test");
  int n = static_cast<int>(bits.size());
  double* in = fftw_alloc_real(n);
  fftw_complex* out = fftw_alloc_complex(n / 2 + 1);
  fftw_plan plan;
  {
    std::lock_guard lock(fftw_planner_mutex());
    plan = fftw_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE);
  }
  for (int i = 0; i < n; ++i) in[i] = bits[i] ? 1.0 : -1.0;
  fftw_execute(plan);
  double t = std::sqrt(std::log(1.0 / 0.05) * n);
  int n1 = 0;
  for (int i = 0; i < n / 2; ++i) {
    if (std::hypot(out[i][0], out[i][1]) < t) ++n1;
  }
  {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(plan);
  }
  fftw_free(in);
  fftw_free(out);
  double n0 = 0.95 * n / 2.0;
  double d = (n1 - n0) / std::sqrt(n * 0.95 * 0.05 / 4.0);
  return std::erfc(std::abs(d) / std::numbers::sqrt2);
}

CusumPair cumulative_sums_test(BitSpan bits) {
  require(bits, 100, "cumulative sums test");
  long s = 0, zf = 0;
  for (auto b : bits) {
    s += b ? 1 : -1;
    zf = std::max(zf, std::abs(s));
  }
  long zr = 0;
  s = 0;
  for (auto it = bits.rbegin(); it != bits.rend(); ++it) {
    s += *it ? 1 : -1;
    zr = std::max(zr, std::abs(s));
  }
  long n = static_cast<long>(bits.size());
  return {cusum_p(n, zf), cusum_p(n, zr)};
}

SerialPair serial_test(BitSpan bits, int m) {
  if (m < 2 || m > 24) throw std::invalid_argument("serial test needs 2 <= m <= 24");
  require(bits, static_cast<std::size_t>(m) + 1, "serial test");
  double p0 = psi_squared(bits, m), p1 = psi_squared(bits, m - 1), p2 = psi_squared(bits, m - 2);
  double del1 = p0 - p1;
  double del2 = p0 - 2.0 * p1 + p2;
  return {igamc(std::ldexp(1.0, m - 2), del1 / 2.0), igamc(std::ldexp(1.0, m - 3), del2 / 2.0)};
}

double approximate_entropy_test(BitSpan bits, int m) {
  if (m < 1 || m > 24) throw std::invalid_argument("approximate entropy needs 1 <= m <= 24");
  require(bits, static_cast<std::size_t>(m) + 2, "approximate entropy test");
  double apen = apen_phi(bits, m) - apen_phi(bits, m + 1);
  double n = static_cast<double>(bits.size());
  double chi2 = 2.0 * n * (std::numbers::ln2 - apen);
  return igamc(std::ldexp(1.0, m - 1), chi2 / 2.0);
}

const char* test_name(TestId id) {
  switch (id) {
    case TestId::kFrequency:
      return "frequency";
    case TestId::kBlockFrequency:
      return "block_frequency";
    case TestId::kCusumForward:
      return "cumulative_sums_forward";
    case TestId::kCusumReverse:
      return "cumulative_sums_reverse";
    case TestId::kRuns:
      return "runs";
    case TestId::kLongestRun:
      return "longest_run";
    case TestId::kSpectral:
      return "spectral";
    case TestId::kSerial1:
      return "serial_1";
    case TestId::kSerial2:
      return "serial_2";
    case TestId::kApproximateEntropy:
      return "approximate_entropy";
  }
  return "unknown";
}

TestId test_from_name(const std::string& name) {
  for (auto id : all_tests()) {
    if (name == test_name(id)) return id;
  }
  throw std::invalid_argument("unknown test: " + name);
}

std::vector<TestId> all_tests() {
  std::vector<TestId> out;
  for (int i = 0; i < kTestCount; ++i) out.push_back(static_cast<TestId>(i));
  return out;
}

TestParams TestParams::recommended(std::uint64_t n) {
  TestParams p;
  int log2n = n > 0 ? std::bit_width(n) - 1 : 0;
  p.serial_m = std::clamp(log2n - 3, 2, 16);
  p.entropy_m = std::clamp(log2n - 6, 1, 10);
  return p;
}

TrialPlan TrialPlan::with_trial_size(std::uint64_t trial_size) {
  TrialPlan p;
  p.trial_size = trial_size;
  p.params = TestParams::recommended(trial_size);
  return p;
}

void TrialPlan::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must be in (0, 1)");
  if (tests.empty()) throw std::invalid_argument("no tests selected");
  if (trial_size < 100000) throw std::invalid_argument("trial size must be at least 100000 bits");
  int log2n = std::bit_width(trial_size) - 1;
  if (params.serial_m < 2 || params.serial_m >= log2n - 2) {
    throw std::invalid_argument("serial m must satisfy 2 <= m < log2(trial_size) - 2");
  }
  if (params.entropy_m < 1 || params.entropy_m >= log2n - 5) {
    throw std::invalid_argument("entropy m must satisfy 1 <= m < log2(trial_size) - 5");
  }
  if (params.block_frequency_len < 20 || static_cast<std::uint64_t>(params.block_frequency_len) > trial_size) {
    throw std::invalid_argument("block frequency length must be in [20, trial_size]");
  }
}

std::uint64_t trial_count(std::uint64_t bits, std::uint64_t trial_size) {
  if (trial_size == 0) throw std::invalid_argument("trial size must be positive");
  return bits / trial_size;
}

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("quantile needs 0 < p < 1");
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01,  -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  double x;
  if (p < p_low) {
    double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  double e = 0.5 * std::erfc(-x / std::numbers::sqrt2) - p;
  double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

Interval wilson_interval(double n_s, std::uint64_t n, double alpha) {
  if (n == 0) throw std::domain_error("Wilson interval needs n >= 1");
  if (!(n_s >= 0.0 && n_s <= static_cast<double>(n))) throw std::domain_error("successes must be in [0, n]");
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::domain_error("alpha must be in (0, 1)");
  double z = normal_quantile(1.0 - alpha / 2.0);
  double dn = static_cast<double>(n);
  double n_f = dn - n_s;
  double z2 = z * z;
  double center = (n_s + z2 / 2.0) / (dn + z2);
  double half = z / (dn + z2) * std::sqrt(n_s * n_f / dn + z2 / 4.0);
  return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

void score_outcome(TestOutcome& o, double alpha) {
  o.n = o.p_values.size();
  o.n_s = std::count_if(o.p_values.begin(), o.p_values.end(), [&](double p) { return p >= alpha; });
  if (o.n == 0) {
    o.proportion = 0.0;
    o.pass = false;
    return;
  }
  o.proportion = static_cast<double>(o.n_s) / o.n;
  auto observed = wilson_interval(static_cast<double>(o.n_s), o.n, alpha);
  o.ci_low = observed.low;
  o.ci_high = observed.high;
  o.threshold = wilson_interval((1.0 - alpha) * o.n, o.n, alpha).low;
  o.pass = o.proportion >= o.threshold;
}

namespace {

void run_trial(BitSpan t, const TrialPlan& plan, std::vector<double>& out) {
  auto wants = [&](TestId id) { return std::find(plan.tests.begin(), plan.tests.end(), id) != plan.tests.end(); };
  out.assign(kTestCount, std::numeric_limits<double>::quiet_NaN());
  auto set = [&](TestId id, double p) { out[static_cast<int>(id)] = p; };
  if (wants(TestId::kFrequency)) set(TestId::kFrequency, frequency_test(t));
  if (wants(TestId::kBlockFrequency)) set(TestId::kBlockFrequency, block_frequency_test(t, plan.params.block_frequency_len));
  if (wants(TestId::kCusumForward) || wants(TestId::kCusumReverse)) {
    auto c = cumulative_sums_test(t);
    set(TestId::kCusumForward, c.forward);
    set(TestId::kCusumReverse, c.reverse);
  }
  if (wants(TestId::kRuns)) set(TestId::kRuns, runs_test(t));
  if (wants(TestId::kLongestRun)) set(TestId::kLongestRun, longest_run_test(t));
  if (wants(TestId::kSpectral)) set(TestId::kSpectral, spectral_test(t));
  if (wants(TestId::kSerial1) || wants(TestId::kSerial2)) {
    auto s = serial_test(t, plan.params.serial_m);
    set(TestId::kSerial1, s.p1);
    set(TestId::kSerial2, s.p2);
  }
  if (wants(TestId::kApproximateEntropy)) {
    set(TestId::kApproximateEntropy, approximate_entropy_test(t, plan.params.entropy_m));
  }
}

std::vector<TestOutcome> collect(const std::vector<std::vector<double>>& per_trial, const TrialPlan& plan) {
  std::vector<TestOutcome> outcomes;
  for (auto id : plan.tests) {
    TestOutcome o;
    o.id = id;
    for (const auto& row : per_trial) o.p_values.push_back(row[static_cast<int>(id)]);
    score_outcome(o, plan.alpha);
    outcomes.push_back(std::move(o));
  }
  return outcomes;
}

template <typename Fill>
std::vector<TestOutcome> run_trials(std::uint64_t trials, const TrialPlan& plan, int threads, Fill fill) {
  if (trials == 0) throw SequenceTooShort("stream is shorter than one trial");
  std::vector<std::vector<double>> per_trial(trials);
  auto worker = [&](std::uint64_t first, std::uint64_t step) {
    std::vector<std::uint8_t> buf;
    for (std::uint64_t i = first; i < trials; i += step) {
      fill(i, buf);
      run_trial(buf, plan, per_trial[i]);
    }
  };
  int workers = std::max(1, std::min<int>(threads, static_cast<int>(trials)));
  if (workers == 1) {
    worker(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker, w, workers);
    for (auto& t : pool) t.join();
  }
  return collect(per_trial, plan);
}

}  // namespace

std::vector<TestOutcome> run_test_suite(const BitStream& stream, const TrialPlan& plan, int threads) {
  plan.validate();
  auto trials = trial_count(stream.size(), plan.trial_size);
  return run_trials(trials, plan, threads, [&](std::uint64_t i, std::vector<std::uint8_t>& buf) {
    buf = stream.unpack(i * plan.trial_size, plan.trial_size);
  });
}

std::vector<TestOutcome> run_test_suite(BitSpan bits, const TrialPlan& plan, int threads) {
  plan.validate();
  auto trials = trial_count(bits.size(), plan.trial_size);
  return run_trials(trials, plan, threads, [&](std::uint64_t i, std::vector<std::uint8_t>& buf) {
    auto s = bits.subspan(i * plan.trial_size, plan.trial_size);
    buf.assign(s.begin(), s.end());
  });
}

Verdict verdict(std::span<const TestOutcome> outcomes) {
  Verdict v;
  for (const auto& o : outcomes) {
    if (!o.pass) v.failed.push_back(o.id);
  }
  v.random = !outcomes.empty() && v.failed.empty();
  return v;
}

nlohmann::json report_to_json(std::span<const TestOutcome> outcomes, const TrialPlan& plan) {
  nlohmann::json tests = nlohmann::json::array();
  for (const auto& o : outcomes) {
    tests.push_back({{"test", test_name(o.id)},
                     {"n", o.n},
                     {"n_s", o.n_s},
                     {"proportion", o.proportion},
                     {"ci_low", o.ci_low},
                     {"ci_high", o.ci_high},
                     {"threshold", o.threshold},
                     {"pass", o.pass}});
  }
  auto v = verdict(outcomes);
  return {{"schema", "pnr.randomness"},
          {"version", 1},
          {"trial_size", plan.trial_size},
          {"alpha", plan.alpha},
          {"z", normal_quantile(1.0 - plan.alpha / 2.0)},
          {"trials", outcomes.empty() ? 0 : outcomes.front().n},
          {"params",
           {{"block_frequency_len", plan.params.block_frequency_len},
            {"serial_m", plan.params.serial_m},
            {"entropy_m", plan.params.entropy_m},
            {"longest_run_block", longest_run_block_length(plan.trial_size)}}},
          {"tests", tests},
          {"verdict", v.random ? "random" : "not-random"}};
}

void write_report_csv(std::ostream& out, std::span<const TestOutcome> outcomes) {
  out << "test,n,n_s,proportion,ci_low,ci_high,threshold,pass\n";
  out.precision(10);
  for (const auto& o : outcomes) {
    out << test_name(o.id) << ',' << o.n << ',' << o.n_s << ',' << o.proportion << ',' << o.ci_low << ','
        << o.ci_high << ',' << o.threshold << ',' << (o.pass ? 1 : 0) << '\n';
  }
}

void write_p_values_csv(std::ostream& out, std::span<const TestOutcome> outcomes) {
  out << "trial";
  for (const auto& o : outcomes) out << ',' << test_name(o.id);
  out << '\n';
  out.precision(10);
  std::size_t trials = outcomes.empty() ? 0 : outcomes.front().p_values.size();
  for (std::size_t t = 0; t < trials; ++t) {
    out << t;
    for (const auto& o : outcomes) out << ',' << o.p_values[t];
    out << '\n';
  }
}

}  // namespace pnr
