#include "pnr/detector.h"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

#include "pnr/io_util.h"
#include "pnr/random.h"

namespace pnr {

void WaveformParams::validate() const {
  if (!(sample_rate > 0.0) || record_len <= 0) {
    throw std::invalid_argument("sample_rate and record_len must be positive");
  }
  if (adc_bits != 12) {
    throw std::invalid_argument("only 12-bit digitizer records are supported");
  }
  if (trigger_time < 0 || trigger_time >= record_len) {
    throw std::invalid_argument("trigger_time must lie inside the record");
  }
  if (!(tau_rise > 0.0) || !(tau_rise < tau_fall0)) {
    throw std::invalid_argument("need 0 < tau_rise < tau_fall0");
  }
  if (!(v_max > 0.0) || !(n_sat > 0.0) || !(tail_slope >= 0.0)) {
    throw std::invalid_argument("v_max and n_sat must be positive, tail_slope non-negative");
  }
  if (!(noise_sigma >= 0.0) || !(energy_sigma0 >= 0.0) || !(energy_sigma_per_photon >= 0.0)) {
    throw std::invalid_argument("noise parameters must be non-negative");
  }
}

double WaveformParams::amplitude(double energy) const { return v_max * -std::expm1(-energy / n_sat); }

double WaveformParams::energy_sigma(int n) const {
  return std::sqrt(energy_sigma0 * energy_sigma0 + energy_sigma_per_photon * energy_sigma_per_photon * n);
}

double WaveformParams::shape(double energy, double t) const {
  if (t < 0.0 || energy <= 0.0) {
    return 0.0;
  }
  return amplitude(energy) * (std::exp(-t / tau_fall_samples(energy)) - std::exp(-t / tau_rise_samples()));
}

double WaveformParams::noiseless_area(double energy) const {
  if (energy <= 0.0) {
    return 0.0;
  }
  return amplitude(energy) * (tau_fall_samples(energy) - tau_rise_samples());
}

void DaqThresholds::validate() const {
  if (low > high) {
    throw std::invalid_argument("low threshold must not exceed the high threshold");
  }
  if (low < 1) {
    throw std::invalid_argument("thresholds must be at least one ADC count");
  }
}

namespace {

void check_photons(int n) {
  if (n < 0 || n > kMaxPhotonsPerChannel) {
    throw std::out_of_range("photon number " + std::to_string(n) + " outside the resolvable range [0, " +
                            std::to_string(kMaxPhotonsPerChannel) + "]");
  }
}

// Produces the digitized samples of one pulse in order. Both the full
// synthesis and the early-exit feature path pull from this, so they consume
// the generator identically.
class SampleSource {
 public:
  SampleSource(int n, const WaveformParams& p, std::uint64_t seed) : p_(p), rng_(seed) {
    if (n > 0) {
      double sigma = p.energy_sigma(n);
      energy_ = n + (sigma > 0.0 ? sigma * rng_.normal() : 0.0);
      energy_ = std::max(energy_, 0.0);
    }
    if (energy_ > 0.0) {
      amp_ = p.amplitude(energy_);
      decay_fall_ = std::exp(-1.0 / p.tau_fall_samples(energy_));
      decay_rise_ = std::exp(-1.0 / p.tau_rise_samples());
    }
  }

  std::uint16_t next() {
    double v = p_.noise_offset;
    if (amp_ > 0.0 && index_ >= p_.trigger_time) {
      // Recurrence e^{-t/tau} for integer t; matches shape() to ~1e-12 relative.
      v += amp_ * (fall_ - rise_);
      fall_ *= decay_fall_;
      rise_ *= decay_rise_;
    }
    if (p_.noise_sigma > 0.0) {
      v += p_.noise_sigma * rng_.normal();
    }
    ++index_;
    double r = std::nearbyint(v);
    r = std::clamp(r, 0.0, static_cast<double>(p_.adc_max()));
    return static_cast<std::uint16_t>(r);
  }

 private:
  const WaveformParams& p_;
  Rng rng_;
  double energy_ = 0.0;
  double amp_ = 0.0;
  double decay_fall_ = 1.0, decay_rise_ = 1.0;
  double fall_ = 1.0, rise_ = 1.0;
  int index_ = 0;
};

// Incremental form of extract_features.
class WindowTracker {
 public:
  explicit WindowTracker(const DaqThresholds& thr) : thr_(thr) {}

  // Returns false once the window has closed.
  bool push(int index, int x) {
    if (closed_) {
      return false;
    }
    if (!open_) {
      if (x >= thr_.high) {
        open_ = true;
        f_.t_start = index;
        add(index, x);
      }
      return true;
    }
    if (x < thr_.low) {
      closed_ = true;
      return false;
    }
    add(index, x);
    return true;
  }

  std::optional<PulseFeatures> result() const {
    if (!open_) {
      return std::nullopt;
    }
    return f_;
  }

 private:
  void add(int index, int x) {
    f_.area += x;
    ++f_.duration;
    if (x > f_.height) {
      f_.height = x;
      f_.t_peak = index;
    }
  }

  const DaqThresholds& thr_;
  PulseFeatures f_;
  bool open_ = false;
  bool closed_ = false;
};

}  // namespace

std::optional<PulseFeatures> extract_features(std::span<const std::uint16_t> samples, const DaqThresholds& thr) {
  thr.validate();
  WindowTracker tracker(thr);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!tracker.push(static_cast<int>(i), samples[i])) {
      break;
    }
  }
  return tracker.result();
}

namespace {

Waveform synth_any(int n, const WaveformParams& params, std::uint64_t seed) {
  params.validate();
  if (n < 0) throw std::out_of_range("negative photon number");
  SampleSource source(n, params, seed);
  Waveform w;
  w.trigger_time = static_cast<std::uint32_t>(params.trigger_time);
  w.samples.resize(params.record_len);
  for (auto& s : w.samples) {
    s = source.next();
  }
  return w;
}

std::optional<PulseFeatures> features_any(int n, const WaveformParams& params, const DaqThresholds& thr,
                                          std::uint64_t seed) {
  params.validate();
  thr.validate();
  if (n < 0) throw std::out_of_range("negative photon number");
  SampleSource source(n, params, seed);
  WindowTracker tracker(thr);
  for (int i = 0; i < params.record_len; ++i) {
    if (!tracker.push(i, source.next())) {
      break;
    }
  }
  return tracker.result();
}

}  // namespace

Waveform synth_pulse(int n, const WaveformParams& params, std::uint64_t seed) {
  check_photons(n);
  return synth_any(n, params, seed);
}

std::optional<PulseFeatures> simulate_features(int n, const WaveformParams& params, const DaqThresholds& thr,
                                               std::uint64_t seed) {
  check_photons(n);
  return features_any(n, params, thr, seed);
}

Waveform synth_response(int n, const WaveformParams& params, std::uint64_t seed) {
  return synth_any(n, params, seed);
}

std::optional<PulseFeatures> simulate_response(int n, const WaveformParams& params, const DaqThresholds& thr,
                                               std::uint64_t seed) {
  return features_any(n, params, thr, seed);
}

namespace {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

struct TailMoments {
  double prob = 0.0;     // P(x >= t)
  double partial = 0.0;  // E[x 1{x >= t}]
};

// Moments of x = clamp(round(m + sigma Z), 0, adc_max) above integer t >= 1.
TailMoments tail_moments(double m, double sigma, int t, int adc_max) {
  if (sigma == 0.0) {
    double x = std::clamp(std::nearbyint(m), 0.0, static_cast<double>(adc_max));
    return x >= t ? TailMoments{1.0, x} : TailMoments{};
  }
  constexpr double kSpan = 12.0;
  if (t > m + kSpan * sigma) {
    return {};
  }
  if (t <= m - kSpan * sigma && m + kSpan * sigma < adc_max - 0.5) {
    return {1.0, m};
  }
  int lo = std::max(t, static_cast<int>(std::floor(m - kSpan * sigma)));
  int hi = std::min(adc_max, static_cast<int>(std::ceil(m + kSpan * sigma)));
  TailMoments out;
  for (int k = lo; k <= hi; ++k) {
    double upper = (k == adc_max) ? 1.0 : normal_cdf((k + 0.5 - m) / sigma);
    // When lo > t the first term absorbs the (negligible) mass in [t, lo).
    double lower = (k == lo && lo > t) ? 0.0 : normal_cdf((k - 0.5 - m) / sigma);
    double p = upper - lower;
    out.prob += p;
    out.partial += k * p;
  }
  return out;
}

double expected_area_given_energy(double energy, const WaveformParams& p, const DaqThresholds& thr) {
  double p_wait = 1.0;
  double p_open = 0.0;
  double area = 0.0;
  const int adc_max = p.adc_max();
  for (int j = 0; j < p.record_len; ++j) {
    double m = p.noise_offset + p.shape(energy, j - p.trigger_time);
    TailMoments hi = tail_moments(m, p.noise_sigma, thr.high, adc_max);
    TailMoments lo = tail_moments(m, p.noise_sigma, thr.low, adc_max);
    area += p_wait * hi.partial + p_open * lo.partial;
    double next_open = p_wait * hi.prob + p_open * lo.prob;
    p_wait *= 1.0 - hi.prob;
    p_open = next_open;
    if (p_wait < 1e-300 && p_open < 1e-300) {
      break;
    }
  }
  return area;
}

struct Quadrature {
  std::vector<double> nodes;
  std::vector<double> weights;
};

// Gauss-Hermite rule for the standard normal weight (Golub-Welsch).
const Quadrature& hermite_rule() {
  static const Quadrature rule = [] {
    constexpr int kPoints = 32;
    Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(kPoints, kPoints);
    for (int i = 1; i < kPoints; ++i) {
      jacobi(i, i - 1) = jacobi(i - 1, i) = std::sqrt(static_cast<double>(i));
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(jacobi);
    Quadrature q;
    for (int i = 0; i < kPoints; ++i) {
      q.nodes.push_back(solver.eigenvalues()(i));
      double v = solver.eigenvectors()(0, i);
      q.weights.push_back(v * v);
    }
    return q;
  }();
  return rule;
}

}  // namespace

double expected_area(int n, const WaveformParams& params, const DaqThresholds& thr) {
  params.validate();
  thr.validate();
  check_photons(n);
  if (n == 0) {
    return params.noise_offset == 0.0 ? 0.0 : expected_area_given_energy(0.0, params, thr);
  }
  const double sigma = params.energy_sigma(n);
  if (sigma == 0.0) {
    return expected_area_given_energy(n, params, thr);
  }
  const Quadrature& rule = hermite_rule();
  double total = 0.0;
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
    double energy = std::max(0.0, n + sigma * rule.nodes[i]);
    total += rule.weights[i] * expected_area_given_energy(energy, params, thr);
  }
  return total;
}

namespace {
constexpr char kWaveMagic[4] = {'P', 'N', 'R', 'W'};
constexpr std::uint32_t kWaveVersion = 1;
}  // namespace

void write_waveform_header(std::ostream& out, const WaveformFileHeader& header) {
  out.write(kWaveMagic, 4);
  write_le<std::uint32_t>(out, kWaveVersion);
  write_le<double>(out, header.sample_rate);
  write_le<std::uint32_t>(out, header.adc_bits);
  write_le<std::uint32_t>(out, header.record_len);
}

void write_waveform_record(std::ostream& out, const WaveformFileHeader& header, const WaveformRecord& record) {
  if (record.waveform.samples.size() != header.record_len) {
    throw std::invalid_argument("waveform length does not match the file header");
  }
  write_le<std::uint64_t>(out, record.event_id);
  write_le<std::uint8_t>(out, record.channel);
  for (int i = 0; i < 3; ++i) {
    write_le<std::uint8_t>(out, 0);
  }
  write_le<std::uint32_t>(out, record.waveform.trigger_time);
  for (auto s : record.waveform.samples) {
    write_le<std::uint16_t>(out, s);
  }
}

WaveformFileHeader read_waveform_header(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || !std::equal(magic, magic + 4, kWaveMagic)) {
    throw FormatError("not a waveform file (bad magic)");
  }
  if (read_le<std::uint32_t>(in) != kWaveVersion) {
    throw FormatError("unsupported waveform file version");
  }
  WaveformFileHeader h;
  h.sample_rate = read_le<double>(in);
  h.adc_bits = read_le<std::uint32_t>(in);
  h.record_len = read_le<std::uint32_t>(in);
  if (h.adc_bits == 0 || h.adc_bits > 16 || h.record_len == 0) {
    throw FormatError("invalid waveform file header");
  }
  return h;
}

std::optional<WaveformRecord> read_waveform_record(std::istream& in, const WaveformFileHeader& header) {
  if (in.peek() == std::char_traits<char>::eof()) {
    return std::nullopt;
  }
  WaveformRecord r;
  r.event_id = read_le<std::uint64_t>(in);
  r.channel = read_le<std::uint8_t>(in);
  for (int i = 0; i < 3; ++i) {
    read_le<std::uint8_t>(in);
  }
  r.waveform.trigger_time = read_le<std::uint32_t>(in);
  r.waveform.samples.resize(header.record_len);
  const std::uint32_t limit = (1u << header.adc_bits) - 1;
  for (auto& s : r.waveform.samples) {
    s = read_le<std::uint16_t>(in);
    if (s > limit) {
      throw FormatError("sample exceeds the ADC range");
    }
  }
  return r;
}

void write_features_csv(std::ostream& out, std::span<const FeatureRecord> records) {
  out << "event_id,channel,area,height,duration,t_start,t_peak\n";
  for (const auto& r : records) {
    PulseFeatures f = r.features.value_or(PulseFeatures{});
    out << r.event_id << ',' << static_cast<char>('a' + r.channel) << ',' << f.area << ',' << f.height << ','
        << f.duration << ',' << f.t_start << ',' << f.t_peak << '\n';
  }
}

std::vector<FeatureRecord> read_features_csv(std::istream& in) {
  CsvReader reader(in, {"event_id", "channel", "area", "height", "duration", "t_start", "t_peak"});
  std::vector<FeatureRecord> out;
  while (auto row = reader.next()) {
    const auto& f = *row;
    FeatureRecord r;
    r.event_id = parse_u64(f[0]);
    if (f[1].size() != 1 || f[1][0] < 'a' || f[1][0] > 'c') {
      throw FormatError("line " + std::to_string(reader.line()) + ": channel must be a, b or c");
    }
    r.channel = static_cast<std::uint8_t>(f[1][0] - 'a');
    PulseFeatures p;
    p.area = parse_i64(f[2]);
    p.height = static_cast<int>(parse_i64(f[3]));
    p.duration = static_cast<int>(parse_i64(f[4]));
    p.t_start = static_cast<int>(parse_i64(f[5]));
    p.t_peak = static_cast<int>(parse_i64(f[6]));
    if (p.area < 0 || p.height < 0 || p.duration < 0 || p.t_start < 0 || p.t_peak < 0) {
      throw FormatError("line " + std::to_string(reader.line()) + ": feature values must be non-negative");
    }
    if (p.duration > 0) {
      r.features = p;
    }
    out.push_back(r);
  }
  return out;
}

}  // namespace pnr
