#ifndef PNR_DETECTOR_H
#define PNR_DETECTOR_H

// TES-like pulse synthesis and the digitizer's threshold/hysteresis feature
// extraction.
//
// Pulse model (t in samples after the trigger, eps = absorbed energy in
// photon units):
//   V(t)   = A(eps) (exp(-t / tau_f(eps)) - exp(-t / tau_r))
//   A(eps) = v_max (1 - exp(-eps / n_sat))           saturating peak
//   tau_f  = tau_fall0 (1 + tail_slope eps)          slower re-cooling
// eps = n + N(0, energy_sigma0^2 + energy_sigma_per_photon^2 n) models the
// thermal/electronic spread of the deposited energy; each sample also gets
// white Gaussian noise of noise_sigma ADC counts, is rounded half-to-even
// and clamped to the ADC range.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

namespace pnr {

inline constexpr int kMaxPhotonsPerChannel = 37;

struct WaveformParams {
  double sample_rate = 250e6;  // samples / s
  int adc_bits = 12;
  int record_len = 8000;  // 32 us
  int trigger_time = 200;  // pre-trigger samples
  double v_max = 3500.0;  // ADC counts
  double n_sat = 15.0;
  double tau_rise = 0.5e-6;
  double tau_fall0 = 2.0e-6;
  double tail_slope = 0.03;
  double noise_sigma = 1.5;  // ADC counts
  double energy_sigma0 = 0.2335;  // photons
  double energy_sigma_per_photon = 0.02828;  // photons / sqrt(photon)
  double noise_offset = 0.0;  // DC drift added to every sample

  void validate() const;
  int adc_max() const { return (1 << adc_bits) - 1; }
  double tau_rise_samples() const { return tau_rise * sample_rate; }
  double tau_fall_samples(double energy) const { return tau_fall0 * (1.0 + tail_slope * energy) * sample_rate; }
  double amplitude(double energy) const;
  double energy_sigma(int n) const;
  /// Noiseless, unclipped pulse value `t` samples after the trigger.
  double shape(double energy, double t) const;
  /// Integral of the noiseless pulse, A (tau_f - tau_r) in ADC count samples.
  double noiseless_area(double energy) const;
};

struct DaqThresholds {
  int high = 12;  // opens the integration window
  int low = 6;    // closes it (hysteresis)

  void validate() const;
};

struct Waveform {
  std::vector<std::uint16_t> samples;
  std::uint32_t trigger_time = 0;
};

struct PulseFeatures {
  std::int64_t area = 0;  // sum of samples in the window
  int height = 0;
  int duration = 0;  // samples in the window
  int t_start = 0;
  int t_peak = 0;

  friend bool operator==(const PulseFeatures&, const PulseFeatures&) = default;
};

/// Window opens at the first sample >= high and stays open while samples are
/// >= low; the first sample below low is not included. Returns nullopt when
/// no sample reaches `high`.
std::optional<PulseFeatures> extract_features(std::span<const std::uint16_t> samples, const DaqThresholds& thr);

/// Throws std::out_of_range for n outside [0, 37].
Waveform synth_pulse(int n, const WaveformParams& params, std::uint64_t seed);

/// Same result as extract_features(synth_pulse(n, params, seed).samples, thr),
/// without materializing the record past the end of the window.
std::optional<PulseFeatures> simulate_features(int n, const WaveformParams& params, const DaqThresholds& thr,
                                               std::uint64_t seed);

/// The same model for any n >= 0. Photon numbers above 37 are outside the
/// calibrated range but a real detector still sees them; the pipeline feeds
/// such events through here so they show up as overflow.
Waveform synth_response(int n, const WaveformParams& params, std::uint64_t seed);
std::optional<PulseFeatures> simulate_response(int n, const WaveformParams& params, const DaqThresholds& thr,
                                               std::uint64_t seed);

/// Mean extracted area of an n-photon pulse, NoEvent counted as area 0. The
/// threshold clipping at both window ends (including early closure caused by
/// noise dips) is evaluated exactly sample by sample; the energy spread is
/// integrated by Gauss-Hermite quadrature.
double expected_area(int n, const WaveformParams& params, const DaqThresholds& thr = {});

// Waveform file: "PNRW", u32 version, f64 sample_rate, u32 adc_bits,
// u32 record_len, then per record u64 event_id, u8 channel, 3 pad bytes,
// u32 trigger_time and record_len u16 samples. All little-endian.
struct WaveformRecord {
  std::uint64_t event_id = 0;
  std::uint8_t channel = 0;
  Waveform waveform;
};

struct WaveformFileHeader {
  double sample_rate = 250e6;
  std::uint32_t adc_bits = 12;
  std::uint32_t record_len = 8000;
};

void write_waveform_header(std::ostream& out, const WaveformFileHeader& header);
void write_waveform_record(std::ostream& out, const WaveformFileHeader& header, const WaveformRecord& record);
WaveformFileHeader read_waveform_header(std::istream& in);
std::optional<WaveformRecord> read_waveform_record(std::istream& in, const WaveformFileHeader& header);

// Feature CSV: event_id,channel,area,height,duration,t_start,t_peak with
// channel in {a,b,c}. A channel without an event is written as all zeros.
struct FeatureRecord {
  std::uint64_t event_id = 0;
  std::uint8_t channel = 0;
  std::optional<PulseFeatures> features;
};

void write_features_csv(std::ostream& out, std::span<const FeatureRecord> records);
std::vector<FeatureRecord> read_features_csv(std::istream& in);

}  // namespace pnr

#endif
