#ifndef PNR_PIPELINE_H
#define PNR_PIPELINE_H

// Run configuration and the end-to-end flow: simulate -> extract ->
// calibrate -> count -> generate bits -> certify. Each stage is also
// available on its own so it can be re-run from persisted inputs.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "pnr/calibrate.h"
#include "pnr/counting.h"
#include "pnr/detector.h"
#include "pnr/nist.h"
#include "pnr/qrng.h"
#include "pnr/source.h"

namespace pnr {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what)
      : std::runtime_error(stage + ": " + what), stage(std::move(stage)) {}
  std::string stage;
};

enum class SimulationMode { kWaveform, kAnalytic };
enum class CalibrationMode { kFit, kOracle };

struct SourceConfig {
  double nbar = 57.0;
  double r1_sq = 1.0 / 3.0;
  double r2_sq = 0.5;
  std::array<double, 3> efficiencies{1.0, 1.0, 1.0};
  bool phase_jitter = false;
};

struct DetectorConfig {
  std::array<WaveformParams, 3> channels{};
  DaqThresholds thresholds{};
};

struct CalibrationConfig {
  CalibrationMode mode = CalibrationMode::kFit;
  std::size_t k_max = 38;
  std::optional<double> window_frac;
  double overlap_threshold = 0.25;
  std::size_t bins = 4096;
  EdgeRule edge_rule = EdgeRule::kPeakNormalized;
  std::uint64_t oracle_pulses_per_n = 2000;
};

struct NistConfig {
  bool enabled = true;
  std::uint64_t trial_size = 750000;
  double alpha = 0.01;
  std::vector<TestId> tests = all_tests();
};

struct RunConfig {
  std::optional<std::uint64_t> seed;
  std::uint64_t events = 100000;
  SimulationMode mode = SimulationMode::kWaveform;
  SourceConfig source;
  DetectorConfig detector;
  CalibrationConfig calibration;
  int n_cap = kDefaultCountCap;
  int d = 3;
  NistConfig nist;
  std::filesystem::path out_dir = "pnr_run";
  bool write_waveforms = false;
  int threads = 1;

  void validate() const;
  ChannelTriple channels() const;
  TrialPlan trial_plan() const;
};

/// Missing keys take defaults; unknown keys are errors. PNR_OUT_DIR, when
/// set, overrides io.out_dir.
RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const RunConfig& config);
RunConfig load_config(const std::filesystem::path& path);
/// Hash of everything that determines results (threads and paths excluded).
std::string config_hash(const RunConfig& config);

// Stage building blocks.

/// Features of every (event, channel) pulse, ordered by event then channel.
/// Pulse (e, c) is seeded from (seed, c, e) alone, so `threads` does not
/// change the result.
std::vector<FeatureRecord> simulate_event_features(std::span<const EventSample> events, const DetectorConfig& detector,
                                                   std::uint64_t seed, int threads = 1);

/// Areas of one channel in record order; a missing pulse counts as area 0.
std::vector<double> channel_areas(std::span<const FeatureRecord> features, int channel);

struct ChannelCalibration {
  Calibration calibration;
  std::optional<FitResult> fit;  // absent for oracle calibrations
  AreaHistogram histogram;
};

ChannelCalibration calibrate_from_areas(std::span<const double> areas, const CalibrationConfig& config);

/// Calibration from labelled pulses n = 0..37 simulated with the channel's
/// own detector model (the "perfect calibration input").
ChannelCalibration oracle_calibration(int channel, const WaveformParams& params, const DaqThresholds& thr,
                                      const CalibrationConfig& config, std::uint64_t seed, int threads = 1);

/// Groups features by event id (ascending) and assigns each channel.
std::vector<CountRecord> count_features(std::span<const FeatureRecord> features,
                                        std::span<const Calibration, 3> calibrations);

nlohmann::json calibration_report(const ChannelCalibration& cc);

struct PipelineSummary {
  nlohmann::json json;
  bool random = false;
};

/// Runs every stage and writes its artifacts under config.out_dir. On a
/// stage failure the files written so far are removed, summary.json records
/// the failing stage, and StageError is thrown.
PipelineSummary run_pipeline(const RunConfig& config, const std::function<void(const std::string&)>& log = {});

}  // namespace pnr

#endif
