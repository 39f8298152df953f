#include "pnr/pipeline.h"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "pnr/io_util.h"
#include "pnr/random.h"

namespace pnr {
namespace {

// Runs fn(i) for i in [0, count) on up to `threads` workers with a fixed
// interleaved partition. Callers write results by index.
template <typename Fn>
void parallel_for(std::uint64_t count, int threads, Fn fn) {
  int workers = static_cast<int>(std::max<std::uint64_t>(1, std::min<std::uint64_t>(std::max(threads, 1), count)));
  if (workers == 1) {
    for (std::uint64_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mutex;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::uint64_t i = w; i < count; i += workers) fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// Strict object reader: every key must be consumed.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError(path_ + " must be an object");
  }
  ~ObjectReader() = default;

  template <typename T>
  void get(const char* key, T& out) {
    used_.insert(key);
    if (!j_.contains(key) || j_[key].is_null()) return;
    try {
      out = j_[key].get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(path_ + "." + key + " has the wrong type");
    }
  }
  template <typename T>
  void get_optional(const char* key, std::optional<T>& out) {
    used_.insert(key);
    if (!j_.contains(key) || j_[key].is_null()) return;
    try {
      out = j_[key].get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(path_ + "." + key + " has the wrong type");
    }
  }
  const nlohmann::json* child(const char* key) {
    used_.insert(key);
    return j_.contains(key) && !j_[key].is_null() ? &j_[key] : nullptr;
  }
  std::string path(const char* key) const { return path_ + "." + key; }
  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!used_.count(k)) throw ConfigError("unknown key " + path_ + "." + k);
    }
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> used_;
};

void read_params(const nlohmann::json& j, const std::string& path, WaveformParams& p) {
  ObjectReader r(j, path);
  r.get("sample_rate", p.sample_rate);
  r.get("adc_bits", p.adc_bits);
  r.get("record_len", p.record_len);
  r.get("trigger_time", p.trigger_time);
  r.get("v_max", p.v_max);
  r.get("n_sat", p.n_sat);
  r.get("tau_rise", p.tau_rise);
  r.get("tau_fall0", p.tau_fall0);
  r.get("tail_slope", p.tail_slope);
  r.get("noise_sigma", p.noise_sigma);
  r.get("energy_sigma0", p.energy_sigma0);
  r.get("energy_sigma_per_photon", p.energy_sigma_per_photon);
  r.get("noise_offset", p.noise_offset);
  r.finish();
}

nlohmann::json params_json(const WaveformParams& p) {
  return {{"sample_rate", p.sample_rate},
          {"adc_bits", p.adc_bits},
          {"record_len", p.record_len},
          {"trigger_time", p.trigger_time},
          {"v_max", p.v_max},
          {"n_sat", p.n_sat},
          {"tau_rise", p.tau_rise},
          {"tau_fall0", p.tau_fall0},
          {"tail_slope", p.tail_slope},
          {"noise_sigma", p.noise_sigma},
          {"energy_sigma0", p.energy_sigma0},
          {"energy_sigma_per_photon", p.energy_sigma_per_photon},
          {"noise_offset", p.noise_offset}};
}

}  // namespace

void RunConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (!seed) fail("seed is required for simulation runs");
  if (events == 0) fail("events must be positive");
  if (!(source.nbar >= 0.0) || !std::isfinite(source.nbar)) fail("source.nbar must be finite and >= 0");
  try {
    SplitterNetwork::from_reflectances(source.r1_sq, source.r2_sq).validate();
  } catch (const std::exception& e) {
    fail(std::string("source split ratios: ") + e.what());
  }
  for (double eta : source.efficiencies) {
    if (!(eta >= 0.0 && eta <= 1.0)) fail("source.efficiencies must lie in [0, 1]");
  }
  try {
    for (const auto& p : detector.channels) p.validate();
    detector.thresholds.validate();
  } catch (const std::exception& e) {
    fail(std::string("detector: ") + e.what());
  }
  if (calibration.k_max < 1 || calibration.k_max > 38) fail("calibration.k_max must be in [1, 38]");
  if (calibration.window_frac && !(*calibration.window_frac > 0.0)) fail("calibration.window_frac must be positive");
  if (!(calibration.overlap_threshold > 0.0 && calibration.overlap_threshold < 1.0)) {
    fail("calibration.overlap_threshold must be in (0, 1)");
  }
  if (calibration.bins < 16) fail("calibration.bins must be at least 16");
  if (calibration.oracle_pulses_per_n < 2) fail("calibration.oracle_pulses_per_n must be at least 2");
  if (n_cap < 1) fail("counting.n_cap must be positive");
  if (d < 1 || d > kMaxBitsPerEvent) fail("qrng.d must be in [1, 5]");
  if (nist.enabled) {
    try {
      trial_plan().validate();
    } catch (const std::exception& e) {
      fail(std::string("nist: ") + e.what());
    }
  }
  if (threads < 1) fail("threads must be positive");
}

ChannelTriple RunConfig::channels() const {
  return split_coherent(source.nbar, SplitterNetwork::from_reflectances(source.r1_sq, source.r2_sq),
                        source.efficiencies);
}

TrialPlan RunConfig::trial_plan() const {
  TrialPlan p = TrialPlan::with_trial_size(nist.trial_size);
  p.alpha = nist.alpha;
  p.tests = nist.tests;
  return p;
}

RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig c;
  ObjectReader r(j, "config");
  r.get_optional("seed", c.seed);
  r.get("events", c.events);
  std::string mode = "waveform";
  r.get("mode", mode);
  if (mode == "waveform") {
    c.mode = SimulationMode::kWaveform;
  } else if (mode == "analytic") {
    c.mode = SimulationMode::kAnalytic;
  } else {
    throw ConfigError("config.mode must be \"waveform\" or \"analytic\"");
  }
  r.get("threads", c.threads);

  if (auto* s = r.child("source")) {
    ObjectReader sr(*s, "source");
    sr.get("nbar", c.source.nbar);
    sr.get("r1_sq", c.source.r1_sq);
    sr.get("r2_sq", c.source.r2_sq);
    sr.get("efficiencies", c.source.efficiencies);
    sr.get("phase_jitter", c.source.phase_jitter);
    sr.finish();
  }
  if (auto* d = r.child("detector")) {
    ObjectReader dr(*d, "detector");
    if (auto* p = dr.child("params")) {
      WaveformParams shared;
      read_params(*p, "detector.params", shared);
      c.detector.channels = {shared, shared, shared};
    }
    if (auto* ch = dr.child("channels")) {
      if (!ch->is_array() || ch->size() != 3) throw ConfigError("detector.channels must list three channels");
      for (int k = 0; k < 3; ++k) {
        read_params((*ch)[k], "detector.channels[" + std::to_string(k) + "]", c.detector.channels[k]);
      }
    }
    if (auto* t = dr.child("thresholds")) {
      ObjectReader tr(*t, "detector.thresholds");
      tr.get("high", c.detector.thresholds.high);
      tr.get("low", c.detector.thresholds.low);
      tr.finish();
    }
    dr.finish();
  }
  if (auto* cal = r.child("calibration")) {
    ObjectReader cr(*cal, "calibration");
    std::string cmode = "fit", rule = "peak";
    cr.get("mode", cmode);
    if (cmode == "fit") {
      c.calibration.mode = CalibrationMode::kFit;
    } else if (cmode == "oracle") {
      c.calibration.mode = CalibrationMode::kOracle;
    } else {
      throw ConfigError("calibration.mode must be \"fit\" or \"oracle\"");
    }
    cr.get("k_max", c.calibration.k_max);
    cr.get_optional("window_frac", c.calibration.window_frac);
    cr.get("overlap_threshold", c.calibration.overlap_threshold);
    cr.get("bins", c.calibration.bins);
    cr.get("edge_rule", rule);
    if (rule == "peak") {
      c.calibration.edge_rule = EdgeRule::kPeakNormalized;
    } else if (rule == "area") {
      c.calibration.edge_rule = EdgeRule::kAreaNormalized;
    } else {
      throw ConfigError("calibration.edge_rule must be \"peak\" or \"area\"");
    }
    cr.get("oracle_pulses_per_n", c.calibration.oracle_pulses_per_n);
    cr.finish();
  }
  if (auto* cnt = r.child("counting")) {
    ObjectReader nr(*cnt, "counting");
    nr.get("n_cap", c.n_cap);
    nr.finish();
  }
  if (auto* q = r.child("qrng")) {
    ObjectReader qr(*q, "qrng");
    qr.get("d", c.d);
    qr.finish();
  }
  if (auto* n = r.child("nist")) {
    ObjectReader nr(*n, "nist");
    nr.get("enabled", c.nist.enabled);
    nr.get("trial_size", c.nist.trial_size);
    nr.get("alpha", c.nist.alpha);
    std::vector<std::string> names;
    nr.get("tests", names);
    if (!names.empty()) {
      c.nist.tests.clear();
      for (const auto& name : names) {
        try {
          c.nist.tests.push_back(test_from_name(name));
        } catch (const std::invalid_argument& e) {
          throw ConfigError(std::string("nist.tests: ") + e.what());
        }
      }
    }
    nr.finish();
  }
  if (auto* io = r.child("io")) {
    ObjectReader ir(*io, "io");
    std::string out = c.out_dir.string();
    ir.get("out_dir", out);
    c.out_dir = out;
    ir.get("write_waveforms", c.write_waveforms);
    ir.finish();
  }
  r.finish();
  if (const char* env = std::getenv("PNR_OUT_DIR"); env && *env) c.out_dir = env;
  return c;
}

nlohmann::json config_to_json(const RunConfig& c) {
  nlohmann::json channels = nlohmann::json::array();
  for (const auto& p : c.detector.channels) channels.push_back(params_json(p));
  std::vector<std::string> tests;
  for (auto id : c.nist.tests) tests.push_back(test_name(id));
  nlohmann::json j = {
      {"seed", c.seed ? nlohmann::json(*c.seed) : nlohmann::json(nullptr)},
      {"events", c.events},
      {"mode", c.mode == SimulationMode::kWaveform ? "waveform" : "analytic"},
      {"threads", c.threads},
      {"source",
       {{"nbar", c.source.nbar},
        {"r1_sq", c.source.r1_sq},
        {"r2_sq", c.source.r2_sq},
        {"efficiencies", c.source.efficiencies},
        {"phase_jitter", c.source.phase_jitter}}},
      {"detector",
       {{"channels", channels}, {"thresholds", {{"high", c.detector.thresholds.high}, {"low", c.detector.thresholds.low}}}}},
      {"calibration",
       {{"mode", c.calibration.mode == CalibrationMode::kFit ? "fit" : "oracle"},
        {"k_max", c.calibration.k_max},
        {"window_frac", c.calibration.window_frac ? nlohmann::json(*c.calibration.window_frac) : nlohmann::json(nullptr)},
        {"overlap_threshold", c.calibration.overlap_threshold},
        {"bins", c.calibration.bins},
        {"edge_rule", c.calibration.edge_rule == EdgeRule::kPeakNormalized ? "peak" : "area"},
        {"oracle_pulses_per_n", c.calibration.oracle_pulses_per_n}}},
      {"counting", {{"n_cap", c.n_cap}}},
      {"qrng", {{"d", c.d}}},
      {"nist",
       {{"enabled", c.nist.enabled}, {"trial_size", c.nist.trial_size}, {"alpha", c.nist.alpha}, {"tests", tests}}},
      {"io", {{"out_dir", c.out_dir.string()}, {"write_waveforms", c.write_waveforms}}},
  };
  return j;
}

RunConfig load_config(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

std::string config_hash(const RunConfig& config) {
  auto j = config_to_json(config);
  j.erase("threads");
  j.erase("io");
  return hex64(fnv1a64(j.dump()));
}

std::vector<FeatureRecord> simulate_event_features(std::span<const EventSample> events, const DetectorConfig& detector,
                                                   std::uint64_t seed, int threads) {
  std::vector<FeatureRecord> out(events.size() * 3);
  parallel_for(events.size(), threads, [&](std::uint64_t i) {
    const auto& ev = events[i];
    for (int c = 0; c < 3; ++c) {
      auto& rec = out[3 * i + c];
      rec.event_id = ev.event_id;
      rec.channel = static_cast<std::uint8_t>(c);
      rec.features = simulate_response(static_cast<int>(ev.counts[c]), detector.channels[c], detector.thresholds,
                                       derive_seed(seed, streams::kPulseA + c, ev.event_id));
    }
  });
  return out;
}

std::vector<double> channel_areas(std::span<const FeatureRecord> features, int channel) {
  std::vector<double> out;
  for (const auto& f : features) {
    if (f.channel == channel) out.push_back(f.features ? static_cast<double>(f.features->area) : 0.0);
  }
  return out;
}

ChannelCalibration calibrate_from_areas(std::span<const double> areas, const CalibrationConfig& config) {
  ChannelCalibration cc;
  cc.histogram = AreaHistogram::from_areas(areas, config.bins);
  auto fit = fit_mixture(cc.histogram, config.k_max);
  CalibrationOptions opt;
  opt.overlap_threshold = config.overlap_threshold;
  opt.window_frac = config.window_frac;
  opt.rule = config.edge_rule;
  cc.calibration = build_calibration(fit.components, opt);
  cc.fit = std::move(fit);
  return cc;
}

ChannelCalibration oracle_calibration(int channel, const WaveformParams& params, const DaqThresholds& thr,
                                      const CalibrationConfig& config, std::uint64_t seed, int threads) {
  const std::uint64_t per_n = config.oracle_pulses_per_n;
  const int levels = kMaxPhotonsPerChannel + 1;
  std::vector<double> areas(per_n * levels);
  std::vector<int> labels(areas.size());
  parallel_for(areas.size(), threads, [&](std::uint64_t i) {
    int n = static_cast<int>(i / per_n);
    auto f = simulate_features(n, params, thr, derive_seed(seed, streams::kLabeledPulses + channel, i));
    areas[i] = f ? static_cast<double>(f->area) : 0.0;
    labels[i] = n;
  });
  ChannelCalibration cc;
  cc.histogram = AreaHistogram::from_areas(areas, config.bins);
  CalibrationOptions opt;
  opt.overlap_threshold = config.overlap_threshold;
  opt.window_frac = config.window_frac;
  opt.rule = config.edge_rule;
  cc.calibration = build_calibration(components_from_labeled(areas, labels), opt);
  return cc;
}

std::vector<CountRecord> count_features(std::span<const FeatureRecord> features,
                                        std::span<const Calibration, 3> calibrations) {
  std::map<std::uint64_t, std::array<std::optional<double>, 3>> by_event;
  for (const auto& f : features) {
    if (f.channel > 2) throw std::invalid_argument("feature record with bad channel");
    auto& slot = by_event[f.event_id][f.channel];
    if (slot) throw std::invalid_argument("duplicate feature record for event " + std::to_string(f.event_id));
    slot = f.features ? static_cast<double>(f.features->area) : 0.0;
  }
  std::vector<CountRecord> out;
  out.reserve(by_event.size());
  for (const auto& [id, areas] : by_event) out.push_back(record_from_areas(id, areas, calibrations));
  return out;
}

nlohmann::json calibration_report(const ChannelCalibration& cc) {
  nlohmann::json j = calibration_to_json(cc.calibration);
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : error_table(cc.calibration)) {
    rows.push_back({{"n", r.n}, {"error_all", r.error_all}, {"error_2sigma", r.error_2sigma}, {"error_1sigma", r.error_1sigma}});
  }
  j["error_table"] = rows;
  if (cc.fit) {
    j["fit"] = {{"r_squared", cc.fit->r_squared},
                {"components", cc.fit->components.size()},
                {"em_iterations", cc.fit->em_iterations},
                {"polish_iterations", cc.fit->polish_iterations},
                {"warnings", cc.fit->warnings}};
  }
  j["histogram"] = {{"edges", cc.histogram.bin_edges}, {"counts", cc.histogram.counts}};
  return j;
}

namespace {

class ArtifactWriter {
 public:
  explicit ArtifactWriter(std::filesystem::path dir) : dir_(std::move(dir)) {}

  std::filesystem::path path(const std::string& name) {
    auto p = dir_ / name;
    written_.push_back(p);
    return p;
  }
  void text(const std::string& name, const std::string& body) { write_text_file(path(name), body); }
  template <typename Fn>
  void stream(const std::string& name, Fn fn, bool binary = false) {
    std::ofstream out(path(name), binary ? std::ios::binary : std::ios::out);
    if (!out) throw std::runtime_error("cannot write " + (dir_ / name).string());
    fn(out);
    if (!out) throw std::runtime_error("write failed for " + (dir_ / name).string());
  }
  void remove_all() {
    std::error_code ec;
    for (const auto& p : written_) {
      std::filesystem::remove(p, ec);
      std::filesystem::remove(p.string() + ".json", ec);
    }
  }

 private:
  std::filesystem::path dir_;
  std::vector<std::filesystem::path> written_;
};

template <typename Fn>
auto stage(const std::string& name, Fn fn) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

}  // namespace

PipelineSummary run_pipeline(const RunConfig& config, const std::function<void(const std::string&)>& log) {
  auto note = [&](const std::string& m) {
    if (log) log(m);
  };
  stage("config", [&] {
    config.validate();
    return 0;
  });
  std::filesystem::create_directories(config.out_dir);
  ArtifactWriter out(config.out_dir);
  const std::uint64_t seed = *config.seed;
  const std::string hash = config_hash(config);
  nlohmann::json provenance = {{"config_hash", hash}, {"seed", seed}};
  std::vector<std::string> warnings;

  try {
    auto channels = config.channels();
    out.text("config.json", config_to_json(config).dump(2) + "\n");

    note("simulate: " + std::to_string(config.events) + " events");
    auto events = stage("simulate", [&] {
      SamplingOptions opt{config.source.phase_jitter};
      return sample_events(channels, config.events, seed, 0, opt);
    });
    out.stream("events.csv", [&](std::ostream& o) { write_events_csv(o, events); });

    std::vector<CountRecord> records;
    nlohmann::json calibration_summary = nlohmann::json::array();
    double misclassification = 0.0;
    if (config.mode == SimulationMode::kAnalytic) {
      for (const auto& ev : events) records.push_back(record_from_sample(ev));
    } else {
      note("extract: synthesizing and integrating pulses");
      auto features = stage("extract", [&] {
        return simulate_event_features(events, config.detector, seed, config.threads);
      });
      out.stream("features.csv", [&](std::ostream& o) { write_features_csv(o, features); });
      if (config.write_waveforms) {
        stage("extract", [&] {
          out.stream(
              "waveforms.bin",
              [&](std::ostream& o) {
                const auto& p0 = config.detector.channels[0];
                WaveformFileHeader h{p0.sample_rate, static_cast<std::uint32_t>(p0.adc_bits),
                                     static_cast<std::uint32_t>(p0.record_len)};
                for (const auto& p : config.detector.channels) {
                  if (p.record_len != p0.record_len || p.adc_bits != p0.adc_bits || p.sample_rate != p0.sample_rate) {
                    throw std::invalid_argument("waveform file needs identical digitizer settings on all channels");
                  }
                }
                write_waveform_header(o, h);
                for (const auto& ev : events) {
                  for (int c = 0; c < 3; ++c) {
                    WaveformRecord r{ev.event_id, static_cast<std::uint8_t>(c),
                                     synth_response(static_cast<int>(ev.counts[c]), config.detector.channels[c],
                                                    derive_seed(seed, streams::kPulseA + c, ev.event_id))};
                    write_waveform_record(o, h, r);
                  }
                }
              },
              true);
          return 0;
        });
      }

      note("calibrate");
      std::array<Calibration, 3> cals;
      stage("calibrate", [&] {
        for (int c = 0; c < 3; ++c) {
          ChannelCalibration cc =
              config.calibration.mode == CalibrationMode::kFit
                  ? calibrate_from_areas(channel_areas(features, c), config.calibration)
                  : oracle_calibration(c, config.detector.channels[c], config.detector.thresholds, config.calibration,
                                       seed, config.threads);
          auto report = calibration_report(cc);
          report["provenance"] = provenance;
          std::string name = std::string("calibration_") + static_cast<char>('a' + c) + ".json";
          out.text(name, report.dump(2) + "\n");
          if (cc.fit) {
            for (const auto& w : cc.fit->warnings) warnings.push_back(name + ": " + w);
          }
          calibration_summary.push_back({{"channel", std::string(1, static_cast<char>('a' + c))},
                                         {"components", cc.calibration.components.size()},
                                         {"overflow_edge", cc.calibration.overflow_edge},
                                         {"r_squared", cc.fit ? nlohmann::json(cc.fit->r_squared) : nlohmann::json(nullptr)}});
          cals[c] = std::move(cc.calibration);
        }
        return 0;
      });
      misclassification = misclassification_rate(cals);
      note("count");
      records = stage("count", [&] { return count_features(features, cals); });
    }
    out.stream("records.csv", [&](std::ostream& o) { write_records_csv(o, records); });

    Tally tally(config.n_cap);
    for (const auto& r : records) tally.add(r);
    nlohmann::json dist_json;
    ParityEstimate parity{};
    bool have_distribution = tally.resolved() > 0;
    if (have_distribution) {
      auto dist = empirical_distribution(tally, misclassification);
      parity = parity_estimate(tally);
      dist_json = distribution_to_json(dist, parity);
      dist_json["provenance"] = provenance;
      dist_json["misclassification"] = misclassification;
      dist_json["effective_nbar"] = effective_nbar(channels);
      out.text("distribution.json", dist_json.dump(2) + "\n");
      out.stream("distribution.csv", [&](std::ostream& o) { write_distribution_csv(o, dist); });
    } else {
      warnings.push_back("no resolved events; distribution and parity skipped");
    }

    note("genbits");
    auto bits = stage("genbits", [&] { return generate(records, config.d, config.n_cap); });
    bits.meta.nbar = config.source.nbar;
    bits.meta.seed = seed;
    out.path("bits.bin");
    save_bitstream(config.out_dir / "bits.bin", bits, provenance);
    if (bits.size() == 0) warnings.push_back("bitstream is empty");

    nlohmann::json randomness = nullptr;
    bool random = false;
    if (config.nist.enabled) {
      auto plan = config.trial_plan();
      if (bits.size() < plan.trial_size) {
        warnings.push_back("bitstream (" + std::to_string(bits.size()) + " bits) is shorter than one trial; certification skipped");
      } else {
        note("certify: " + std::to_string(trial_count(bits.size(), plan.trial_size)) + " trials");
        auto outcomes = stage("certify", [&] { return run_test_suite(bits, plan, config.threads); });
        randomness = report_to_json(outcomes, plan);
        randomness["provenance"] = provenance;
        random = verdict(outcomes).random;
        out.text("randomness.json", randomness.dump(2) + "\n");
        out.stream("randomness.csv", [&](std::ostream& o) { write_report_csv(o, outcomes); });
        out.stream("p_values.csv", [&](std::ostream& o) { write_p_values_csv(o, outcomes); });
      }
    }

    nlohmann::json summary = {
        {"schema", "pnr.summary"},
        {"version", 1},
        {"status", "ok"},
        {"provenance", provenance},
        {"events", config.events},
        {"effective_nbar", effective_nbar(channels)},
        {"resolved", tally.resolved()},
        {"over_cap", tally.over_cap},
        {"discarded",
         {{"overflow", tally.discarded[static_cast<int>(DiscardReason::kOverflow)]},
          {"outside_window", tally.discarded[static_cast<int>(DiscardReason::kOutsideWindow)]},
          {"missing", tally.discarded[static_cast<int>(DiscardReason::kMissing)]}}},
        {"parity", have_distribution ? nlohmann::json(parity.value) : nlohmann::json(nullptr)},
        {"parity_se", have_distribution ? nlohmann::json(parity.std_error) : nlohmann::json(nullptr)},
        {"bits", bits.size()},
        {"d", config.d},
        {"calibration", calibration_summary},
        {"verdict", randomness.is_null() ? nlohmann::json(nullptr) : randomness["verdict"]},
        {"warnings", warnings},
    };
    out.text("summary.json", summary.dump(2) + "\n");
    return {summary, random};
  } catch (const std::exception& e) {
    out.remove_all();
    std::string st = "pipeline";
    if (auto* se = dynamic_cast<const StageError*>(&e)) st = se->stage;
    nlohmann::json failed = {{"schema", "pnr.summary"}, {"version", 1},   {"status", "failed"},
                             {"stage", st},             {"error", e.what()}, {"provenance", provenance}};
    write_text_file(config.out_dir / "summary.json", failed.dump(2) + "\n");
    if (dynamic_cast<const StageError*>(&e)) throw;
    throw StageError(st, e.what());
  }
}

}  // namespace pnr
