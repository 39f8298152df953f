// pnr: command-line front end. Each subcommand runs one stage on files in
// the documented formats; `pipeline` runs them all from a JSON config.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "pnr/calibrate.h"
#include "pnr/counting.h"
#include "pnr/detector.h"
#include "pnr/figures.h"
#include "pnr/io_util.h"
#include "pnr/nist.h"
#include "pnr/pipeline.h"
#include "pnr/qrng.h"
#include "pnr/random.h"
#include "pnr/source.h"
#include "pnr/theory.h"

namespace {

constexpr int kExitNotRandom = 2;

std::ifstream open_in(const std::string& path, bool binary = false) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw std::runtime_error("cannot open " + path);
  return in;
}

std::ofstream open_out(const std::string& path, bool binary = false) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}

std::filesystem::path out_dir_or(const std::string& flag) {
  if (const char* env = std::getenv("PNR_OUT_DIR"); env && *env && flag.empty()) return env;
  return flag.empty() ? std::filesystem::path(".") : std::filesystem::path(flag);
}

int channel_index(const std::string& s) {
  if (s.size() != 1) throw std::invalid_argument("channel must be a, b or c");
  return static_cast<int>(pnr::channel_from_label(s[0]));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Photon-number-resolved QRNG toolkit"};
  app.require_subcommand(1);

  // theory
  auto* theory = app.add_subcommand("theory", "Residue probabilities and parity of a coherent state");
  double th_nbar = 57.0;
  int th_d = 3;
  std::string th_nmax = "100";
  theory->add_option("--nbar", th_nbar, "Mean photon number")->capture_default_str();
  theory->add_option("--d", th_d, "Bits per event (q = 2^d)")->capture_default_str();
  theory->add_option("--n-max", th_nmax, "Truncation, or 'inf'")->capture_default_str();

  // simulate
  auto* simulate = app.add_subcommand("simulate", "Draw photon-number events (and optionally pulses)");
  std::string sim_config, sim_events_out = "events.csv", sim_features_out, sim_waveforms_out;
  std::optional<std::uint64_t> sim_seed, sim_count;
  std::optional<double> sim_nbar;
  int sim_threads = 1;
  simulate->add_option("--config", sim_config, "Run config (JSON)");
  simulate->add_option("--seed", sim_seed, "Seed");
  simulate->add_option("--events", sim_count, "Number of events");
  simulate->add_option("--nbar", sim_nbar, "Mean photon number before the split");
  simulate->add_option("--out", sim_events_out, "Event CSV")->capture_default_str();
  simulate->add_option("--features", sim_features_out, "Also synthesize pulses and write their features here");
  simulate->add_option("--waveforms", sim_waveforms_out, "Also write raw waveforms here");
  simulate->add_option("--threads", sim_threads, "Worker threads")->capture_default_str();

  // extract
  auto* extract = app.add_subcommand("extract", "Waveform file -> feature CSV");
  std::string ex_in, ex_out = "features.csv";
  int ex_high = 12, ex_low = 6;
  extract->add_option("--waveforms", ex_in, "Waveform file")->required();
  extract->add_option("--out", ex_out, "Feature CSV")->capture_default_str();
  extract->add_option("--high", ex_high, "Window-open threshold (ADC counts)")->capture_default_str();
  extract->add_option("--low", ex_low, "Window-close threshold (ADC counts)")->capture_default_str();

  // calibrate
  auto* calibrate = app.add_subcommand("calibrate", "Fit per-channel calibrations from a feature CSV");
  std::string cal_features, cal_channels = "abc", cal_out;
  std::size_t cal_kmax = 38, cal_bins = 4096;
  std::optional<double> cal_window;
  double cal_overlap = 0.25;
  calibrate->add_option("--features", cal_features, "Feature CSV")->required();
  calibrate->add_option("--channels", cal_channels, "Channels to calibrate")->capture_default_str();
  calibrate->add_option("--k-max", cal_kmax, "Maximum mixture components")->capture_default_str();
  calibrate->add_option("--bins", cal_bins, "Histogram bins")->capture_default_str();
  calibrate->add_option("--window", cal_window, "Post-selection window in sigmas");
  calibrate->add_option("--overlap", cal_overlap, "Edge overlap limit")->capture_default_str();
  calibrate->add_option("--out-dir", cal_out, "Output directory (env PNR_OUT_DIR)");

  // count
  auto* count = app.add_subcommand("count", "Assign photon numbers and build the distribution");
  std::string cnt_features, cnt_events, cnt_cal_dir, cnt_out;
  std::optional<double> cnt_window;
  int cnt_cap = pnr::kDefaultCountCap;
  auto* cnt_f = count->add_option("--features", cnt_features, "Feature CSV");
  auto* cnt_e = count->add_option("--events", cnt_events, "Event CSV (exact counts, perfect detector)");
  cnt_f->excludes(cnt_e);
  count->add_option("--calibrations", cnt_cal_dir, "Directory holding calibration_{a,b,c}.json");
  count->add_option("--window", cnt_window, "Override the calibrations' window (sigmas)");
  count->add_option("--n-cap", cnt_cap, "Largest reported total")->capture_default_str();
  count->add_option("--out-dir", cnt_out, "Output directory (env PNR_OUT_DIR)");

  // genbits
  auto* genbits = app.add_subcommand("genbits", "Record CSV -> packed bit file");
  std::string gb_records, gb_out = "bits.bin";
  int gb_d = 3, gb_cap = pnr::kDefaultCountCap;
  genbits->add_option("--records", gb_records, "Record CSV")->required();
  genbits->add_option("--d", gb_d, "Bits per event")->capture_default_str();
  genbits->add_option("--n-cap", gb_cap, "Largest usable total")->capture_default_str();
  genbits->add_option("--out", gb_out, "Bit file")->capture_default_str();

  // certify
  auto* certify = app.add_subcommand("certify", "Run the randomness tests on a bit file");
  std::string ce_bits, ce_out;
  std::uint64_t ce_trial = 750000;
  double ce_alpha = 0.01;
  std::vector<std::string> ce_tests;
  int ce_threads = 1;
  certify->add_option("--bits", ce_bits, "Bit file")->required();
  certify->add_option("--trial-size", ce_trial, "Bits per trial")->capture_default_str();
  certify->add_option("--alpha", ce_alpha, "Significance level")->capture_default_str();
  certify->add_option("--tests", ce_tests, "Subset of tests");
  certify->add_option("--threads", ce_threads, "Worker threads")->capture_default_str();
  certify->add_option("--out-dir", ce_out, "Output directory (env PNR_OUT_DIR)");

  // figures
  auto* figures = app.add_subcommand("figures", "Figure tables from a run directory");
  std::string fg_run = ".", fg_out = "figures";
  bool fg_parity = false;
  std::uint64_t fg_events = 1000000, fg_seed = 1;
  figures->add_option("--run-dir", fg_run, "Run directory")->capture_default_str();
  figures->add_option("--out-dir", fg_out, "Table directory")->capture_default_str();
  figures->add_flag("--parity-scan", fg_parity, "Also simulate the parity-vs-nbar inset");
  figures->add_option("--parity-events", fg_events, "Events per inset point")->capture_default_str();
  figures->add_option("--seed", fg_seed, "Seed for the inset scan")->capture_default_str();

  // pipeline
  auto* pipeline = app.add_subcommand("pipeline", "Run every stage from a config");
  std::string pl_config, pl_out, pl_mode, pl_cal_mode;
  bool pl_dump = false;
  std::optional<std::uint64_t> pl_seed, pl_events;
  std::optional<double> pl_nbar, pl_window;
  std::optional<int> pl_d, pl_threads;
  pipeline->add_option("--config", pl_config, "Run config (JSON)");
  pipeline->add_flag("--dump-defaults", pl_dump, "Print the default config and exit");
  pipeline->add_option("--seed", pl_seed, "Override seed");
  pipeline->add_option("--events", pl_events, "Override event count");
  pipeline->add_option("--nbar", pl_nbar, "Override nbar");
  pipeline->add_option("--d", pl_d, "Override bits per event");
  pipeline->add_option("--window", pl_window, "Override window fraction");
  pipeline->add_option("--mode", pl_mode, "waveform or analytic");
  pipeline->add_option("--calibration-mode", pl_cal_mode, "fit or oracle");
  pipeline->add_option("--threads", pl_threads, "Worker threads (results do not depend on it)");
  pipeline->add_option("--out-dir", pl_out, "Output directory (env PNR_OUT_DIR)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*theory) {
      pnr::ModQSpec spec = pnr::ModQSpec::from_bits(th_d, th_nmax == "inf" ? std::nullopt
                                                                             : std::optional<int>(std::stoi(th_nmax)));
      auto r = pnr::modq_probabilities({th_nbar}, spec);
      nlohmann::json j = {{"nbar", th_nbar},
                          {"q", spec.q},
                          {"n_max", spec.n_max ? nlohmann::json(*spec.n_max) : nlohmann::json("inf")},
                          {"probabilities", r.probabilities},
                          {"deviations", r.deviations},
                          {"max_bias", r.max_bias},
                          {"bias_trend", pnr::bias_trend(th_nbar, spec.q)},
                          {"parity", pnr::coherent_parity(th_nbar)},
                          {"log_parity", pnr::log_coherent_parity(th_nbar)}};
      std::cout << j.dump(2) << "\n";
      return 0;
    }

    if (*simulate) {
      pnr::RunConfig cfg = sim_config.empty() ? pnr::RunConfig{} : pnr::load_config(sim_config);
      if (sim_seed) cfg.seed = sim_seed;
      if (sim_count) cfg.events = *sim_count;
      if (sim_nbar) cfg.source.nbar = *sim_nbar;
      cfg.nist.enabled = false;
      cfg.validate();
      auto events = pnr::sample_events(cfg.channels(), cfg.events, *cfg.seed, 0, {cfg.source.phase_jitter});
      auto out = open_out(sim_events_out);
      pnr::write_events_csv(out, events);
      if (!sim_features_out.empty()) {
        auto features = pnr::simulate_event_features(events, cfg.detector, *cfg.seed, sim_threads);
        auto fo = open_out(sim_features_out);
        pnr::write_features_csv(fo, features);
      }
      if (!sim_waveforms_out.empty()) {
        const auto& p = cfg.detector.channels[0];
        pnr::WaveformFileHeader h{p.sample_rate, static_cast<std::uint32_t>(p.adc_bits),
                                  static_cast<std::uint32_t>(p.record_len)};
        auto wo = open_out(sim_waveforms_out, true);
        pnr::write_waveform_header(wo, h);
        for (const auto& ev : events) {
          for (int c = 0; c < 3; ++c) {
            pnr::WaveformRecord r{ev.event_id, static_cast<std::uint8_t>(c),
                                  pnr::synth_response(static_cast<int>(ev.counts[c]), cfg.detector.channels[c],
                                                      pnr::derive_seed(*cfg.seed, pnr::streams::kPulseA + c, ev.event_id))};
            pnr::write_waveform_record(wo, h, r);
          }
        }
      }
      std::fprintf(stderr, "simulate: %llu events, effective nbar %.6g\n", static_cast<unsigned long long>(cfg.events),
                   pnr::effective_nbar(cfg.channels()));
      return 0;
    }

    if (*extract) {
      pnr::DaqThresholds thr{ex_high, ex_low};
      thr.validate();
      auto in = open_in(ex_in, true);
      auto header = pnr::read_waveform_header(in);
      std::vector<pnr::FeatureRecord> features;
      while (auto rec = pnr::read_waveform_record(in, header)) {
        features.push_back({rec->event_id, rec->channel, pnr::extract_features(rec->waveform.samples, thr)});
      }
      auto out = open_out(ex_out);
      pnr::write_features_csv(out, features);
      std::fprintf(stderr, "extract: %zu pulses\n", features.size());
      return 0;
    }

    if (*calibrate) {
      auto in = open_in(cal_features);
      auto features = pnr::read_features_csv(in);
      auto dir = out_dir_or(cal_out);
      std::filesystem::create_directories(dir);
      pnr::CalibrationConfig cc;
      cc.k_max = cal_kmax;
      cc.bins = cal_bins;
      cc.window_frac = cal_window;
      cc.overlap_threshold = cal_overlap;
      nlohmann::json provenance = {{"input_hash", pnr::hex64(pnr::hash_file(cal_features))}};
      for (char label : cal_channels) {
        int c = channel_index(std::string(1, label));
        auto result = pnr::calibrate_from_areas(pnr::channel_areas(features, c), cc);
        auto report = pnr::calibration_report(result);
        report["provenance"] = provenance;
        pnr::write_text_file(dir / (std::string("calibration_") + label + ".json"), report.dump(2) + "\n");
        std::fprintf(stderr, "calibrate %c: %zu photon numbers, R^2 = %.6f\n", label,
                     result.calibration.components.size(), result.fit->r_squared);
        for (const auto& w : result.fit->warnings) std::fprintf(stderr, "  warning: %s\n", w.c_str());
      }
      return 0;
    }

    if (*count) {
      auto dir = out_dir_or(cnt_out);
      std::filesystem::create_directories(dir);
      std::vector<pnr::CountRecord> records;
      double misclassification = 0.0;
      nlohmann::json provenance;
      if (!cnt_events.empty()) {
        auto in = open_in(cnt_events);
        for (const auto& ev : pnr::read_events_csv(in)) records.push_back(pnr::record_from_sample(ev));
        provenance["input_hash"] = pnr::hex64(pnr::hash_file(cnt_events));
      } else if (!cnt_features.empty()) {
        if (cnt_cal_dir.empty()) throw std::invalid_argument("--features needs --calibrations");
        std::array<pnr::Calibration, 3> cals;
        for (int c = 0; c < 3; ++c) {
          auto path = std::filesystem::path(cnt_cal_dir) / (std::string("calibration_") + char('a' + c) + ".json");
          cals[c] = pnr::calibration_from_json(nlohmann::json::parse(pnr::read_text_file(path)));
          if (cnt_window) cals[c].window_frac = *cnt_window;
        }
        auto in = open_in(cnt_features);
        records = pnr::count_features(pnr::read_features_csv(in), cals);
        misclassification = pnr::misclassification_rate(cals);
        provenance["input_hash"] = pnr::hex64(pnr::hash_file(cnt_features));
      } else {
        throw std::invalid_argument("count needs --features or --events");
      }
      {
        auto out = open_out((dir / "records.csv").string());
        pnr::write_records_csv(out, records);
      }
      pnr::Tally tally(cnt_cap);
      for (const auto& r : records) tally.add(r);
      auto dist = pnr::empirical_distribution(tally, misclassification);
      auto parity = pnr::parity_estimate(tally);
      auto j = pnr::distribution_to_json(dist, parity);
      double mean = 0.0;
      for (std::size_t n = 0; n < dist.pmf.size(); ++n) mean += n * dist.pmf[n];
      j["effective_nbar"] = mean;
      j["misclassification"] = misclassification;
      j["provenance"] = provenance;
      pnr::write_text_file(dir / "distribution.json", j.dump(2) + "\n");
      auto csv = open_out((dir / "distribution.csv").string());
      pnr::write_distribution_csv(csv, dist);
      std::fprintf(stderr, "count: %llu resolved, %llu discarded, parity %.6g +- %.2g\n",
                   static_cast<unsigned long long>(dist.n_events), static_cast<unsigned long long>(dist.n_discarded),
                   parity.value, parity.std_error);
      return 0;
    }

    if (*genbits) {
      auto in = open_in(gb_records);
      auto records = pnr::read_records_csv(in);
      auto bits = pnr::generate(records, gb_d, gb_cap);
      bits.meta.input_hash = pnr::hex64(pnr::hash_file(gb_records));
      pnr::save_bitstream(gb_out, bits, nlohmann::json::object());
      std::fprintf(stderr, "genbits: %llu bits from %llu events (%llu discarded)\n",
                   static_cast<unsigned long long>(bits.size()), static_cast<unsigned long long>(bits.n_events_used),
                   static_cast<unsigned long long>(bits.n_discarded));
      return 0;
    }

    if (*certify) {
      auto bits = pnr::load_bitstream(ce_bits);
      auto plan = pnr::TrialPlan::with_trial_size(ce_trial);
      plan.alpha = ce_alpha;
      if (!ce_tests.empty()) {
        plan.tests.clear();
        for (const auto& t : ce_tests) plan.tests.push_back(pnr::test_from_name(t));
      }
      auto outcomes = pnr::run_test_suite(bits, plan, ce_threads);
      auto dir = out_dir_or(ce_out);
      std::filesystem::create_directories(dir);
      auto j = pnr::report_to_json(outcomes, plan);
      j["provenance"] = {{"input_hash", pnr::hex64(pnr::hash_file(ce_bits))}};
      pnr::write_text_file(dir / "randomness.json", j.dump(2) + "\n");
      auto csv = open_out((dir / "randomness.csv").string());
      pnr::write_report_csv(csv, outcomes);
      auto v = pnr::verdict(outcomes);
      for (const auto& o : outcomes) {
        std::fprintf(stderr, "%-26s %4llu/%-4llu proportion %.4f threshold %.4f %s\n", pnr::test_name(o.id),
                     static_cast<unsigned long long>(o.n_s), static_cast<unsigned long long>(o.n), o.proportion,
                     o.threshold, o.pass ? "pass" : "FAIL");
      }
      std::cout << (v.random ? "random" : "not-random") << "\n";
      return v.random ? 0 : kExitNotRandom;
    }

    if (*figures) {
      pnr::FigureOptions opt;
      opt.parity_events = fg_events;
      opt.seed = fg_seed;
      if (fg_parity) {
        for (int i = 0; i <= 12; ++i) opt.parity_nbars.push_back(0.25 * i);
      }
      for (const auto& name : pnr::write_figures(fg_run, fg_out, opt)) std::cout << name << "\n";
      return 0;
    }

    if (*pipeline) {
      if (pl_dump) {
        std::cout << pnr::config_to_json(pnr::RunConfig{}).dump(2) << "\n";
        return 0;
      }
      pnr::RunConfig cfg = pl_config.empty() ? pnr::RunConfig{} : pnr::load_config(pl_config);
      if (pl_seed) cfg.seed = pl_seed;
      if (pl_events) cfg.events = *pl_events;
      if (pl_nbar) cfg.source.nbar = *pl_nbar;
      if (pl_d) cfg.d = *pl_d;
      if (pl_window) cfg.calibration.window_frac = pl_window;
      if (pl_threads) cfg.threads = *pl_threads;
      if (!pl_out.empty()) cfg.out_dir = pl_out;
      if (!pl_mode.empty()) {
        if (pl_mode != "waveform" && pl_mode != "analytic") throw pnr::ConfigError("--mode must be waveform or analytic");
        cfg.mode = pl_mode == "waveform" ? pnr::SimulationMode::kWaveform : pnr::SimulationMode::kAnalytic;
      }
      if (!pl_cal_mode.empty()) {
        if (pl_cal_mode != "fit" && pl_cal_mode != "oracle") throw pnr::ConfigError("--calibration-mode must be fit or oracle");
        cfg.calibration.mode = pl_cal_mode == "fit" ? pnr::CalibrationMode::kFit : pnr::CalibrationMode::kOracle;
      }
      auto summary = pnr::run_pipeline(cfg, [](const std::string& m) { std::fprintf(stderr, "%s\n", m.c_str()); });
      std::cout << summary.json.dump(2) << "\n";
      if (!summary.json["verdict"].is_null() && !summary.random) return kExitNotRandom;
      return 0;
    }
  } catch (const pnr::StageError& e) {
    std::fprintf(stderr, "pnr: stage %s failed: %s\n", e.stage.c_str(), e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "pnr: %s\n", e.what());
    return 1;
  }
  return 0;
}
