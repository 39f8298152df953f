#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "pnr/calibrate.h"
#include "pnr/counting.h"
#include "pnr/detector.h"
#include "pnr/nist.h"
#include "pnr/pipeline.h"
#include "pnr/qrng.h"
#include "pnr/random.h"
#include "pnr/source.h"
#include "pnr/theory.h"

namespace py = pybind11;

namespace pnr {
namespace {

using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;
using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

BitSpan as_bits(const U8Array& a) { return {a.data(), static_cast<std::size_t>(a.size())}; }

ChannelTriple channels_for(double nbar, double r1_sq, double r2_sq, std::array<double, 3> etas) {
  return split_coherent(nbar, SplitterNetwork::from_reflectances(r1_sq, r2_sq), etas);
}

py::dict component_dict(const GaussComponent& c) {
  py::dict d;
  d["n"] = c.n;
  d["mu"] = c.mu;
  d["sigma"] = c.sigma;
  d["weight"] = c.weight;
  return d;
}

}  // namespace
}  // namespace pnr

PYBIND11_MODULE(_pnr, m) {
  using namespace pnr;
  m.doc() = "Photon-number-resolving QRNG core";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<StageError>(m, "StageError", PyExc_RuntimeError);
  py::register_exception<FitError>(m, "FitError", PyExc_RuntimeError);
  py::register_exception<SequenceTooShort>(m, "SequenceTooShort", PyExc_ValueError);

  // theory
  m.def("poisson_pmf", &poisson_pmf, py::arg("nbar"), py::arg("n"));
  m.def("coherent_parity", &coherent_parity, py::arg("nbar"));
  m.def("mod4_probability", &mod4_probability_closed_form, py::arg("nbar"), py::arg("k"));
  m.def("bias_trend", &bias_trend, py::arg("nbar"), py::arg("q"));
  m.def("apply_loss", &apply_loss, py::arg("nbar"), py::arg("eta"));
  m.def(
      "modq_probabilities",
      [](double nbar, int q, std::optional<int> n_max) {
        auto r = modq_probabilities({nbar}, {q, n_max});
        py::dict d;
        d["probabilities"] = r.probabilities;
        d["deviations"] = r.deviations;
        d["max_bias"] = r.max_bias;
        d["truncated"] = r.truncated;
        return d;
      },
      py::arg("nbar"), py::arg("q"), py::arg("n_max") = std::optional<int>{100});

  // source
  m.def(
      "sample_counts",
      [](double nbar, std::uint64_t events, std::uint64_t seed, double r1_sq, double r2_sq, std::array<double, 3> etas,
         bool phase_jitter) {
        auto evs = sample_events(channels_for(nbar, r1_sq, r2_sq, etas), events, seed, 0, {.phase_jitter = phase_jitter});
        py::array_t<std::uint32_t> out({static_cast<py::ssize_t>(evs.size()), py::ssize_t{3}});
        auto v = out.mutable_unchecked<2>();
        for (std::size_t i = 0; i < evs.size(); ++i) {
          for (int c = 0; c < 3; ++c) v(i, c) = evs[i].counts[c];
        }
        return out;
      },
      py::arg("nbar"), py::arg("events"), py::arg("seed"), py::arg("r1_sq") = 1.0 / 3.0, py::arg("r2_sq") = 0.5,
      py::arg("etas") = std::array<double, 3>{1.0, 1.0, 1.0}, py::arg("phase_jitter") = false,
      "Per-channel photon counts, shape (events, 3).");

  // detector
  m.def(
      "pulse_areas",
      [](const std::vector<int>& photons, std::uint64_t seed) {
        WaveformParams p;
        DaqThresholds thr;
        std::vector<double> out(photons.size());
        for (std::size_t i = 0; i < photons.size(); ++i) {
          auto f = simulate_response(photons[i], p, thr, derive_seed(seed, streams::kPulseA, i));
          out[i] = f ? static_cast<double>(f->area) : 0.0;
        }
        return py::array_t<double>(out.size(), out.data());
      },
      py::arg("photons"), py::arg("seed"), "Extracted areas for pulses with default detector settings.");
  m.def(
      "synth_pulse", [](int n, std::uint64_t seed) { return synth_pulse(n, WaveformParams{}, seed).samples; },
      py::arg("n"), py::arg("seed"));
  m.def(
      "expected_area", [](int n) { return expected_area(n, WaveformParams{}); }, py::arg("n"));

  // calibration
  m.def(
      "fit_mixture",
      [](const F64Array& areas, std::size_t bins, std::size_t k_max) {
        std::span<const double> a(areas.data(), static_cast<std::size_t>(areas.size()));
        auto fit = fit_mixture(AreaHistogram::from_areas(a, bins), k_max);
        py::list comps;
        for (const auto& c : fit.components) comps.append(component_dict(c));
        py::dict d;
        d["components"] = comps;
        d["r_squared"] = fit.r_squared;
        d["warnings"] = fit.warnings;
        return d;
      },
      py::arg("areas"), py::arg("bins") = 4096, py::arg("k_max") = 38);
  m.def(
      "confidences",
      [](const std::vector<std::array<double, 3>>& mu_sigma_weight, std::optional<double> window_frac) {
        std::vector<GaussComponent> comps;
        for (std::size_t n = 0; n < mu_sigma_weight.size(); ++n) {
          const auto& [mu, sigma, w] = mu_sigma_weight[n];
          comps.push_back({static_cast<int>(n), mu, sigma, w});
        }
        auto cal = build_calibration(comps, {.window_frac = window_frac});
        std::vector<double> out;
        for (const auto& e : error_rates(cal)) out.push_back(e.confidence);
        return out;
      },
      py::arg("mu_sigma_weight"), py::arg("window_frac") = std::optional<double>{},
      "Per-n assignment confidence for components listed in photon-number order.");
  m.def("window_keep_fraction", &window_keep_fraction, py::arg("window_frac"));

  // bits
  m.def(
      "bits_from_totals",
      [](const std::vector<std::uint64_t>& totals, int d) {
        auto s = generate_from_totals(totals, d);
        auto bits = s.unpack(0, s.size());
        return py::array_t<std::uint8_t>(bits.size(), bits.data());
      },
      py::arg("totals"), py::arg("d"), "Unpacked bits (0/1), d per event, most significant first.");

  // nist
  m.def(
      "frequency_test", [](const U8Array& b) { return frequency_test(as_bits(b)); }, py::arg("bits"));
  m.def(
      "runs_test", [](const U8Array& b) { return runs_test(as_bits(b)); }, py::arg("bits"));
  m.def(
      "block_frequency_test", [](const U8Array& b, int m) { return block_frequency_test(as_bits(b), m); },
      py::arg("bits"), py::arg("block_len") = 128);
  m.def(
      "longest_run_test", [](const U8Array& b) { return longest_run_test(as_bits(b)); }, py::arg("bits"));
  m.def(
      "spectral_test", [](const U8Array& b) { return spectral_test(as_bits(b)); }, py::arg("bits"));
  m.def(
      "wilson_interval",
      [](double n_s, std::uint64_t n, double alpha) {
        auto w = wilson_interval(n_s, n, alpha);
        return std::make_pair(w.low, w.high);
      },
      py::arg("n_s"), py::arg("n"), py::arg("alpha") = 0.01);
  m.def("trial_count", &trial_count, py::arg("bits"), py::arg("trial_size"));
  m.def(
      "certify",
      [](const U8Array& b, std::uint64_t trial_size, double alpha) {
        auto plan = TrialPlan::with_trial_size(trial_size);
        plan.alpha = alpha;
        auto out = run_test_suite(as_bits(b), plan);
        return report_to_json(out, plan).dump();
      },
      py::arg("bits"), py::arg("trial_size") = 100000, py::arg("alpha") = 0.01,
      "Runs the test suite; returns the report as a JSON string.");

  // pipeline
  m.def(
      "default_config", [] { return config_to_json(RunConfig{}).dump(); }, "Default run configuration as JSON.");
  m.def(
      "run_pipeline",
      [](const std::string& config_json) {
        auto config = config_from_json(nlohmann::json::parse(config_json));
        PipelineSummary s;
        {
          py::gil_scoped_release release;
          s = run_pipeline(config);
        }
        return s.json.dump();
      },
      py::arg("config_json"), "Runs every stage; returns summary.json as a string.");
}
