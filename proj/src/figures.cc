#include "pnr/figures.h"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>

#include "pnr/calibrate.h"
#include "pnr/counting.h"
#include "pnr/io_util.h"
#include "pnr/pipeline.h"
#include "pnr/source.h"
#include "pnr/theory.h"

namespace pnr {

void Table::add_row(std::vector<std::string> row) {
  if (row.size() != columns.size()) throw std::invalid_argument("row width does not match the table " + name);
  rows.push_back(std::move(row));
}

void Table::write_csv(std::ostream& out) const {
  for (std::size_t i = 0; i < columns.size(); ++i) out << (i ? "," : "") << columns[i];
  out << '\n';
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) out << (i ? "," : "") << r[i];
    out << '\n';
  }
}

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

Table pulse_traces(const WaveformParams& params, std::span<const int> photon_numbers, std::uint64_t seed, int stride) {
  if (stride < 1) throw std::invalid_argument("stride must be positive");
  Table t{"pulse_traces", {"t_us"}, {}};
  std::vector<Waveform> noisy;
  for (int n : photon_numbers) {
    t.columns.push_back("noiseless_n" + std::to_string(n));
    t.columns.push_back("noisy_n" + std::to_string(n));
    noisy.push_back(synth_pulse(n, params, seed + static_cast<std::uint64_t>(n)));
  }
  for (int i = 0; i < params.record_len; i += stride) {
    std::vector<std::string> row{format_number(i / params.sample_rate * 1e6)};
    double dt = i - params.trigger_time;
    for (std::size_t k = 0; k < photon_numbers.size(); ++k) {
      double clean = dt >= 0 ? params.shape(photon_numbers[k], dt) : 0.0;
      row.push_back(format_number(clean));
      row.push_back(std::to_string(noisy[k].samples[i]));
    }
    t.add_row(std::move(row));
  }
  return t;
}

Table area_histogram(const nlohmann::json& report) {
  if (!report.contains("histogram")) throw MissingReportError("calibration report has no histogram");
  auto cal = calibration_from_json(report);
  AreaHistogram h;
  h.bin_edges = report["histogram"]["edges"].get<std::vector<double>>();
  h.counts = report["histogram"]["counts"].get<std::vector<std::uint64_t>>();
  for (auto c : h.counts) h.total += c;
  auto model = mixture_bin_counts(h, cal.components);
  Table t{"area_histogram", {"area", "count", "model", "bin"}, {}};
  for (std::size_t b = 0; b < h.size(); ++b) {
    double x = h.center(b);
    auto a = assign(x, cal);
    t.add_row({format_number(x), std::to_string(h.counts[b]), format_number(model[b]),
               a.is_resolved() ? std::to_string(*a.photons) : std::string(discard_reason_name(a.reason))});
  }
  return t;
}

Table distribution_table(const nlohmann::json& report) {
  auto pmf = report.at("pmf").get<std::vector<double>>();
  auto err = report.at("errors").get<std::vector<double>>();
  double nbar = report.at("effective_nbar").get<double>();
  Table t{"photon_distribution", {"n", "probability", "error", "poisson"}, {}};
  for (std::size_t n = 0; n < pmf.size(); ++n) {
    t.add_row({std::to_string(n), format_number(pmf[n]), format_number(err[n]), format_number(poisson_pmf(nbar, n))});
  }
  return t;
}

Table parity_scan(std::span<const double> nbars, std::uint64_t events, std::uint64_t seed) {
  Table t{"parity_scan", {"nbar", "parity", "std_error", "theory"}, {}};
  for (std::size_t i = 0; i < nbars.size(); ++i) {
    auto channels = split_coherent(nbars[i], SplitterNetwork::balanced(), {1.0, 1.0, 1.0});
    Tally tally;
    for (std::uint64_t e = 0; e < events; ++e) tally.add(record_from_sample(sample_event(channels, seed + i, e)));
    auto p = parity_estimate(tally);
    t.add_row({format_number(nbars[i]), format_number(p.value), format_number(p.std_error),
               format_number(coherent_parity(nbars[i]))});
  }
  return t;
}

Table proportion_table(const nlohmann::json& report) {
  Table t{"test_proportions", {"test", "n", "n_s", "proportion", "ci_low", "ci_high", "threshold", "pass"}, {}};
  for (const auto& r : report.at("tests")) {
    t.add_row({r.at("test").get<std::string>(), std::to_string(r.at("n").get<std::uint64_t>()),
               std::to_string(r.at("n_s").get<std::uint64_t>()), format_number(r.at("proportion").get<double>()),
               format_number(r.at("ci_low").get<double>()), format_number(r.at("ci_high").get<double>()),
               format_number(r.at("threshold").get<double>()), r.at("pass").get<bool>() ? "1" : "0"});
  }
  return t;
}

Table error_table_figure(const nlohmann::json& report) {
  auto cal = calibration_from_json(report);
  Table t{"assignment_errors", {"n", "error_all", "error_2sigma", "error_1sigma"}, {}};
  for (const auto& r : error_table(cal)) {
    t.add_row({std::to_string(r.n), format_number(r.error_all), format_number(r.error_2sigma),
               format_number(r.error_1sigma)});
  }
  return t;
}

Table residual_bias(std::span<const double> nbars, int n_max) {
  Table t{"residual_bias", {"nbar", "mod2", "mod4", "mod8", "mod16", "mod32"}, {}};
  for (double nbar : nbars) {
    std::vector<std::string> row{format_number(nbar)};
    for (int d = 1; d <= 5; ++d) {
      row.push_back(format_number(modq_probabilities({nbar}, ModQSpec::from_bits(d, n_max)).max_bias));
    }
    t.add_row(std::move(row));
  }
  return t;
}

namespace {

void save(const Table& t, const std::filesystem::path& dir, std::vector<std::string>& written) {
  std::ofstream out(dir / (t.name + ".csv"));
  if (!out) throw std::runtime_error("cannot write " + (dir / (t.name + ".csv")).string());
  t.write_csv(out);
  written.push_back(t.name + ".csv");
}

}  // namespace

std::vector<std::string> write_figures(const std::filesystem::path& run_dir, const std::filesystem::path& out_dir,
                                       const FigureOptions& options) {
  auto load = [&](const char* name) -> std::optional<nlohmann::json> {
    auto p = run_dir / name;
    if (!std::filesystem::exists(p)) return std::nullopt;
    return nlohmann::json::parse(read_text_file(p));
  };
  auto cal_a = load("calibration_a.json");
  auto dist = load("distribution.json");
  auto rnd = load("randomness.json");
  if (!cal_a && !dist && !rnd) {
    throw MissingReportError("no reports in " + run_dir.string() +
                             "; run the pipeline (or calibrate/count/certify) first");
  }
  std::filesystem::create_directories(out_dir);
  std::vector<std::string> written;
  if (auto cfg = load("config.json")) {
    auto config = config_from_json(*cfg);
    std::vector<int> ns = {1, 5, 10, 20, 37};
    save(pulse_traces(config.detector.channels[0], ns, config.seed.value_or(1)), out_dir, written);
  }
  for (char c : {'a', 'b', 'c'}) {
    if (auto r = load((std::string("calibration_") + c + ".json").c_str())) {
      auto h = area_histogram(*r);
      h.name += std::string("_") + c;
      save(h, out_dir, written);
      auto e = error_table_figure(*r);
      e.name += std::string("_") + c;
      save(e, out_dir, written);
    }
  }
  if (dist) save(distribution_table(*dist), out_dir, written);
  if (rnd) save(proportion_table(*rnd), out_dir, written);
  if (!options.parity_nbars.empty()) {
    save(parity_scan(options.parity_nbars, options.parity_events, options.seed), out_dir, written);
  }
  std::vector<double> grid;
  for (int i = 1; i <= 80; ++i) grid.push_back(i);
  save(residual_bias(grid), out_dir, written);
  return written;
}

}  // namespace pnr
