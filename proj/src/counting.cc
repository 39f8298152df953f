#include "pnr/counting.h"

#include <cmath>
#include <ostream>
#include <string>

#include "pnr/io_util.h"

namespace pnr {

Assignment total_count(std::span<const Assignment, 3> channels) {
  int sum = 0;
  for (const auto& c : channels) {
    if (!c.is_resolved()) return c;
    sum += *c.photons;
  }
  return Assignment::resolved(sum);
}

CountRecord make_record(std::uint64_t event_id, const std::array<Assignment, 3>& channels) {
  return CountRecord{event_id, channels, total_count(channels)};
}

CountRecord record_from_sample(const EventSample& sample) {
  std::array<Assignment, 3> ch;
  for (int c = 0; c < 3; ++c) ch[c] = Assignment::resolved(static_cast<int>(sample.counts[c]));
  return make_record(sample.event_id, ch);
}

CountRecord record_from_areas(std::uint64_t event_id, const std::array<std::optional<double>, 3>& areas,
                              std::span<const Calibration, 3> calibrations) {
  std::array<Assignment, 3> ch;
  for (int c = 0; c < 3; ++c) {
    ch[c] = areas[c] ? assign(*areas[c], calibrations[c]) : Assignment::discard(DiscardReason::kMissing);
  }
  return make_record(event_id, ch);
}

Tally::Tally(int n_cap) : n_cap(n_cap) {
  if (n_cap < 0) throw std::invalid_argument("count cap must be non-negative");
  counts.assign(n_cap + 1, 0);
}

void Tally::add_total(int total) {
  if (total < 0) throw std::invalid_argument("negative photon total");
  if (total > n_cap) {
    ++over_cap;
  } else {
    ++counts[total];
  }
}

void Tally::add(const CountRecord& record) {
  if (record.total.is_resolved()) {
    add_total(*record.total.photons);
  } else {
    ++discarded[static_cast<int>(record.total.reason)];
  }
}

void Tally::merge(const Tally& other) {
  if (other.n_cap != n_cap) throw std::invalid_argument("cannot merge tallies with different caps");
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
  over_cap += other.over_cap;
  for (int i = 0; i < 3; ++i) discarded[i] += other.discarded[i];
}

std::uint64_t Tally::resolved() const {
  std::uint64_t n = 0;
  for (auto c : counts) n += c;
  return n;
}

std::uint64_t Tally::n_discarded() const { return over_cap + discarded[0] + discarded[1] + discarded[2]; }

double misclassification_rate(std::span<const Calibration> calibrations) {
  double total = 0.0;
  for (const auto& cal : calibrations) {
    auto rates = error_rates(cal);
    double wsum = 0.0, esum = 0.0;
    for (std::size_t i = 0; i < rates.size(); ++i) {
      wsum += cal.components[i].weight;
      esum += cal.components[i].weight * rates[i].error;
    }
    if (wsum > 0.0) total += esum / wsum;
  }
  return std::min(total, 1.0);
}

Distribution empirical_distribution(const Tally& tally, double misclassification) {
  if (!(misclassification >= 0.0 && misclassification <= 1.0)) {
    throw std::domain_error("misclassification rate must be in [0, 1]");
  }
  std::uint64_t n = tally.resolved();
  if (n == 0) throw EmptyDataError("no resolved events");
  Distribution d;
  d.n_events = n;
  d.n_discarded = tally.n_discarded();
  d.pmf.resize(tally.counts.size());
  double dn = static_cast<double>(n);
  for (std::size_t i = 0; i < d.pmf.size(); ++i) d.pmf[i] = static_cast<double>(tally.counts[i]) / dn;
  d.errors.resize(d.pmf.size());
  for (std::size_t i = 0; i < d.pmf.size(); ++i) {
    double p = d.pmf[i];
    double left = i > 0 ? d.pmf[i - 1] : 0.0;
    double right = i + 1 < d.pmf.size() ? d.pmf[i + 1] : 0.0;
    double shift = 0.5 * misclassification * (left + right) - misclassification * p;
    d.errors[i] = std::sqrt(p * (1.0 - p) / dn + shift * shift);
  }
  return d;
}

Distribution empirical_distribution(std::span<const CountRecord> records, int n_cap, double misclassification) {
  Tally t(n_cap);
  for (const auto& r : records) t.add(r);
  return empirical_distribution(t, misclassification);
}

ParityEstimate parity_estimate(const Tally& tally) {
  std::uint64_t even = 0, odd = 0;
  for (std::size_t i = 0; i < tally.counts.size(); ++i) (i % 2 == 0 ? even : odd) += tally.counts[i];
  std::uint64_t n = even + odd;
  if (n == 0) throw EmptyDataError("no resolved events");
  double dn = static_cast<double>(n);
  double v = (static_cast<double>(even) - static_cast<double>(odd)) / dn;
  return {v, std::sqrt(std::max(0.0, 1.0 - v * v) / dn)};
}

ParityEstimate parity_estimate(std::span<const CountRecord> records, int n_cap) {
  Tally t(n_cap);
  for (const auto& r : records) t.add(r);
  return parity_estimate(t);
}

nlohmann::json distribution_to_json(const Distribution& dist, const ParityEstimate& parity) {
  return {{"schema", "pnr.distribution"}, {"version", 1},
          {"pmf", dist.pmf},              {"errors", dist.errors},
          {"n_events", dist.n_events},    {"n_discarded", dist.n_discarded},
          {"parity", parity.value},       {"parity_se", parity.std_error}};
}

void write_distribution_csv(std::ostream& out, const Distribution& dist) {
  out << "n,probability,error\n";
  out.precision(17);
  for (std::size_t i = 0; i < dist.pmf.size(); ++i) out << i << ',' << dist.pmf[i] << ',' << dist.errors[i] << '\n';
}

namespace {

std::string cell(const Assignment& a) {
  return a.is_resolved() ? std::to_string(*a.photons) : std::string(discard_reason_name(a.reason));
}

Assignment parse_cell(const std::string& s) {
  for (auto r : {DiscardReason::kOverflow, DiscardReason::kOutsideWindow, DiscardReason::kMissing}) {
    if (s == discard_reason_name(r)) return Assignment::discard(r);
  }
  auto v = parse_i64(s);
  if (v < 0 || v > 1000) throw FormatError("photon number out of range: " + s);
  return Assignment::resolved(static_cast<int>(v));
}

}  // namespace

void write_records_csv(std::ostream& out, std::span<const CountRecord> records) {
  out << "event_id,n_a,n_b,n_c,total\n";
  for (const auto& r : records) {
    out << r.event_id << ',' << cell(r.channels[0]) << ',' << cell(r.channels[1]) << ',' << cell(r.channels[2]) << ','
        << cell(r.total) << '\n';
  }
}

std::vector<CountRecord> read_records_csv(std::istream& in) {
  CsvReader reader(in, {"event_id", "n_a", "n_b", "n_c", "total"});
  std::vector<CountRecord> out;
  while (auto row = reader.next()) {
    auto& f = *row;
    auto rec = make_record(parse_u64(f[0]), {parse_cell(f[1]), parse_cell(f[2]), parse_cell(f[3])});
    if (!(rec.total == parse_cell(f[4]))) {
      throw FormatError("line " + std::to_string(reader.line()) + ": total disagrees with channels");
    }
    out.push_back(rec);
  }
  return out;
}

}  // namespace pnr
