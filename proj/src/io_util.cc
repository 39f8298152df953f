#include "pnr/io_util.h"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace pnr {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) {
    out.push_back(field);
  }
  if (!line.empty() && line.back() == ',') {
    out.emplace_back();
  }
  return out;
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') {
    line.pop_back();
  }
}

}  // namespace

std::uint64_t parse_u64(std::string_view s) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw FormatError("expected an unsigned integer, got '" + std::string(s) + "'");
  }
  return v;
}

std::int64_t parse_i64(std::string_view s) {
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw FormatError("expected an integer, got '" + std::string(s) + "'");
  }
  return v;
}

double parse_double(std::string_view s) {
  std::string tmp(s);
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(tmp, &used);
  } catch (const std::exception&) {
    throw FormatError("expected a number, got '" + tmp + "'");
  }
  if (used != tmp.size()) {
    throw FormatError("expected a number, got '" + tmp + "'");
  }
  return v;
}

CsvReader::CsvReader(std::istream& in, std::vector<std::string> expected_header)
    : in_(in), columns_(expected_header.size()) {
  std::string line;
  if (!std::getline(in_, line)) {
    throw FormatError("missing CSV header");
  }
  ++line_;
  strip_cr(line);
  if (split_csv(line) != expected_header) {
    std::string want;
    for (std::size_t i = 0; i < expected_header.size(); ++i) {
      want += (i ? "," : "") + expected_header[i];
    }
    throw FormatError("unexpected CSV header '" + line + "', expected '" + want + "'");
  }
}

std::optional<std::vector<std::string>> CsvReader::next() {
  std::string line;
  while (std::getline(in_, line)) {
    ++line_;
    strip_cr(line);
    if (line.empty()) {
      continue;
    }
    auto fields = split_csv(line);
    if (fields.size() != columns_) {
      throw FormatError("line " + std::to_string(line_) + ": expected " + std::to_string(columns_) +
                        " fields, got " + std::to_string(fields.size()));
    }
    return fields;
  }
  return std::nullopt;
}

std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t hash_file(const std::filesystem::path& path) { return fnv1a64(read_text_file(path)); }

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open " + path.string());
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

}  // namespace pnr
