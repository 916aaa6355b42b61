#pragma once

// Text formats shared by the harness: FeatureSet dumps, CSV tables written
// at 17 significant digits, and SHA-256 file checksums.
//
// FeatureSet dump:
//   K n d
//   d lines of K*n whitespace-separated values

#include <array>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <openssl/evp.h>

#include "pfc/core.hpp"

namespace pfc {

/// Shortest text that parses back to the identical double (17 significant digits).
inline std::string format_double(double v) {
  std::array<char, 32> buf{};
  std::snprintf(buf.data(), buf.size(), "%.17g", v);
  return buf.data();
}

inline double parse_double(std::string_view text, const std::string& context) {
  std::string s(text);
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size())
    throw FormatError(context + ": cannot parse number '" + s + "'");
  return v;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot open '" + path.string() + "' for writing");
  out << content;
  if (!out) throw ValidationError("write failed for '" + path.string() + "'");
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string feature_set_to_string(const FeatureSet& fs) {
  std::string out = std::to_string(fs.num_classes()) + " " + std::to_string(fs.per_class()) + " " +
                    std::to_string(fs.dim()) + "\n";
  const Matrix& h = fs.features();
  for (Eigen::Index r = 0; r < h.rows(); ++r) {
    for (Eigen::Index c = 0; c < h.cols(); ++c) {
      if (c > 0) out += ' ';
      out += format_double(h(r, c));
    }
    out += '\n';
  }
  return out;
}

inline FeatureSet feature_set_from_string(const std::string& text, const std::string& context = "feature set") {
  std::istringstream in(text);
  long long k = 0, n = 0, d = 0;
  if (!(in >> k >> n >> d) || k < 2 || n < 1 || d < 1)
    throw FormatError(context + ": bad header, expected 'K n d'");
  Matrix h(d, k * n);
  std::string token;
  for (Eigen::Index r = 0; r < h.rows(); ++r)
    for (Eigen::Index c = 0; c < h.cols(); ++c) {
      if (!(in >> token)) throw FormatError(context + ": truncated matrix data");
      h(r, c) = parse_double(token, context);
    }
  if (in >> token) throw FormatError(context + ": trailing data after matrix");
  return FeatureSet(std::move(h), static_cast<std::size_t>(k), static_cast<std::size_t>(n));
}

inline void write_feature_set(const std::filesystem::path& path, const FeatureSet& fs) {
  write_text_file(path, feature_set_to_string(fs));
}

inline FeatureSet read_feature_set(const std::filesystem::path& path) {
  return feature_set_from_string(read_text_file(path), path.string());
}

/// A header plus rows of text cells. Numeric cells go through format_double.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column_index(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw FormatError("csv: no column '" + std::string(name) + "'");
  }

  std::vector<double> numeric_column(std::string_view name) const {
    const std::size_t c = column_index(name);
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& row : rows) out.push_back(parse_double(row.at(c), "csv column " + std::string(name)));
    return out;
  }

  void add_row(std::vector<std::string> cells) {
    if (cells.size() != header.size()) throw DimensionError("csv: row width does not match header");
    rows.push_back(std::move(cells));
  }

  void add_numeric_row(const std::vector<double>& values) {
    std::vector<std::string> cells;
    cells.reserve(values.size());
    for (double v : values) cells.push_back(format_double(v));
    add_row(std::move(cells));
  }

  std::string to_string() const {
    auto join = [](const std::vector<std::string>& cells) {
      std::string line;
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i > 0) line += ',';
        line += cells[i];
      }
      return line + '\n';
    };
    std::string out = join(header);
    for (const auto& row : rows) out += join(row);
    return out;
  }
};

// Cells never contain commas or quotes, so a plain split suffices.
inline CsvTable parse_csv(const std::string& text, const std::string& context = "csv") {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  auto split = [](const std::string& l) {
    std::vector<std::string> cells;
    std::size_t start = 0;
    for (;;) {
      const std::size_t comma = l.find(',', start);
      cells.push_back(l.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    return cells;
  };
  if (!std::getline(in, line) || line.empty()) throw FormatError(context + ": missing header");
  t.header = split(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != t.header.size()) throw FormatError(context + ": ragged row");
    t.rows.push_back(std::move(cells));
  }
  return t;
}

inline void write_csv(const std::filesystem::path& path, const CsvTable& t) {
  write_text_file(path, t.to_string());
}

inline CsvTable read_csv(const std::filesystem::path& path) {
  return parse_csv(read_text_file(path), path.string());
}

inline std::string sha256_hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1)
    throw Error("sha256: digest failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xf];
  }
  return out;
}

inline std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_text_file(path)); }

}  // namespace pfc
