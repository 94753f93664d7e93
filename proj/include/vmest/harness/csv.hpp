#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "vmest/error.hpp"
#include "vmest/models/expmix.hpp"
#include "vmest/models/glmm_ri.hpp"

namespace vmest::harness {

/// Shortest round-trip is not what reports want: every real is written with
/// 17 significant digits.
inline std::string fmt17(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    std::string_view cell = line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
    while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
    while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t' || cell.back() == '\r')) cell.remove_suffix(1);
    out.emplace_back(cell);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline double parse_real(const std::string& cell, std::size_t row, const std::string& column) {
  double value = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || cell.empty()) {
    throw Error(ErrorKind::InvalidInput, "row " + std::to_string(row) + ": column " + column + " is not a number: '" + cell + "'");
  }
  if (!std::isfinite(value)) {
    throw Error(ErrorKind::InvalidInput, "row " + std::to_string(row) + ": column " + column + " is not finite");
  }
  return value;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;  // rows[k] is data row k + 1
};

/// Reads a comma-separated file with a header line. Blank lines are
/// skipped; every other line must have as many cells as the header.
inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path + "'");
  CsvTable t;
  std::string line;
  std::size_t row = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    auto cells = split_csv_line(line);
    if (!have_header) {
      if (cells.size() >= 1 && cells[0].size() >= 3 && cells[0].compare(0, 3, "\xEF\xBB\xBF") == 0) cells[0].erase(0, 3);
      t.header = std::move(cells);
      have_header = true;
      continue;
    }
    ++row;
    if (cells.size() != t.header.size()) {
      throw Error(ErrorKind::InvalidInput, "row " + std::to_string(row) + ": expected " + std::to_string(t.header.size()) +
                                               " cells, found " + std::to_string(cells.size()));
    }
    t.rows.push_back(std::move(cells));
  }
  if (!have_header) throw Error(ErrorKind::InvalidInput, "'" + path + "' is empty");
  return t;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write '" + path + "'");
  out << text;
  if (!out) throw Error(ErrorKind::Io, "write failed for '" + path + "'");
}

inline std::vector<models::ExpMixDatum> read_expmix_csv(const std::string& path) {
  const CsvTable t = read_csv(path);
  if (t.header != std::vector<std::string>{"x1", "x2"}) {
    throw Error(ErrorKind::InvalidInput, "'" + path + "': expected header 'x1,x2'");
  }
  std::vector<models::ExpMixDatum> out;
  out.reserve(t.rows.size());
  for (std::size_t k = 0; k < t.rows.size(); ++k) {
    const std::size_t row = k + 1;
    const double x1 = parse_real(t.rows[k][0], row, "x1");
    const double x2 = parse_real(t.rows[k][1], row, "x2");
    if (!(x1 > 0.0)) throw Error(ErrorKind::InvalidInput, "row " + std::to_string(row) + ": x1 must be positive");
    if (!(x2 > 0.0)) throw Error(ErrorKind::InvalidInput, "row " + std::to_string(row) + ": x2 must be positive");
    out.push_back({x1, x2});
  }
  if (out.empty()) throw Error(ErrorKind::InvalidInput, "'" + path + "' has no data rows");
  return out;
}

inline std::string expmix_csv(const std::vector<models::ExpMixDatum>& data) {
  std::ostringstream os;
  os << "x1,x2\n";
  for (const auto& d : data) os << fmt17(d.x1) << ',' << fmt17(d.x2) << '\n';
  return os.str();
}

struct GlmmData {
  std::vector<std::string> ids;
  std::vector<std::string> covariates;
  std::vector<models::GlmmSubject> subjects;
};

/// Long format: `id,y,<covariates...>`, rows of one subject contiguous.
inline GlmmData read_glmm_csv(const std::string& path) {
  const CsvTable t = read_csv(path);
  if (t.header.size() < 3 || t.header[0] != "id" || t.header[1] != "y") {
    throw Error(ErrorKind::InvalidInput, "'" + path + "': expected header 'id,y,<covariates...>'");
  }
  GlmmData g;
  g.covariates.assign(t.header.begin() + 2, t.header.end());
  const auto p = static_cast<Eigen::Index>(g.covariates.size());
  std::vector<std::vector<double>> rows_x;
  std::vector<double> rows_y;
  auto flush = [&] {
    if (rows_y.empty()) return;
    models::GlmmSubject s{Matrix(static_cast<Eigen::Index>(rows_y.size()), p), Vec(static_cast<Eigen::Index>(rows_y.size()))};
    for (std::size_t j = 0; j < rows_y.size(); ++j) {
      s.y(static_cast<Eigen::Index>(j)) = rows_y[j];
      for (Eigen::Index c = 0; c < p; ++c) s.design(static_cast<Eigen::Index>(j), c) = rows_x[j][static_cast<std::size_t>(c)];
    }
    g.subjects.push_back(std::move(s));
    rows_x.clear();
    rows_y.clear();
  };
  for (std::size_t k = 0; k < t.rows.size(); ++k) {
    const std::size_t row = k + 1;
    const auto& cells = t.rows[k];
    if (cells[0].empty()) throw Error(ErrorKind::InvalidInput, "row " + std::to_string(row) + ": empty id");
    if (g.ids.empty() || g.ids.back() != cells[0]) {
      for (const auto& seen : g.ids) {
        if (seen == cells[0]) {
          throw Error(ErrorKind::InvalidInput, "row " + std::to_string(row) + ": rows of id '" + cells[0] + "' are not contiguous");
        }
      }
      flush();
      g.ids.push_back(cells[0]);
    }
    const double y = parse_real(cells[1], row, "y");
    if (y != 0.0 && y != 1.0) throw Error(ErrorKind::InvalidInput, "row " + std::to_string(row) + ": y must be 0 or 1");
    std::vector<double> x(static_cast<std::size_t>(p));
    for (Eigen::Index c = 0; c < p; ++c) {
      x[static_cast<std::size_t>(c)] = parse_real(cells[static_cast<std::size_t>(c) + 2], row, g.covariates[static_cast<std::size_t>(c)]);
    }
    rows_x.push_back(std::move(x));
    rows_y.push_back(y);
  }
  flush();
  if (g.subjects.empty()) throw Error(ErrorKind::InvalidInput, "'" + path + "' has no data rows");
  return g;
}

inline std::string glmm_csv(const GlmmData& g) {
  std::ostringstream os;
  os << "id,y";
  for (const auto& c : g.covariates) os << ',' << c;
  os << '\n';
  for (std::size_t i = 0; i < g.subjects.size(); ++i) {
    const auto& s = g.subjects[i];
    for (Eigen::Index j = 0; j < s.design.rows(); ++j) {
      os << g.ids[i] << ',' << static_cast<int>(s.y(j));
      for (Eigen::Index c = 0; c < s.design.cols(); ++c) os << ',' << fmt17(s.design(j, c));
      os << '\n';
    }
  }
  return os.str();
}

}  // namespace vmest::harness
