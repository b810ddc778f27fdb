#pragma once

#include <cstdlib>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "greedydml/types.hpp"

namespace greedydml {

// Plain numeric CSV: UTF-8, first row is the header, comma delimiter,
// decimal-point numbers, no quoting. Data rows are numbered from 1 in
// error messages.

struct ColumnBindings {
  std::string outcome;
  std::string treatment;
  std::optional<std::string> instrument;
  std::vector<std::string> control_patterns;  // literal names or globs
};

struct CsvColumns {
  std::vector<std::string> header;
  std::vector<Vector> columns;  // one per header entry, equal lengths
};

/// Wildcard match with '*' (any run) and '?' (any single character).
inline bool glob_match(const std::string& pattern, const std::string& text) {
  size_t p = 0, t = 0, star = std::string::npos, mark = 0;
  while (t < text.size()) {
    if (p < pattern.size() && (pattern[p] == '?' || pattern[p] == text[t])) {
      ++p, ++t;
    } else if (p < pattern.size() && pattern[p] == '*') {
      star = p++;
      mark = t;
    } else if (star != std::string::npos) {
      p = star + 1;
      t = ++mark;
    } else {
      return false;
    }
  }
  while (p < pattern.size() && pattern[p] == '*') ++p;
  return p == pattern.size();
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

inline double parse_cell(const std::string& cell, Index row,
                         const std::string& column) {
  const std::string value = trim(cell);
  const char* begin = value.c_str();
  char* end = nullptr;
  const double parsed = std::strtod(begin, &end);
  if (value.empty() || end != begin + value.size())
    throw ParseError("csv: non-numeric cell at row " + std::to_string(row) +
                     ", column " + column);
  return parsed;
}

}  // namespace detail

/// Reads every column of a numeric CSV file.
inline CsvColumns read_csv_columns(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw EmptyData("csv: empty file " + path);
  CsvColumns table;
  for (const std::string& name : detail::split_csv_line(line))
    table.header.push_back(detail::trim(name));
  const size_t width = table.header.size();

  std::vector<std::vector<double>> cols(width);
  Index row = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    ++row;
    const std::vector<std::string> cells = detail::split_csv_line(line);
    if (cells.size() != width)
      throw ParseError("csv: row " + std::to_string(row) + " has " +
                       std::to_string(cells.size()) + " cells, expected " +
                       std::to_string(width));
    for (size_t j = 0; j < width; ++j)
      cols[j].push_back(detail::parse_cell(cells[j], row, table.header[j]));
  }
  if (row == 0) throw EmptyData("csv: no data rows in " + path);

  table.columns.reserve(width);
  for (const std::vector<double>& c : cols)
    table.columns.push_back(
        Eigen::Map<const Vector>(c.data(), static_cast<Index>(c.size())));
  return table;
}

/// Resolves control patterns against the header in header order. Patterns
/// never capture the outcome/treatment/instrument columns, and each column
/// is taken once; a pattern matching nothing is an error.
inline std::vector<Index> resolve_controls(const std::vector<std::string>& header,
                                           const ColumnBindings& bindings) {
  const auto is_bound = [&](const std::string& name) {
    return name == bindings.outcome || name == bindings.treatment ||
           (bindings.instrument && name == *bindings.instrument);
  };
  std::vector<char> taken(header.size(), 0);
  std::vector<Index> controls;
  for (const std::string& pattern : bindings.control_patterns) {
    bool matched = false;
    for (size_t j = 0; j < header.size(); ++j) {
      if (taken[j] || is_bound(header[j])) continue;
      if (glob_match(pattern, header[j])) {
        taken[j] = 1;
        controls.push_back(static_cast<Index>(j));
        matched = true;
      }
    }
    if (!matched)
      throw MissingColumn("csv: no control column matches '" + pattern + "'");
  }
  return controls;
}

/// CSV -> validated Dataset through the column bindings.
inline Dataset read_csv(const std::string& path, const ColumnBindings& bindings) {
  const CsvColumns table = read_csv_columns(path);
  const auto find = [&](const std::string& name) -> Index {
    for (size_t j = 0; j < table.header.size(); ++j)
      if (table.header[j] == name) return static_cast<Index>(j);
    throw MissingColumn("csv: column '" + name + "' not in header");
  };
  const Index y_col = find(bindings.outcome);
  const Index d_col = find(bindings.treatment);
  std::optional<Vector> z;
  if (bindings.instrument) z = table.columns[static_cast<size_t>(find(*bindings.instrument))];

  std::vector<Vector> controls;
  for (Index j : resolve_controls(table.header, bindings))
    controls.push_back(table.columns[static_cast<size_t>(j)]);
  if (controls.empty()) throw MissingColumn("csv: no control columns bound");

  return validate_dataset(controls, table.columns[static_cast<size_t>(y_col)],
                          table.columns[static_cast<size_t>(d_col)], std::move(z));
}

/// Writes columns with round-trip precision (17 significant digits).
inline void write_csv(std::ostream& out, const std::vector<std::string>& header,
                      const Matrix& cells) {
  for (size_t j = 0; j < header.size(); ++j)
    out << header[j] << (j + 1 < header.size() ? "," : "\n");
  char buf[40];
  for (Index i = 0; i < cells.rows(); ++i) {
    for (Index j = 0; j < cells.cols(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", cells(i, j));
      out << buf << (j + 1 < cells.cols() ? "," : "\n");
    }
  }
}

inline void write_csv_file(const std::string& path,
                           const std::vector<std::string>& header,
                           const Matrix& cells) {
  std::ofstream out(path);
  if (!out) throw ParseError("csv: cannot write " + path);
  write_csv(out, header, cells);
}

}  // namespace greedydml
