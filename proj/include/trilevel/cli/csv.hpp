#pragma once

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace trilevel::cli {

// One CSV curve: `#` comment lines, a header row, numeric rows. The first
// column is the abscissa.
struct CurveTable {
  std::vector<std::string> comments;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  std::size_t column_index(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name) return i;
    throw std::out_of_range("no column " + name);
  }
  double at(std::size_t row, const std::string& name) const {
    return rows.at(row).at(column_index(name));
  }
};

struct CurveRecord {
  std::string abscissa_name;
  double abscissa = 0.0;
  std::vector<std::pair<std::string, double>> values;
};

inline std::string format_number(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  // Shortest representation that round-trips exactly.
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

inline void write_csv(std::ostream& os, const CurveTable& t) {
  for (const auto& c : t.comments) os << "# " << c << '\n';
  for (std::size_t i = 0; i < t.columns.size(); ++i)
    os << (i ? "," : "") << t.columns[i];
  os << '\n';
  for (const auto& row : t.rows) {
    if (row.size() != t.columns.size())
      throw std::logic_error("row width does not match header");
    for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << format_number(row[i]);
    os << '\n';
  }
}

inline CurveTable read_csv(std::istream& is) {
  CurveTable t;
  std::string line;
  bool have_header = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      t.comments.push_back(line.size() > 2 ? line.substr(2) : std::string{});
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!have_header) {
      t.columns = std::move(cells);
      have_header = true;
      continue;
    }
    if (cells.size() != t.columns.size())
      throw std::runtime_error("malformed CSV row: " + line);
    std::vector<double> row;
    row.reserve(cells.size());
    for (const auto& c : cells) {
      char* end = nullptr;
      const double v = std::strtod(c.c_str(), &end);
      if (end == c.c_str() || *end != '\0') throw std::runtime_error("bad number: " + c);
      row.push_back(v);
    }
    t.rows.push_back(std::move(row));
  }
  if (!have_header) throw std::runtime_error("CSV has no header row");
  return t;
}

inline std::vector<CurveRecord> records(const CurveTable& t) {
  std::vector<CurveRecord> out;
  for (const auto& row : t.rows) {
    CurveRecord r{t.columns.at(0), row.at(0), {}};
    for (std::size_t i = 1; i < row.size(); ++i) r.values.emplace_back(t.columns[i], row[i]);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace trilevel::cli
