#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "carebi/common.hpp"

namespace carebi::csv {

// Minimal RFC-4180-ish table: comma separated, double quotes around fields
// containing commas/quotes, "" as the escaped quote.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int col_index(const std::string& name) const {
    for (size_t j = 0; j < header.size(); ++j)
      if (header[j] == name) return static_cast<int>(j);
    return -1;
  }
};

inline std::vector<std::string> parse_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(field);
      field.clear();
    } else if (c != '\r') {
      field += c;
    }
  }
  out.push_back(field);
  return out;
}

inline Table read(std::istream& in, const std::string& what) {
  Table t;
  std::string line;
  if (!std::getline(in, line)) throw UserError(what + ": empty file");
  t.header = parse_line(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto row = parse_line(line);
    if (row.size() != t.header.size())
      throw UserError(what + ": row with " + std::to_string(row.size()) +
                      " fields, expected " + std::to_string(t.header.size()));
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline Table read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UserError("cannot open " + path);
  return read(in, path);
}

inline Table read_string(const std::string& text, const std::string& what = "csv") {
  std::istringstream in(text);
  return read(in, what);
}

inline std::string quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += '"';
  return out;
}

// Fixed-width float formatting used by every artifact writer: round-trip
// precise enough for analysis, byte-stable run to run.
inline std::string fmt(double x, int digits = 10) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", digits, x);
  std::string s(buf);
  if (s == "-0") s = "0";
  return s;
}

inline void write_file(const std::string& path, const Table& t) {
  std::ofstream out(path);
  if (!out) throw UserError("cannot write " + path);
  for (size_t j = 0; j < t.header.size(); ++j)
    out << (j ? "," : "") << quote(t.header[j]);
  out << '\n';
  for (const auto& row : t.rows) {
    for (size_t j = 0; j < row.size(); ++j)
      out << (j ? "," : "") << quote(row[j]);
    out << '\n';
  }
}

}  // namespace carebi::csv
