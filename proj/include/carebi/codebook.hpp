#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "carebi/common.hpp"
#include "carebi/csv.hpp"

// Survey item preparation: declarative item specs drive composite
// construction, reverse coding, and modal imputation, producing the ordinal
// response matrix every estimator downstream consumes.

namespace carebi {

// A cell is an ordinal code in [1, n_levels] or missing.
using Cell = std::optional<int>;

// Gate answer of a Yes/No screener column.
using GateCell = std::optional<bool>;  // true = Yes

struct CompositeRule {
  std::string gate_id;   // binary Yes/No source column
  std::string level_id;  // ordinal follow-up column
  int gate_negative_code = 1;
};

struct ItemSpec {
  std::string id;
  int n_levels = 0;
  bool reverse = false;  // for composites: reverses the follow-up column
  std::optional<CompositeRule> composite;
  std::string label;
};

struct Codebook {
  std::vector<ItemSpec> items;  // order defines response-matrix columns
  std::string version;

  const ItemSpec* find(const std::string& id) const {
    for (const auto& it : items)
      if (it.id == id) return &it;
    return nullptr;
  }
};

struct ResponseMatrix {
  std::vector<std::string> row_ids;
  std::vector<std::string> cluster_ids;  // empty string = unknown cluster
  std::vector<std::string> item_ids;
  std::vector<int> n_levels;
  std::vector<std::vector<Cell>> columns;  // columns[item][row]

  size_t n_rows() const { return row_ids.size(); }
  size_t n_items() const { return item_ids.size(); }

  bool has_missing() const {
    for (const auto& col : columns)
      for (const auto& c : col)
        if (!c) return true;
    return false;
  }

  // Dense codes; requires a fully imputed matrix.
  std::vector<std::vector<int>> dense() const {
    std::vector<std::vector<int>> out(n_items(), std::vector<int>(n_rows()));
    for (size_t j = 0; j < n_items(); ++j)
      for (size_t i = 0; i < n_rows(); ++i) {
        if (!columns[j][i])
          throw NumericError("dense(): missing cell in item " + item_ids[j]);
        out[j][i] = *columns[j][i];
      }
    return out;
  }

  int col_index(const std::string& id) const {
    for (size_t j = 0; j < item_ids.size(); ++j)
      if (item_ids[j] == id) return static_cast<int>(j);
    return -1;
  }
};

// ---------------------------------------------------------------------------
// codebook file parsing
//
// Line oriented, '#' comments, one item per line:
//   version <token>
//   item <id> levels=<n> [reverse] [composite=<gate_id>,<level_id>]
//        [gate_negative=<int>] label="<text>"
// Item order defines the column order of the response matrix.

inline Codebook parse_codebook(const std::string& text) {
  Codebook cb;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    const std::string where = "codebook line " + std::to_string(lineno);

    // tokenize respecting label="..."
    std::vector<std::string> tok;
    {
      size_t i = 0;
      while (i < s.size()) {
        while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
        if (i >= s.size()) break;
        size_t start = i;
        bool inq = false;
        while (i < s.size() && (inq || (s[i] != ' ' && s[i] != '\t'))) {
          if (s[i] == '"') inq = !inq;
          ++i;
        }
        tok.push_back(s.substr(start, i - start));
      }
    }
    if (tok[0] == "version") {
      if (tok.size() != 2) throw UserError(where + ": version needs one token");
      cb.version = tok[1];
      continue;
    }
    if (tok[0] != "item")
      throw UserError(where + ": expected 'item' or 'version', got '" + tok[0] + "'");
    if (tok.size() < 3) throw UserError(where + ": item needs id and levels=");

    ItemSpec spec;
    spec.id = tok[1];
    std::string gate, level;
    int gate_negative = 1;
    for (size_t k = 2; k < tok.size(); ++k) {
      const std::string& t = tok[k];
      if (t == "reverse") {
        spec.reverse = true;
      } else if (t.rfind("levels=", 0) == 0) {
        spec.n_levels = std::stoi(t.substr(7));
      } else if (t.rfind("composite=", 0) == 0) {
        auto parts = split(t.substr(10), ',');
        if (parts.size() != 2)
          throw UserError(where + ": composite needs gate_id,level_id");
        gate = parts[0];
        level = parts[1];
      } else if (t.rfind("gate_negative=", 0) == 0) {
        gate_negative = std::stoi(t.substr(14));
      } else if (t.rfind("label=", 0) == 0) {
        std::string v = t.substr(6);
        if (v.size() >= 2 && v.front() == '"' && v.back() == '"')
          v = v.substr(1, v.size() - 2);
        spec.label = v;
      } else {
        throw UserError(where + ": unknown field '" + t + "'");
      }
    }
    if (spec.n_levels < 2)
      throw UserError(where + ": item " + spec.id + " needs n_levels >= 2");
    if (!gate.empty()) {
      if (gate == level)
        throw UserError(where + ": composite gate and level must differ");
      spec.composite = CompositeRule{gate, level, gate_negative};
    }
    cb.items.push_back(std::move(spec));
  }
  if (cb.items.empty()) throw UserError("empty codebook");
  for (size_t a = 0; a < cb.items.size(); ++a)
    for (size_t b = a + 1; b < cb.items.size(); ++b)
      if (cb.items[a].id == cb.items[b].id)
        throw UserError("duplicate item id '" + cb.items[a].id + "'");
  return cb;
}

// ---------------------------------------------------------------------------
// column transforms

// x -> n_levels + 1 - x; missing unchanged. Involution.
inline std::vector<Cell> reverse_code(const std::vector<Cell>& column, int n_levels) {
  std::vector<Cell> out(column.size());
  for (size_t i = 0; i < column.size(); ++i) {
    if (!column[i]) continue;
    int x = *column[i];
    if (x < 1 || x > n_levels)
      throw UserError("reverse_code: value " + std::to_string(x) +
                      " outside [1," + std::to_string(n_levels) + "]");
    out[i] = n_levels + 1 - x;
  }
  return out;
}

// No -> gate_negative_code; Yes -> level + 1; a missing gate propagates, a
// Yes with missing follow-up stays missing for the imputation pass.
inline std::vector<Cell> build_composite(const std::vector<GateCell>& gate,
                                         const std::vector<Cell>& levels,
                                         const CompositeRule& rule) {
  if (gate.size() != levels.size())
    throw UserError("build_composite: column length mismatch");
  std::vector<Cell> out(gate.size());
  for (size_t i = 0; i < gate.size(); ++i) {
    if (!gate[i]) continue;
    if (!*gate[i]) {
      out[i] = rule.gate_negative_code;
    } else if (levels[i]) {
      out[i] = *levels[i] + 1;
    }
  }
  return out;
}

// Replace each missing cell with its column's modal value, ties broken
// toward the lower code. Items with more than max_missing_frac missing are
// rejected by name.
inline ResponseMatrix impute_mode(const ResponseMatrix& m, double max_missing_frac = 0.10) {
  ResponseMatrix out = m;
  const size_t n = m.n_rows();
  for (size_t j = 0; j < m.n_items(); ++j) {
    size_t miss = 0;
    std::map<int, size_t> counts;
    for (const auto& c : m.columns[j]) {
      if (c) ++counts[*c];
      else ++miss;
    }
    if (miss == 0) continue;
    if (static_cast<double>(miss) / static_cast<double>(n) > max_missing_frac)
      throw UserError("item " + m.item_ids[j] + ": missing fraction " +
                      csv::fmt(static_cast<double>(miss) / n, 4) + " exceeds " +
                      csv::fmt(max_missing_frac, 4));
    if (counts.empty())
      throw UserError("item " + m.item_ids[j] + ": entirely missing");
    int mode = 0;
    size_t best = 0;
    for (const auto& [code, cnt] : counts) {  // map order = ascending code
      if (cnt > best) {
        best = cnt;
        mode = code;
      }
    }
    for (auto& c : out.columns[j])
      if (!c) c = mode;
  }
  return out;
}

// ---------------------------------------------------------------------------
// raw table -> response matrix

namespace detail {

inline bool is_missing_token(const std::string& raw) {
  std::string v = trim(raw);
  return v.empty() || v == "NA";
}

inline Cell parse_ordinal(const std::string& raw, const std::string& where) {
  std::string v = trim(raw);
  if (is_missing_token(v)) return std::nullopt;
  try {
    size_t pos = 0;
    int x = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw UserError(where + ": cannot parse ordinal value '" + v + "'");
  }
}

// Yes/No gates; the NSOC extract convention 1=Yes, 2=No is also accepted.
inline GateCell parse_gate(const std::string& raw, const std::string& where) {
  std::string v = lower(trim(raw));
  if (is_missing_token(v)) return std::nullopt;
  if (v == "yes" || v == "y" || v == "1") return true;
  if (v == "no" || v == "n" || v == "2") return false;
  throw UserError(where + ": cannot parse gate value '" + raw + "'");
}

}  // namespace detail

// Full Step-1 recoding: composites built (follow-up reversed first when
// flagged), plain items reversed when flagged, ranges checked, then modal
// imputation. Column order follows the codebook.
inline ResponseMatrix apply_codebook(const csv::Table& raw, const Codebook& cb,
                                     double max_missing_frac = 0.10) {
  if (raw.rows.empty()) throw UserError("no observations");
  const size_t n = raw.rows.size();

  ResponseMatrix m;
  const int rid = raw.col_index("row_id");
  const int cid = raw.col_index("cluster_id");
  m.row_ids.resize(n);
  m.cluster_ids.resize(n);
  for (size_t i = 0; i < n; ++i) {
    m.row_ids[i] = rid >= 0 ? raw.rows[i][rid] : "r" + std::to_string(i + 1);
    m.cluster_ids[i] = cid >= 0 ? trim(raw.rows[i][cid]) : "";
    if (m.cluster_ids[i] == "NA") m.cluster_ids[i] = "";
  }

  auto column_of = [&](const std::string& name) {
    int j = raw.col_index(name);
    if (j < 0) throw UserError("missing source column '" + name + "'");
    return j;
  };

  for (const auto& spec : cb.items) {
    std::vector<Cell> col;
    if (spec.composite) {
      const auto& rule = *spec.composite;
      const int gj = column_of(rule.gate_id);
      const int lj = column_of(rule.level_id);
      const int follow_levels = spec.n_levels - 1;
      std::vector<GateCell> gate(n);
      std::vector<Cell> levels(n);
      for (size_t i = 0; i < n; ++i) {
        const std::string where = "item " + spec.id + " row " + m.row_ids[i];
        gate[i] = detail::parse_gate(raw.rows[i][gj], where);
        levels[i] = detail::parse_ordinal(raw.rows[i][lj], where);
        if (gate[i] && *gate[i] && levels[i] &&
            (*levels[i] < 1 || *levels[i] > follow_levels))
          throw UserError(where + ": follow-up value " + std::to_string(*levels[i]) +
                          " outside [1," + std::to_string(follow_levels) + "]");
      }
      if (spec.reverse) levels = reverse_code(levels, follow_levels);
      col = build_composite(gate, levels, rule);
    } else {
      col.resize(n);
      const int j = column_of(spec.id);
      for (size_t i = 0; i < n; ++i) {
        const std::string where = "item " + spec.id + " row " + m.row_ids[i];
        col[i] = detail::parse_ordinal(raw.rows[i][j], where);
        if (col[i] && (*col[i] < 1 || *col[i] > spec.n_levels))
          throw UserError(where + ": value " + std::to_string(*col[i]) +
                          " outside [1," + std::to_string(spec.n_levels) + "]");
      }
      if (spec.reverse) col = reverse_code(col, spec.n_levels);
    }
    m.item_ids.push_back(spec.id);
    m.n_levels.push_back(spec.n_levels);
    m.columns.push_back(std::move(col));
  }
  return impute_mode(m, max_missing_frac);
}

// ---------------------------------------------------------------------------
// response matrix CSV round trip (row_id, cluster_id, items...)

inline csv::Table to_table(const ResponseMatrix& m) {
  csv::Table t;
  t.header = {"row_id", "cluster_id"};
  for (const auto& id : m.item_ids) t.header.push_back(id);
  t.rows.resize(m.n_rows());
  for (size_t i = 0; i < m.n_rows(); ++i) {
    auto& row = t.rows[i];
    row.push_back(m.row_ids[i]);
    row.push_back(m.cluster_ids[i]);
    for (size_t j = 0; j < m.n_items(); ++j)
      row.push_back(m.columns[j][i] ? std::to_string(*m.columns[j][i]) : "NA");
  }
  return t;
}

inline ResponseMatrix from_table(const csv::Table& t, const Codebook* cb = nullptr) {
  if (t.header.size() < 3 || t.header[0] != "row_id" || t.header[1] != "cluster_id")
    throw UserError("response matrix CSV must start with row_id,cluster_id");
  ResponseMatrix m;
  for (size_t j = 2; j < t.header.size(); ++j) {
    m.item_ids.push_back(t.header[j]);
    int levels = 0;
    if (cb) {
      const ItemSpec* spec = cb->find(t.header[j]);
      if (!spec) throw UserError("item '" + t.header[j] + "' not in codebook");
      levels = spec->n_levels;
    }
    m.n_levels.push_back(levels);
    m.columns.emplace_back();
  }
  for (const auto& row : t.rows) {
    m.row_ids.push_back(row[0]);
    m.cluster_ids.push_back(row[1] == "NA" ? "" : row[1]);
    for (size_t j = 2; j < row.size(); ++j)
      m.columns[j - 2].push_back(
          detail::parse_ordinal(row[j], "item " + m.item_ids[j - 2]));
  }
  // infer level counts from data when no codebook is given
  for (size_t j = 0; j < m.n_items(); ++j) {
    if (m.n_levels[j] > 0) continue;
    int mx = 2;
    for (const auto& c : m.columns[j])
      if (c) mx = std::max(mx, *c);
    m.n_levels[j] = mx;
  }
  return m;
}

}  // namespace carebi
