#pragma once

// CSV input, JSON result documents and CSV plot tables.

#include "json.hpp"

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "exqr/dataset.hpp"
#include "exqr/error.hpp"

namespace exqr {

using Json = nlohmann::ordered_json;

inline constexpr const char* kSchemaVersion = "1";

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;  // data rows, each header.size() cells
  std::vector<std::size_t> line_of_row;        // 1-based source line of each row
};

/// RFC 4180-style reader: comma separated, double-quoted fields may contain
/// commas, quotes ("") and line breaks; CRLF accepted; header row required.
inline CsvTable parse_csv(std::istream& in, const std::string& source = "<input>") {
  std::vector<std::vector<std::string>> records;
  std::vector<std::size_t> lines;
  std::vector<std::string> rec;
  std::string field;
  bool quoted = false, field_started = false, any = false;
  std::size_t line = 1, rec_line = 1;
  auto end_field = [&] {
    rec.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    if (!(rec.size() == 1 && rec[0].empty())) {
      records.push_back(std::move(rec));
      lines.push_back(rec_line);
    }
    rec.clear();
  };
  char c;
  while (in.get(c)) {
    any = true;
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field += '"';
        } else {
          quoted = false;
        }
      } else {
        if (c == '\n') ++line;
        field += c;
      }
      continue;
    }
    if (c == '"' && !field_started) {
      quoted = true;
      field_started = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\r') {
      if (in.peek() != '\n') field += c;
    } else if (c == '\n') {
      end_record();
      rec_line = ++line;
    } else {
      field += c;
      field_started = true;
    }
  }
  if (quoted) throw DataError(source + ": unterminated quoted field starting near line " + std::to_string(rec_line), "csv");
  if (any && (!rec.empty() || !field.empty())) end_record();
  if (records.empty()) throw DataError(source + ": missing header row", "csv");
  CsvTable t;
  t.header = std::move(records.front());
  for (std::size_t i = 1; i < records.size(); ++i) {
    if (records[i].size() != t.header.size()) {
      throw DataError(source + ": line " + std::to_string(lines[i]) + " has " +
                          std::to_string(records[i].size()) + " fields, header has " +
                          std::to_string(t.header.size()),
                      "csv");
    }
    t.rows.push_back(std::move(records[i]));
    t.line_of_row.push_back(lines[i]);
  }
  return t;
}

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "': " + std::strerror(errno));
  return parse_csv(in, path);
}

namespace io_detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

inline bool is_missing_token(const std::string& s) { return s == "NA" || s == "na" || s == "N/A"; }

/// Full-string numeric parse; false on junk or overflow.
inline bool parse_number(const std::string& s, double& out) {
  if (s.empty()) return false;
  errno = 0;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size() && errno != ERANGE && std::isfinite(out);
}

inline std::size_t column_index(const CsvTable& t, const std::string& name, const std::string& source) {
  std::size_t found = t.header.size();
  for (std::size_t j = 0; j < t.header.size(); ++j) {
    if (trim(t.header[j]) == name) {
      if (found != t.header.size()) throw DataError(source + ": column '" + name + "' appears twice in the header", "duplicate_column");
      found = j;
    }
  }
  if (found == t.header.size()) throw DataError(source + ": no column named '" + name + "'", "missing_column");
  return found;
}

}  // namespace io_detail

struct LoadedDataset {
  Dataset data;
  Index rejected_rows = 0;  // rows dropped for an NA in a selected column
};

/// Selects the response and regressors from a CSV table. A selected cell
/// holding NA drops its row (counted); an empty or non-numeric cell is an
/// error naming the line and column. With `add_intercept` a column of ones
/// is prepended; otherwise the first regressor must already be all ones.
inline LoadedDataset dataset_from_csv(const CsvTable& t, const std::string& response,
                                      const std::vector<std::string>& regressors, bool add_intercept,
                                      const std::string& source = "<input>") {
  if (response.empty()) throw UsageError("no response column given");
  if (regressors.empty() && !add_intercept) throw UsageError("no regressors and no intercept");
  std::vector<std::string> selected{response};
  for (const auto& r : regressors) {
    for (const auto& s : selected) {
      if (s == r) throw DataError("column '" + r + "' selected more than once", "duplicate_column");
    }
    selected.push_back(r);
  }
  std::vector<std::size_t> cols;
  for (const auto& s : selected) cols.push_back(io_detail::column_index(t, s, source));

  const Index extra = add_intercept ? 1 : 0;
  const auto d = static_cast<Index>(regressors.size()) + extra;
  std::vector<std::vector<double>> kept;
  Index rejected = 0;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    std::vector<double> vals(cols.size());
    bool missing = false;
    for (std::size_t k = 0; k < cols.size(); ++k) {
      const std::string cell = io_detail::trim(t.rows[i][cols[k]]);
      const std::string where = source + ": line " + std::to_string(t.line_of_row[i]) + ", column '" + selected[k] + "'";
      if (io_detail::is_missing_token(cell)) {
        missing = true;
        continue;
      }
      if (cell.empty()) throw DataError(where + " is blank", "blank_cell");
      if (!io_detail::parse_number(cell, vals[k])) throw DataError(where + " is not a finite number: '" + cell + "'", "non_numeric");
    }
    if (missing) {
      ++rejected;
      continue;
    }
    kept.push_back(std::move(vals));
  }
  const auto T = static_cast<Index>(kept.size());
  Vector y(T);
  Matrix X(T, d);
  for (Index t2 = 0; t2 < T; ++t2) {
    const auto& v = kept[static_cast<std::size_t>(t2)];
    y(t2) = v[0];
    if (add_intercept) X(t2, 0) = 1.0;
    for (std::size_t k = 1; k < v.size(); ++k) X(t2, extra + static_cast<Index>(k) - 1) = v[k];
  }
  std::vector<std::string> names;
  if (add_intercept) names.push_back("(intercept)");
  names.insert(names.end(), regressors.begin(), regressors.end());
  return {make_dataset(std::move(y), std::move(X), std::move(names)), rejected};
}

inline LoadedDataset load_dataset_csv(const std::string& path, const std::string& response,
                                      const std::vector<std::string>& regressors, bool add_intercept = true) {
  return dataset_from_csv(read_csv(path), response, regressors, add_intercept, path);
}

// ---------------------------------------------------------------------------
// Output

/// Shortest text that reads back to the same double (at most 17 significant digits).
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

inline void check_writable(const std::string& path, bool force) {
  if (path.empty()) throw UsageError("empty output path");
  if (!force && std::filesystem::exists(path)) {
    throw IoError("refusing to overwrite '" + path + "' (use --force)", "exists");
  }
}

inline void write_text_file(const std::string& path, const std::string& text, bool force) {
  check_writable(path, force);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "': " + std::strerror(errno));
  out << text;
  out.flush();
  if (!out) throw IoError("write to '" + path + "' failed");
}

/// JSON text; numbers are written in shortest round-trip form.
inline std::string dump_json(const Json& doc) { return doc.dump(2) + "\n"; }

inline void write_json(const Json& doc, const std::string& path, bool force) {
  write_text_file(path, dump_json(doc), force);
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "': " + std::strerror(errno));
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw DataError(path + ": invalid JSON: " + e.what(), "json");
  }
}

/// Plot table: header row, units row, then data rows. Cells are numbers
/// (round-trip formatted) or text.
struct PlotTable {
  std::vector<std::string> columns;
  std::vector<std::string> units;
  std::vector<std::vector<std::string>> rows;

  void add_row(std::vector<std::string> r) {
    if (r.size() != columns.size()) throw UsageError("plot table row has the wrong width");
    rows.push_back(std::move(r));
  }

  /// Numeric column by name.
  std::vector<double> numeric(const std::string& name) const {
    std::size_t j = 0;
    while (j < columns.size() && columns[j] != name) ++j;
    if (j == columns.size()) throw DataError("plot table has no column '" + name + "'", "missing_column");
    std::vector<double> out;
    for (const auto& r : rows) {
      double v = 0.0;
      if (!io_detail::parse_number(r[j], v)) throw DataError("non-numeric cell '" + r[j] + "' in column '" + name + "'", "non_numeric");
      out.push_back(v);
    }
    return out;
  }
};

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string to_csv(const PlotTable& t) {
  if (t.units.size() != t.columns.size()) throw UsageError("plot table units row has the wrong width");
  std::ostringstream os;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t j = 0; j < cells.size(); ++j) os << (j ? "," : "") << csv_escape(cells[j]);
    os << "\n";
  };
  line(t.columns);
  line(t.units);
  for (const auto& r : t.rows) line(r);
  return os.str();
}

inline void write_plot_table(const PlotTable& t, const std::string& path, bool force) {
  write_text_file(path, to_csv(t), force);
}

inline PlotTable read_plot_table(const std::string& path) {
  CsvTable c = read_csv(path);
  if (c.rows.empty()) throw DataError(path + ": plot table lacks a units row", "csv");
  PlotTable t;
  t.columns = std::move(c.header);
  t.units = std::move(c.rows.front());
  t.rows.assign(std::make_move_iterator(c.rows.begin() + 1), std::make_move_iterator(c.rows.end()));
  return t;
}

}  // namespace exqr
