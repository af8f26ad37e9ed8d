#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

#include "lrinfer/error.hpp"
#include "lrinfer/panel.hpp"
#include "lrinfer/treatment.hpp"

namespace lrinfer {

/// A panel read from long-format text together with its row/column labels.
struct LoadedPanel {
  std::vector<std::string> unit_ids;
  std::vector<std::string> time_ids;
  std::variant<ObservedPanel, TreatmentPanel> panel;

  bool has_treatment() const { return std::holds_alternative<TreatmentPanel>(panel); }
};

struct LoadOptions {
  char delimiter = ',';
};

/// Shortest text with 17 significant digits; parses back to the same double.
inline std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

/// 64-bit FNV-1a, rendered as 16 hex digits.
inline std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  detail::require(static_cast<bool>(in), ErrorCode::Io, "cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

/// Writes through a sibling temporary file and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    detail::require(static_cast<bool>(out), ErrorCode::Io, "cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    detail::require(static_cast<bool>(out), ErrorCode::Io, "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error(ErrorCode::Io, "cannot move output into " + path.string());
  }
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_fields(std::string_view line, char delim) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(delim, start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::optional<double> parse_double(std::string_view s) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

inline bool is_absent(std::string_view s) { return s.empty() || s == "NA" || s == "na"; }

/// Orders strings with embedded digit runs compared by numeric value.
inline bool natural_less(std::string_view a, std::string_view b) {
  std::size_t i = 0;
  std::size_t j = 0;
  auto digit = [](char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; };
  while (i < a.size() && j < b.size()) {
    if (digit(a[i]) && digit(b[j])) {
      std::size_t ie = i;
      std::size_t je = j;
      while (ie < a.size() && digit(a[ie])) ++ie;
      while (je < b.size() && digit(b[je])) ++je;
      std::string_view da = a.substr(i, ie - i);
      std::string_view db = b.substr(j, je - j);
      while (da.size() > 1 && da.front() == '0') da.remove_prefix(1);
      while (db.size() > 1 && db.front() == '0') db.remove_prefix(1);
      if (da.size() != db.size()) return da.size() < db.size();
      if (da != db) return da < db;
      i = ie;
      j = je;
    } else {
      if (a[i] != b[j]) return a[i] < b[j];
      ++i;
      ++j;
    }
  }
  if (a.size() - i != b.size() - j) return a.size() - i < b.size() - j;
  return a < b;
}

inline std::vector<std::string> sort_time_ids(std::vector<std::string> ids) {
  bool all_numeric = true;
  for (const std::string& s : ids) {
    if (!parse_double(s)) {
      all_numeric = false;
      break;
    }
  }
  if (all_numeric) {
    std::stable_sort(ids.begin(), ids.end(), [](const std::string& a, const std::string& b) {
      const double x = *parse_double(a);
      const double y = *parse_double(b);
      return x != y ? x < y : a < b;
    });
  } else {
    std::stable_sort(ids.begin(), ids.end(),
                     [](const std::string& a, const std::string& b) { return natural_less(a, b); });
  }
  return ids;
}

inline std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace detail

/// Parses delimiter-separated long-format text with a header naming the
/// columns unit, time, value and optionally treated (any order, case
/// insensitive). Cells absent from the file, or with an empty / NA value,
/// are unobserved. Error indices are 1-based line numbers.
inline LoadedPanel parse_panel(std::string_view text, const LoadOptions& opts = {}) {
  struct Cell {
    std::size_t unit;
    std::string time;
    std::optional<double> value;
    std::optional<bool> treated;
    std::ptrdiff_t line;
  };

  std::vector<std::string_view> lines;
  {
    std::size_t start = 0;
    while (start <= text.size()) {
      std::size_t pos = text.find('\n', start);
      std::string_view line = text.substr(start, pos == std::string_view::npos ? pos : pos - start);
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      lines.push_back(line);
      if (pos == std::string_view::npos) break;
      start = pos + 1;
    }
  }
  std::size_t header_line = 0;
  while (header_line < lines.size() && detail::trim(lines[header_line]).empty()) ++header_line;
  detail::require(header_line < lines.size(), ErrorCode::ParseError, "missing header row", 1);
  if (header_line == 0 && lines[0].substr(0, 3) == "\xEF\xBB\xBF") lines[0].remove_prefix(3);

  const auto header = detail::split_fields(lines[header_line], opts.delimiter);
  std::map<std::string, std::size_t> col;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string name = detail::lower(header[c]);
    detail::require(col.emplace(name, c).second, ErrorCode::ParseError,
                    "repeated header column '" + name + "'",
                    static_cast<std::ptrdiff_t>(header_line + 1));
  }
  for (const char* required : {"unit", "time", "value"}) {
    detail::require(col.count(required) == 1, ErrorCode::ParseError,
                    std::string("header lacks a '") + required + "' column",
                    static_cast<std::ptrdiff_t>(header_line + 1));
  }
  const bool with_treat = col.count("treated") == 1;

  std::vector<std::string> unit_ids;
  std::unordered_map<std::string, std::size_t> unit_index;
  std::vector<Cell> cells;
  for (std::size_t ln = header_line + 1; ln < lines.size(); ++ln) {
    const std::ptrdiff_t line_no = static_cast<std::ptrdiff_t>(ln + 1);
    if (detail::trim(lines[ln]).empty()) continue;
    const auto fields = detail::split_fields(lines[ln], opts.delimiter);
    detail::require(fields.size() == header.size(), ErrorCode::ParseError,
                    "line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                        " fields, found " + std::to_string(fields.size()),
                    line_no);
    const std::string_view unit = fields[col["unit"]];
    const std::string_view time = fields[col["time"]];
    detail::require(!unit.empty() && !time.empty(), ErrorCode::ParseError,
                    "line " + std::to_string(line_no) + ": empty unit or time id", line_no);
    Cell cell;
    const std::string_view raw_value = fields[col["value"]];
    if (!detail::is_absent(raw_value)) {
      cell.value = detail::parse_double(raw_value);
      detail::require(cell.value.has_value(), ErrorCode::ParseError,
                      "line " + std::to_string(line_no) + ": cannot parse value '" +
                          std::string(raw_value) + "'",
                      line_no);
    }
    if (with_treat) {
      const std::string_view raw_treat = fields[col["treated"]];
      if (!detail::is_absent(raw_treat)) {
        detail::require(raw_treat == "0" || raw_treat == "1", ErrorCode::ParseError,
                        "line " + std::to_string(line_no) + ": treated must be 0 or 1", line_no);
        cell.treated = raw_treat == "1";
      }
      detail::require(cell.value.has_value() || !cell.treated.has_value(), ErrorCode::ParseError,
                      "line " + std::to_string(line_no) + ": treatment flag without an outcome",
                      line_no);
      detail::require(!cell.value.has_value() || cell.treated.has_value(),
                      ErrorCode::MixedTreatmentSchema,
                      "line " + std::to_string(line_no) + ": outcome without a treatment flag",
                      line_no);
    }
    auto [it, inserted] = unit_index.emplace(std::string(unit), unit_ids.size());
    if (inserted) unit_ids.emplace_back(unit);
    cell.unit = it->second;
    cell.time = std::string(time);
    cell.line = line_no;
    cells.push_back(std::move(cell));
  }
  detail::require(!cells.empty(), ErrorCode::ParseError, "no data rows",
                  static_cast<std::ptrdiff_t>(header_line + 1));

  std::vector<std::string> time_ids;
  {
    std::unordered_map<std::string, bool> seen;
    for (const Cell& c : cells) {
      if (seen.emplace(c.time, true).second) time_ids.push_back(c.time);
    }
  }
  time_ids = detail::sort_time_ids(std::move(time_ids));
  std::unordered_map<std::string, Index> time_index;
  for (std::size_t t = 0; t < time_ids.size(); ++t) time_index.emplace(time_ids[t], static_cast<Index>(t));

  const Index n = static_cast<Index>(unit_ids.size());
  const Index t = static_cast<Index>(time_ids.size());
  Matrix values = Matrix::Zero(n, t);
  Matrix mask = Matrix::Zero(n, t);
  Matrix treat = Matrix::Zero(n, t);
  Matrix seen = Matrix::Zero(n, t);
  for (const Cell& c : cells) {
    const Index i = static_cast<Index>(c.unit);
    const Index s = time_index.at(c.time);
    detail::require(seen(i, s) == 0.0, ErrorCode::DuplicateCell,
                    "line " + std::to_string(c.line) + ": duplicate cell (" + unit_ids[c.unit] + ", " +
                        c.time + ")",
                    c.line);
    seen(i, s) = 1.0;
    if (c.value) {
      values(i, s) = *c.value;
      mask(i, s) = 1.0;
      treat(i, s) = c.treated.value_or(false) ? 1.0 : 0.0;
    }
  }

  if (!with_treat) {
    return LoadedPanel{std::move(unit_ids), std::move(time_ids),
                       ObservedPanel(std::move(values), std::move(mask))};
  }
  for (Index i = 0; i < n; ++i) {
    detail::require(mask.row(i).sum() > 0.0, ErrorCode::EmptyRow,
                    "unit '" + unit_ids[static_cast<std::size_t>(i)] + "' has no observations", i);
  }
  for (Index s = 0; s < t; ++s) {
    detail::require(mask.col(s).sum() > 0.0, ErrorCode::EmptyColumn,
                    "period '" + time_ids[static_cast<std::size_t>(s)] + "' has no observations", s);
  }
  for (Index s = 0; s < t; ++s) {
    for (Index i = 0; i < n; ++i) {
      detail::require(std::isfinite(values(i, s)), ErrorCode::NonFinite,
                      "non-finite outcome for unit '" + unit_ids[static_cast<std::size_t>(i)] + "'", i);
    }
  }
  return LoadedPanel{std::move(unit_ids), std::move(time_ids),
                     TreatmentPanel(std::move(values), std::move(treat), std::move(mask))};
}

inline LoadedPanel load_panel(const std::filesystem::path& path, const LoadOptions& opts = {}) {
  return parse_panel(read_file(path), opts);
}

namespace detail {

inline void require_labels(const std::vector<std::string>& units, const std::vector<std::string>& times,
                           Index n, Index t) {
  require(static_cast<Index>(units.size()) == n && static_cast<Index>(times.size()) == t,
          ErrorCode::ShapeMismatch, "label count does not match panel dimensions");
}

}  // namespace detail

/// Long-format text for the observed cells, in unit-major order.
inline std::string format_panel(const LoadedPanel& lp, char delim = ',') {
  std::string out;
  const auto& units = lp.unit_ids;
  const auto& times = lp.time_ids;
  if (const auto* p = std::get_if<ObservedPanel>(&lp.panel)) {
    detail::require_labels(units, times, p->n_units(), p->n_periods());
    out += std::string("unit") + delim + "time" + delim + "value\n";
    for (Index i = 0; i < p->n_units(); ++i) {
      for (Index s = 0; s < p->n_periods(); ++s) {
        if (!p->observed(i, s)) continue;
        out += units[static_cast<std::size_t>(i)] + delim + times[static_cast<std::size_t>(s)] + delim +
               format_double(p->values()(i, s)) + '\n';
      }
    }
  } else {
    const auto& tp = std::get<TreatmentPanel>(lp.panel);
    detail::require_labels(units, times, tp.n_units(), tp.n_periods());
    out += std::string("unit") + delim + "time" + delim + "value" + delim + "treated\n";
    for (Index i = 0; i < tp.n_units(); ++i) {
      for (Index s = 0; s < tp.n_periods(); ++s) {
        if (tp.available()(i, s) == 0.0) continue;
        out += units[static_cast<std::size_t>(i)] + delim + times[static_cast<std::size_t>(s)] + delim +
               format_double(tp.outcomes()(i, s)) + delim + (tp.treat()(i, s) == 1.0 ? "1" : "0") + '\n';
      }
    }
  }
  return out;
}

inline void save_panel(const std::filesystem::path& path, const LoadedPanel& lp, char delim = ',') {
  write_file_atomic(path, format_panel(lp, delim));
}

/// Every cell of `m_hat` in long format; `imputed` is 1 where `observed` is 0.
inline std::string format_completed(const Matrix& m_hat, const Matrix& observed,
                                    const std::vector<std::string>& units,
                                    const std::vector<std::string>& times, char delim = ',') {
  detail::require_labels(units, times, m_hat.rows(), m_hat.cols());
  detail::require(observed.rows() == m_hat.rows() && observed.cols() == m_hat.cols(),
                  ErrorCode::ShapeMismatch, "mask and completed matrix shapes differ");
  std::string out = std::string("unit") + delim + "time" + delim + "value" + delim + "imputed\n";
  for (Index i = 0; i < m_hat.rows(); ++i) {
    for (Index s = 0; s < m_hat.cols(); ++s) {
      out += units[static_cast<std::size_t>(i)] + delim + times[static_cast<std::size_t>(s)] + delim +
             format_double(m_hat(i, s)) + delim + (observed(i, s) == 0.0 ? "1" : "0") + '\n';
    }
  }
  return out;
}

namespace detail {

/// "1..10,25" (1-based, inclusive) → 0-based indices; "@all" → 0..size-1.
inline std::vector<Index> parse_index_list(std::string_view s, Index size, const std::string& axis) {
  std::vector<Index> out;
  if (s == "@all") {
    for (Index j = 0; j < size; ++j) out.push_back(j);
    return out;
  }
  auto parse_int = [&](std::string_view v) {
    long long x = 0;
    v = trim(v);
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    require(ec == std::errc() && ptr == v.data() + v.size() && !v.empty(), ErrorCode::InvalidArgument,
            "bad " + axis + " index '" + std::string(v) + "'");
    require(x >= 1 && x <= static_cast<long long>(size), ErrorCode::OutOfRange,
            axis + " index " + std::to_string(x) + " outside 1.." + std::to_string(size));
    return static_cast<Index>(x - 1);
  };
  for (std::string_view part : split_fields(s, ',')) {
    const std::size_t dots = part.find("..");
    if (dots == std::string_view::npos) {
      out.push_back(parse_int(part));
    } else {
      const Index lo = parse_int(part.substr(0, dots));
      const Index hi = parse_int(part.substr(dots + 2));
      require(lo <= hi, ErrorCode::InvalidArgument, "empty " + axis + " range '" + std::string(part) + "'");
      for (Index j = lo; j <= hi; ++j) out.push_back(j);
    }
  }
  return out;
}

}  // namespace detail

/// Group syntax: "units=1..10,25 periods=3..8", "@all", or either axis
/// alone (the other then spans everything). Tokens are separated by
/// whitespace or ';'. Indices are 1-based.
inline GroupSpec parse_group(std::string_view text, Index n, Index t) {
  text = detail::trim(text);
  detail::require(!text.empty(), ErrorCode::InvalidArgument, "empty group specification");
  if (text == "@all") return GroupSpec::all(n, t);
  std::optional<std::vector<Index>> units;
  std::optional<std::vector<Index>> periods;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto separator = [](char c) { return c == ';' || std::isspace(static_cast<unsigned char>(c)); };
    while (pos < text.size() && separator(text[pos])) ++pos;
    if (pos >= text.size()) break;
    std::size_t end = pos;
    while (end < text.size() && !separator(text[end])) ++end;
    const std::string_view token = text.substr(pos, end - pos);
    pos = end;
    const std::size_t eq = token.find('=');
    detail::require(eq != std::string_view::npos, ErrorCode::InvalidArgument,
                    "group token '" + std::string(token) + "' lacks '='");
    const std::string key = detail::lower(token.substr(0, eq));
    const std::string_view list = token.substr(eq + 1);
    if (key == "units" || key == "unit") {
      detail::require(!units, ErrorCode::InvalidArgument, "units given twice");
      units = detail::parse_index_list(list, n, "unit");
    } else if (key == "periods" || key == "period") {
      detail::require(!periods, ErrorCode::InvalidArgument, "periods given twice");
      periods = detail::parse_index_list(list, t, "period");
    } else {
      throw Error(ErrorCode::InvalidArgument, "unknown group key '" + key + "'");
    }
  }
  if (!units) units = detail::parse_index_list("@all", n, "unit");
  if (!periods) periods = detail::parse_index_list("@all", t, "period");
  return GroupSpec(std::move(*units), std::move(*periods));
}

}  // namespace lrinfer
