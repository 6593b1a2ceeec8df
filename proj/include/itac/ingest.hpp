#pragma once

// Raw search-volume series, the shipped term vocabulary, and panel assembly.
// HTTP acquisition lives in itac/fetch.hpp so that users who only read CSV
// fixtures do not pay for the HTTP client.

#include <array>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "itac/core.hpp"

namespace itac {

inline constexpr std::array<std::string_view, 10> kCategories = {
    "Food", "Tourism", "Services", "Home", "Personal care",
    "Transport", "Technology", "Recreation", "Education", "Finance"};

inline bool is_known_category(std::string_view c) {
  return std::find(kCategories.begin(), kCategories.end(), c) != kCategories.end();
}

struct Observation {
  YearMonth month;
  double value = 0.0;
};

struct RawSeries {
  std::string term;
  std::string category;
  std::vector<Observation> observations;

  std::size_t size() const { return observations.size(); }
  MonthRange span() const {
    if (observations.empty()) return {{2000, 2}, {2000, 1}};
    return {observations.front().month, observations.back().month};
  }
  double max() const {
    double m = 0.0;
    for (const auto& o : observations) m = std::max(m, o.value);
    return m;
  }
};

/// Parses `date,value` CSV with `YYYY-MM` dates and values in [0,100].
/// Rows are numbered from 1 after the header.
inline RawSeries parse_raw_series(std::string_view csv, std::string term = {}, std::string category = {}) {
  auto rows = detail::lines(csv);
  if (rows.empty() || detail::trim(rows.front()) != "date,value")
    throw ParseError(0, "expected header 'date,value'");
  RawSeries out{std::move(term), std::move(category), {}};
  out.observations.reserve(rows.size() - 1);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    auto fields = detail::split(rows[r], ',');
    if (fields.size() != 2) throw ParseError(r, "expected 2 fields");
    YearMonth ym;
    auto date = detail::trim(fields[0]);
    if (date.size() != 7 || date[4] != '-') throw ParseError(r, "malformed date '" + std::string(date) + "'");
    try {
      ym = YearMonth::parse(date);
    } catch (const Error&) {
      throw ParseError(r, "malformed date '" + std::string(date) + "'");
    }
    double v = 0.0;
    if (!detail::parse_double(fields[1], v)) throw ParseError(r, "malformed value");
    if (v < 0.0 || v > 100.0) throw RangeError(r, v);
    out.observations.push_back({ym, v});
  }
  std::stable_sort(out.observations.begin(), out.observations.end(),
                   [](const Observation& a, const Observation& b) { return a.month < b.month; });
  for (std::size_t i = 1; i < out.observations.size(); ++i)
    if (out.observations[i].month == out.observations[i - 1].month)
      throw DuplicateError(out.observations[i].month.str());
  return out;
}

inline std::string serialize_raw_series(const RawSeries& s) {
  std::string out = "date,value\n";
  for (const auto& o : s.observations) out += o.month.str() + "," + detail::format_double(o.value) + "\n";
  return out;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path + "'");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

enum class Variant { itacons, itacome };

inline std::string_view to_string(Variant v) { return v == Variant::itacons ? "itacons" : "itacome"; }
inline Variant parse_variant(std::string_view s) {
  if (s == "itacons" || s == "ITACons") return Variant::itacons;
  if (s == "itacome" || s == "ITACome") return Variant::itacome;
  throw ConfigError("unknown variant '" + std::string(s) + "' (expected itacons or itacome)");
}

struct VocabularyEntry {
  std::string term;
  std::string category;
  bool itacons = false;
  bool itacome = false;

  bool in(Variant v) const { return v == Variant::itacons ? itacons : itacome; }
};

struct Vocabulary {
  std::vector<VocabularyEntry> entries;

  std::vector<std::string> terms(Variant v) const {
    std::vector<std::string> out;
    for (const auto& e : entries)
      if (e.in(v)) out.push_back(e.term);
    return out;
  }

  const VocabularyEntry* find(std::string_view term) const {
    for (const auto& e : entries)
      if (e.term == term) return &e;
    return nullptr;
  }

  /// FNV-1a digest of the ordered term list of a variant, as 16 hex digits.
  std::string hash(Variant v) const {
    std::string joined;
    for (const auto& t : terms(v)) joined += t + "\n";
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(detail::fnv1a(joined)));
    return buf;
  }
};

/// The ITAC term list (32 terms; 26 flagged for consumption, 23 for commerce and services).
inline Vocabulary builtin_vocabulary() {
  struct Row {
    const char* term;
    const char* category;
    bool cons;
    bool come;
  };
  static constexpr Row rows[] = {
      {"restaurants", "Food", true, true},
      {"Pizza Hut", "Food", false, true},
      {"car rentals", "Transport", true, true},
      {"Indriver", "Transport", true, true},
      {"GLP", "Transport", true, false},
      {"cars", "Transport", false, true},
      {"Toyota", "Transport", false, true},
      {"Hyundai", "Transport", false, true},
      {"Mazda", "Transport", false, true},
      {"bus terminal", "Transport", true, true},
      {"Avianca", "Tourism", true, true},
      {"SKY", "Tourism", true, true},
      {"hotels", "Tourism", true, true},
      {"Marriot", "Tourism", true, true},
      {"Jorge Chávez", "Tourism", true, false},
      {"tour packages", "Tourism", true, true},
      {"Despegar.com", "Tourism", true, true},
      {"travel agencies", "Tourism", true, false},
      {"Sheraton", "Tourism", true, false},
      {"Westin", "Tourism", true, false},
      {"Cusco", "Tourism", false, true},
      {"cines", "Recreation", true, true},
      {"Cinemark", "Recreation", true, true},
      {"theater", "Recreation", true, true},
      {"nightclubs", "Recreation", true, true},
      {"Cineplanet", "Recreation", true, false},
      {"Smart Fit", "Personal care", true, true},
      {"Soho Color", "Personal care", true, true},
      {"Spa", "Personal care", true, true},
      {"gym", "Personal care", true, false},
      {"Montalvo", "Personal care", true, false},
      {"gimnasio", "Personal care", true, false},
  };
  Vocabulary v;
  for (const auto& r : rows) v.entries.push_back({r.term, r.category, r.cons, r.come});
  return v;
}

inline Vocabulary parse_vocabulary(std::string_view csv) {
  auto rows = detail::lines(csv);
  if (rows.empty() || rows.front() != "term,category,itacons,itacome")
    throw ParseError(0, "expected header 'term,category,itacons,itacome'");
  Vocabulary v;
  auto flag = [](std::string_view f, std::size_t r) {
    f = detail::trim(f);
    if (f == "1") return true;
    if (f == "0") return false;
    throw ParseError(r, "flag must be 1 or 0");
  };
  for (std::size_t r = 1; r < rows.size(); ++r) {
    auto f = detail::split(rows[r], ',');
    if (f.size() != 4) throw ParseError(r, "expected 4 fields");
    std::string category(detail::trim(f[1]));
    if (!is_known_category(category)) throw ParseError(r, "unknown category '" + category + "'");
    v.entries.push_back({std::string(detail::trim(f[0])), category, flag(f[2], r), flag(f[3], r)});
  }
  return v;
}

inline std::string serialize_vocabulary(const Vocabulary& v) {
  std::string out = "term,category,itacons,itacome\n";
  for (const auto& e : v.entries)
    out += e.term + "," + e.category + "," + (e.itacons ? "1" : "0") + "," + (e.itacome ? "1" : "0") + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Panel
// ---------------------------------------------------------------------------

using Mask = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Months × terms matrix of search volumes. Missing cells hold NaN and are
/// flagged in `missing`.
struct TermPanel {
  std::vector<std::string> terms;
  std::vector<std::string> categories;
  MonthRange span;
  Matrix matrix;
  Mask missing;

  Eigen::Index rows() const { return matrix.rows(); }
  Eigen::Index cols() const { return matrix.cols(); }

  std::optional<Eigen::Index> column(std::string_view term) const {
    for (std::size_t j = 0; j < terms.size(); ++j)
      if (terms[j] == term) return static_cast<Eigen::Index>(j);
    return std::nullopt;
  }

  TimeSeries series(Eigen::Index j) const {
    return {span.first, to_std(matrix.col(j)), Frequency::monthly};
  }

  /// Columns in `keep` order.
  TermPanel select(const std::vector<Eigen::Index>& keep) const {
    TermPanel out{{}, {}, span, Matrix(rows(), static_cast<Eigen::Index>(keep.size())),
                  Mask(rows(), static_cast<Eigen::Index>(keep.size()))};
    for (std::size_t k = 0; k < keep.size(); ++k) {
      out.terms.push_back(terms[keep[k]]);
      out.categories.push_back(categories[keep[k]]);
      out.matrix.col(static_cast<Eigen::Index>(k)) = matrix.col(keep[k]);
      out.missing.col(static_cast<Eigen::Index>(k)) = missing.col(keep[k]);
    }
    return out;
  }

  /// Keeps the variant's vocabulary terms that are present, in vocabulary order.
  TermPanel filter(const Vocabulary& vocab, Variant v) const {
    std::vector<Eigen::Index> keep;
    for (const auto& t : vocab.terms(v))
      if (auto c = column(t)) keep.push_back(*c);
    return select(keep);
  }

  TermPanel filter_category(std::string_view category) const {
    std::vector<Eigen::Index> keep;
    for (std::size_t j = 0; j < categories.size(); ++j)
      if (categories[j] == category) keep.push_back(static_cast<Eigen::Index>(j));
    return select(keep);
  }
};

/// Aligns series onto `span`; absent months are flagged missing, values outside
/// the span are ignored. Column order follows input order.
inline TermPanel assemble_panel(const std::vector<RawSeries>& series, const MonthRange& span) {
  if (series.empty()) throw EmptyPanelError("cannot assemble a panel from zero series");
  if (span.empty()) throw InvalidSpanError("empty panel span " + span.str());
  const auto T = static_cast<Eigen::Index>(span.size());
  const auto N = static_cast<Eigen::Index>(series.size());
  TermPanel p{{}, {}, span, Matrix::Constant(T, N, std::nan("")), Mask::Constant(T, N, true)};
  for (Eigen::Index j = 0; j < N; ++j) {
    const auto& s = series[static_cast<std::size_t>(j)];
    p.terms.push_back(s.term);
    p.categories.push_back(s.category);
    for (const auto& o : s.observations) {
      if (!span.contains(o.month)) continue;
      const auto i = span.offset(o.month);
      p.matrix(i, j) = o.value;
      p.missing(i, j) = false;
    }
  }
  return p;
}

/// `date,<term1>,<term2>,...`; missing cells are empty.
inline std::string serialize_panel(const TermPanel& p) {
  std::string out = "date";
  for (const auto& t : p.terms) {
    if (t.find(',') != std::string::npos) throw Error("term '" + t + "' contains a comma");
    out += "," + t;
  }
  out += "\n";
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    out += p.span.first.plus(static_cast<int>(i)).str();
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      out += ",";
      if (!p.missing(i, j)) out += detail::format_double(p.matrix(i, j));
    }
    out += "\n";
  }
  return out;
}

/// Reads a panel CSV. Categories come from `vocab` when the term is listed there.
inline TermPanel parse_panel(std::string_view csv, const Vocabulary* vocab = nullptr) {
  auto rows = detail::lines(csv);
  if (rows.size() < 2) throw ParseError(0, "panel needs a header and at least one row");
  auto header = detail::split(rows.front(), ',');
  if (header.size() < 2 || detail::trim(header[0]) != "date") throw ParseError(0, "expected header 'date,<terms...>'");
  std::vector<RawSeries> series;
  for (std::size_t j = 1; j < header.size(); ++j) {
    std::string term(detail::trim(header[j]));
    std::string cat;
    if (vocab)
      if (const auto* e = vocab->find(term)) cat = e->category;
    series.push_back({term, cat, {}});
  }
  std::optional<YearMonth> first, prev;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    auto f = detail::split(rows[r], ',');
    if (f.size() != header.size()) throw ParseError(r, "field count differs from header");
    YearMonth ym;
    try {
      ym = YearMonth::parse(detail::trim(f[0]));
    } catch (const Error&) {
      throw ParseError(r, "malformed date");
    }
    if (prev && ym <= *prev) throw DuplicateError(ym.str());
    if (!first) first = ym;
    prev = ym;
    for (std::size_t j = 1; j < f.size(); ++j) {
      auto cell = detail::trim(f[j]);
      if (cell.empty()) continue;
      double v = 0.0;
      if (!detail::parse_double(cell, v)) throw ParseError(r, "malformed value");
      if (v < 0.0 || v > 100.0) throw RangeError(r, v);
      series[j - 1].observations.push_back({ym, v});
    }
  }
  return assemble_panel(series, {*first, *prev});
}

// ---------------------------------------------------------------------------
// Generic `date,value` series (macro targets; no [0,100] restriction)
// ---------------------------------------------------------------------------

/// Reads a contiguous monthly `date,value` series.
inline TimeSeries parse_time_series(std::string_view csv) {
  auto rows = detail::lines(csv);
  if (rows.empty() || rows.front() != "date,value") throw ParseError(0, "expected header 'date,value'");
  TimeSeries s;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    auto f = detail::split(rows[r], ',');
    if (f.size() != 2) throw ParseError(r, "expected 2 fields");
    YearMonth ym;
    try {
      ym = YearMonth::parse(detail::trim(f[0]));
    } catch (const Error&) {
      throw ParseError(r, "malformed date");
    }
    double v = 0.0;
    if (!detail::parse_double(f[1], v)) throw ParseError(r, "malformed value");
    if (r == 1) {
      s.start = ym;
    } else if (ym != s.start.plus(static_cast<int>(s.values.size()))) {
      throw ParseError(r, "months must be contiguous and increasing");
    }
    s.values.push_back(v);
  }
  if (s.values.empty()) throw LengthError("series has no rows");
  return s;
}

inline std::string serialize_time_series(const TimeSeries& s) {
  std::string out = "date,value\n";
  for (std::size_t i = 0; i < s.size(); ++i) out += s.label(i) + "," + detail::format_double(s.values[i]) + "\n";
  return out;
}

}  // namespace itac
