#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace itac {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define ITAC_DEFINE_ERROR(Name)              \
  class Name : public Error {                \
   public:                                   \
    using Error::Error;                      \
  };

ITAC_DEFINE_ERROR(FetchError)
ITAC_DEFINE_ERROR(ThrottledError)
ITAC_DEFINE_ERROR(InvalidSpanError)
ITAC_DEFINE_ERROR(EmptyPanelError)
ITAC_DEFINE_ERROR(DegenerateSeriesError)
ITAC_DEFINE_ERROR(LengthError)
ITAC_DEFINE_ERROR(InsufficientOverlapError)
ITAC_DEFINE_ERROR(RankError)
ITAC_DEFINE_ERROR(NumericError)
ITAC_DEFINE_ERROR(ShapeError)
ITAC_DEFINE_ERROR(DegenerateTestError)
ITAC_DEFINE_ERROR(PlanError)
ITAC_DEFINE_ERROR(SearchFailedError)
ITAC_DEFINE_ERROR(ConfigError)

#undef ITAC_DEFINE_ERROR

/// Error tied to a 1-based data row of a CSV input (header excluded).
class ParseError : public Error {
 public:
  ParseError(std::size_t row, const std::string& what)
      : Error("parse error at row " + std::to_string(row) + ": " + what), row_(row) {}
  std::size_t row() const { return row_; }

 private:
  std::size_t row_;
};

class RangeError : public Error {
 public:
  RangeError(std::size_t row, double value)
      : Error("value " + std::to_string(value) + " outside [0,100] at row " + std::to_string(row)),
        row_(row) {}
  std::size_t row() const { return row_; }

 private:
  std::size_t row_;
};

class DuplicateError : public Error {
 public:
  explicit DuplicateError(std::string month)
      : Error("duplicate or out-of-order month " + month), month_(std::move(month)) {}
  const std::string& month() const { return month_; }

 private:
  std::string month_;
};

class DomainError : public Error {
 public:
  explicit DomainError(std::size_t index)
      : Error("nonpositive argument to log at index " + std::to_string(index)), index_(index) {}
  std::size_t index() const { return index_; }

 private:
  std::size_t index_;
};

class EmptyColumnError : public Error {
 public:
  explicit EmptyColumnError(std::string term)
      : Error("column '" + term + "' has no observations"), term_(std::move(term)) {}
  const std::string& term() const { return term_; }

 private:
  std::string term_;
};

class DivergenceError : public Error {
 public:
  explicit DivergenceError(int epoch)
      : Error("training diverged (non-finite loss) at epoch " + std::to_string(epoch)), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

class SingularError : public Error {
 public:
  explicit SingularError(std::vector<std::string> columns)
      : Error("design matrix is rank deficient; collinear columns: " + join(columns)),
        columns_(std::move(columns)) {}
  const std::vector<std::string>& columns() const { return columns_; }

 private:
  static std::string join(const std::vector<std::string>& c) {
    std::string out;
    for (std::size_t i = 0; i < c.size(); ++i) out += (i ? ", " : "") + c[i];
    return out;
  }
  std::vector<std::string> columns_;
};

// ---------------------------------------------------------------------------
// Calendar
// ---------------------------------------------------------------------------

/// A calendar month. Ordered and convertible to a dense ordinal.
struct YearMonth {
  int year = 1970;
  int month = 1;  // 1..12

  constexpr int ordinal() const { return year * 12 + (month - 1); }
  static constexpr YearMonth from_ordinal(int o) {
    int y = o >= 0 ? o / 12 : -((-o + 11) / 12);
    return {y, o - y * 12 + 1};
  }
  constexpr YearMonth plus(int months) const { return from_ordinal(ordinal() + months); }

  friend constexpr bool operator==(const YearMonth&, const YearMonth&) = default;
  friend constexpr auto operator<=>(const YearMonth& a, const YearMonth& b) {
    return a.ordinal() <=> b.ordinal();
  }

  /// Accepts `YYYY-MM` and the Stata-style `YYYYmM`/`YYYYmMM`.
  static YearMonth parse(std::string_view s) {
    auto fail = [&] { throw Error("malformed year-month '" + std::string(s) + "'"); };
    if (s.size() < 6 || s.size() > 7) fail();
    for (int i = 0; i < 4; ++i)
      if (s[i] < '0' || s[i] > '9') fail();
    int year = std::stoi(std::string(s.substr(0, 4)));
    std::string_view rest = s.substr(5);
    if (s[4] == '-') {
      if (rest.size() != 2) fail();
    } else if (s[4] != 'm') {
      fail();
    }
    if (rest.empty()) fail();
    for (char c : rest)
      if (c < '0' || c > '9') fail();
    int month = std::stoi(std::string(rest));
    if (month < 1 || month > 12) fail();
    return {year, month};
  }

  std::string str() const {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04d-%02d", year, month);
    return buf;
  }
};

/// Inclusive range of months. Empty when last < first.
struct MonthRange {
  YearMonth first;
  YearMonth last;

  int size() const { return std::max(0, last.ordinal() - first.ordinal() + 1); }
  bool empty() const { return size() == 0; }
  bool contains(YearMonth m) const { return first <= m && m <= last; }
  bool contains(const MonthRange& r) const { return r.empty() || (contains(r.first) && contains(r.last)); }
  /// Zero-based row of `m` relative to `first`.
  int offset(YearMonth m) const { return m.ordinal() - first.ordinal(); }

  static MonthRange intersect(const MonthRange& a, const MonthRange& b) {
    return {std::max(a.first, b.first), std::min(a.last, b.last)};
  }
  friend bool operator==(const MonthRange&, const MonthRange&) = default;

  std::string str() const { return first.str() + ".." + last.str(); }
};

enum class Frequency { monthly, quarterly };

/// Dated fixed-frequency sequence. `start` is the first month of the first period.
struct TimeSeries {
  YearMonth start;
  std::vector<double> values;
  Frequency frequency = Frequency::monthly;

  std::size_t size() const { return values.size(); }
  bool empty() const { return values.empty(); }
  int step() const { return frequency == Frequency::monthly ? 1 : 3; }
  YearMonth period(std::size_t i) const { return start.plus(static_cast<int>(i) * step()); }
  /// Month span; only meaningful for monthly series.
  MonthRange span() const { return {start, start.plus(static_cast<int>(values.size()) - 1)}; }

  std::string label(std::size_t i) const {
    YearMonth p = period(i);
    if (frequency == Frequency::monthly) return p.str();
    return std::to_string(p.year) + "-Q" + std::to_string((p.month - 1) / 3 + 1);
  }

  /// Values over `r`, which must lie inside the series span.
  std::vector<double> slice(const MonthRange& r) const {
    if (!span().contains(r)) throw InvalidSpanError("range " + r.str() + " outside series span " + span().str());
    auto b = values.begin() + span().offset(r.first);
    return {b, b + r.size()};
  }
  TimeSeries sub(const MonthRange& r) const { return {r.first, slice(r), frequency}; }
};

inline Vector to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}
inline std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

// ---------------------------------------------------------------------------
// Small text helpers shared by the CSV readers/writers
// ---------------------------------------------------------------------------

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    std::size_t next = s.find(sep, pos);
    if (next == std::string_view::npos) {
      out.push_back(s.substr(pos));
      return out;
    }
    out.push_back(s.substr(pos, next - pos));
    pos = next + 1;
  }
}

inline std::vector<std::string_view> lines(std::string_view text) {
  std::vector<std::string_view> out;
  for (auto l : split(text, '\n')) {
    l = trim(l);
    if (!l.empty()) out.push_back(l);
  }
  return out;
}

/// Strict decimal parse; false on trailing junk or non-finite values.
inline bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (s.empty()) return false;
  std::string tmp(s);
  char* end = nullptr;
  out = std::strtod(tmp.c_str(), &end);
  return end == tmp.c_str() + tmp.size() && std::isfinite(out);
}

/// Shortest representation that parses back to the same double.
inline std::string format_double(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, res.ptr};
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace detail

}  // namespace itac
