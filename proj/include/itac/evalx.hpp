#pragma once

// Forecast accuracy: loss metrics, Diebold-Mariano (with the Harvey small
// sample correction), the Giacomini-White conditional test, dated fold plans
// and a cross-validated hyperparameter grid search.

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include <atomic>
#include <concepts>
#include <cstdint>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "itac/core.hpp"
#include "itac/random.hpp"
#include "itac/transform.hpp"

namespace itac {

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

inline double mse(const Vector& actual, const Vector& predicted) {
  if (actual.size() != predicted.size())
    throw ShapeError("length mismatch: " + std::to_string(actual.size()) + " vs " + std::to_string(predicted.size()));
  if (actual.size() == 0) throw ShapeError("mse of empty vectors");
  return (actual - predicted).squaredNorm() / static_cast<double>(actual.size());
}

inline double rmse(const Vector& actual, const Vector& predicted) { return std::sqrt(mse(actual, predicted)); }

struct LossSeries {
  std::vector<double> losses;
  std::optional<MonthRange> span;

  std::size_t size() const { return losses.size(); }
};

/// Per-period squared errors.
inline LossSeries squared_errors(const Vector& actual, const Vector& predicted,
                                 std::optional<MonthRange> span = std::nullopt) {
  if (actual.size() != predicted.size()) throw ShapeError("length mismatch");
  LossSeries out{{}, span};
  for (Eigen::Index i = 0; i < actual.size(); ++i) out.losses.push_back((actual(i) - predicted(i)) * (actual(i) - predicted(i)));
  return out;
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

enum class Correction { none, harvey };
/// `greater`: loss-a exceeds loss-b on average (model b more accurate).
enum class Alternative { two_sided, greater, less };

struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;
  std::size_t T = 0;
  Correction correction = Correction::none;
  double degrees_of_freedom = 0.0;  // t or chi-square reference; 0 for the normal
  double mean_differential = 0.0;
};

/// Newey-West long-run variance of `d` with Bartlett weights up to `lags`.
inline double hac_variance(const std::vector<double>& d, int lags) {
  const std::size_t T = d.size();
  double mean = 0.0;
  for (double v : d) mean += v;
  mean /= static_cast<double>(T);
  auto gamma = [&](std::size_t k) {
    double s = 0.0;
    for (std::size_t t = k; t < T; ++t) s += (d[t] - mean) * (d[t - k] - mean);
    return s / static_cast<double>(T);
  };
  double var = gamma(0);
  for (int k = 1; k <= lags && static_cast<std::size_t>(k) < T; ++k)
    var += 2.0 * (1.0 - static_cast<double>(k) / static_cast<double>(lags + 1)) * gamma(static_cast<std::size_t>(k));
  return var;
}

namespace detail {

inline std::vector<double> differential(const LossSeries& a, const LossSeries& b) {
  if (a.size() != b.size()) throw ShapeError("loss series lengths differ");
  if (a.span && b.span && !(*a.span == *b.span)) throw InvalidSpanError("loss series spans differ");
  std::vector<double> d(a.size());
  for (std::size_t t = 0; t < d.size(); ++t) d[t] = a.losses[t] - b.losses[t];
  return d;
}

inline bool all_zero(const std::vector<double>& d) {
  return std::all_of(d.begin(), d.end(), [](double v) { return v == 0.0; });
}

template <class Dist>
double p_from(const Dist& dist, double stat, Alternative alt) {
  using boost::math::cdf;
  using boost::math::complement;
  switch (alt) {
    case Alternative::greater: return cdf(complement(dist, stat));
    case Alternative::less: return cdf(dist, stat);
    default: return std::min(1.0, 2.0 * cdf(complement(dist, std::abs(stat))));
  }
}

}  // namespace detail

/// Diebold-Mariano test on d_t = loss_a_t - loss_b_t with a Newey-West
/// variance at lag horizon-1.
inline TestResult dm_test(const LossSeries& loss_a, const LossSeries& loss_b, int horizon = 1,
                          Correction correction = Correction::none, Alternative alt = Alternative::two_sided) {
  const auto d = detail::differential(loss_a, loss_b);
  const std::size_t T = d.size();
  if (T < 10) throw LengthError("DM test needs at least 10 periods");
  if (horizon < 1) throw ConfigError("horizon must be positive");
  const double var = hac_variance(d, horizon - 1);
  if (detail::all_zero(d) || !(var > 0.0)) throw DegenerateTestError("loss differential has zero variance");

  double mean = 0.0;
  for (double v : d) mean += v;
  mean /= static_cast<double>(T);

  TestResult r;
  r.T = T;
  r.correction = correction;
  r.mean_differential = mean;
  r.statistic = mean / std::sqrt(var / static_cast<double>(T));
  if (correction == Correction::harvey) {
    const double Td = static_cast<double>(T), h = static_cast<double>(horizon);
    r.statistic *= std::sqrt((Td + 1.0 - 2.0 * h + h * (h - 1.0) / Td) / Td);
    r.degrees_of_freedom = Td - 1.0;
    r.p_value = detail::p_from(boost::math::students_t(Td - 1.0), r.statistic, alt);
  } else {
    r.p_value = detail::p_from(boost::math::normal(), r.statistic, alt);
  }
  return r;
}

/// Giacomini-White conditional predictive ability test. Instruments at time t
/// are (1, d_{t-1}, ..., d_{t-window}); the Wald statistic n·Z̄'Ω⁻¹Z̄ is
/// referred to a chi-square with window+1 degrees of freedom.
inline TestResult gw_test(const LossSeries& loss_a, const LossSeries& loss_b, int window = 1) {
  const auto d = detail::differential(loss_a, loss_b);
  if (d.size() < 20) throw LengthError("GW test needs at least 20 periods");
  if (window < 0) throw ConfigError("conditioning window must be nonnegative");
  if (detail::all_zero(d)) throw DegenerateTestError("loss differential is identically zero");

  const auto q = static_cast<std::size_t>(window) + 1;
  const std::size_t n = d.size() - static_cast<std::size_t>(window);
  Matrix Z(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(q));
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t t = i + static_cast<std::size_t>(window);
    Z(static_cast<Eigen::Index>(i), 0) = d[t];
    for (std::size_t l = 1; l < q; ++l) Z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(l)) = d[t - l] * d[t];
  }
  const Vector zbar = Z.colwise().mean().transpose();
  const Matrix omega = Z.transpose() * Z / static_cast<double>(n);
  Eigen::LDLT<Matrix> ldlt(omega);
  if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().minCoeff() > 1e-12 * std::max(1.0, ldlt.vectorD().maxCoeff())))
    throw NumericError("singular instrument covariance");

  TestResult r;
  r.T = n;
  r.statistic = static_cast<double>(n) * zbar.dot(ldlt.solve(zbar));
  r.degrees_of_freedom = static_cast<double>(q);
  r.mean_differential = zbar(0);
  r.p_value = boost::math::cdf(boost::math::complement(boost::math::chi_squared(static_cast<double>(q)), r.statistic));
  return r;
}

// ---------------------------------------------------------------------------
// Fold plans
// ---------------------------------------------------------------------------

struct PlanSpec {
  YearMonth train_end;
  YearMonth validation_end;
  int k = 5;
};

struct FoldPlan {
  MonthRange training;
  std::vector<MonthRange> folds;
  MonthRange validation;
  MonthRange testing;
  int k = 0;

  /// Training and validation together (everything a final model may see).
  MonthRange fitting() const { return {training.first, validation.last}; }
};

/// Splits `span` into K contiguous training folds, a validation range and a
/// testing range ending at span.last. Earlier folds absorb the remainder.
inline FoldPlan make_folds(const MonthRange& span, const PlanSpec& plan) {
  if (plan.k < 1) throw PlanError("fold count must be positive");
  if (span.empty()) throw PlanError("empty span");
  if (!(span.first <= plan.train_end && plan.train_end < plan.validation_end && plan.validation_end < span.last))
    throw PlanError("boundaries must satisfy start <= train_end < validation_end < end within " + span.str());
  FoldPlan fp;
  fp.k = plan.k;
  fp.training = {span.first, plan.train_end};
  fp.validation = {plan.train_end.plus(1), plan.validation_end};
  fp.testing = {plan.validation_end.plus(1), span.last};
  const int n = fp.training.size();
  if (plan.k > n) throw PlanError("more folds than training months");
  const int base = n / plan.k, extra = n % plan.k;
  YearMonth cursor = span.first;
  for (int f = 0; f < plan.k; ++f) {
    const int len = base + (f < extra ? 1 : 0);
    fp.folds.push_back({cursor, cursor.plus(len - 1)});
    cursor = cursor.plus(len);
  }
  return fp;
}

// ---------------------------------------------------------------------------
// Grid search
// ---------------------------------------------------------------------------

enum class Scale { linear, log2, integer };

inline Scale parse_scale(std::string_view s) {
  if (s == "linear") return Scale::linear;
  if (s == "log2") return Scale::log2;
  if (s == "integer") return Scale::integer;
  throw ConfigError("unknown grid scale '" + std::string(s) + "'");
}

struct GridDimension {
  std::string name;
  double lower = 0.0;
  double upper = 1.0;
  Scale scale = Scale::linear;
  /// Number of points; 0 means every integer for `integer` scale and 5 otherwise.
  int points = 0;

  /// Candidate values in ascending order. `log2` values are 2^e rounded to integers.
  std::vector<double> values() const {
    if (!(lower < upper)) throw ConfigError("grid dimension '" + name + "' needs lower < upper");
    std::vector<double> out;
    auto push_unique = [&](double v) {
      if (out.empty() || out.back() != v) out.push_back(v);
    };
    if (scale == Scale::integer && points == 0) {
      for (double v = std::ceil(lower); v <= std::floor(upper); v += 1.0) out.push_back(v);
      if (out.empty()) throw ConfigError("grid dimension '" + name + "' contains no integer");
      return out;
    }
    const int n = points == 0 ? 5 : points;
    if (n < 1) throw ConfigError("grid dimension '" + name + "' needs at least one point");
    for (int i = 0; i < n; ++i) {
      const double x = n == 1 ? lower : lower + (upper - lower) * static_cast<double>(i) / static_cast<double>(n - 1);
      switch (scale) {
        case Scale::linear: push_unique(x); break;
        case Scale::integer: push_unique(std::round(x)); break;
        case Scale::log2: push_unique(std::max(1.0, std::round(std::exp2(x)))); break;
      }
    }
    return out;
  }
};

struct GridSpec {
  std::vector<GridDimension> dimensions;
};

/// One grid point: (name, value) pairs in dimension order.
struct GridPoint {
  std::vector<std::pair<std::string, double>> values;

  double get(std::string_view name) const {
    for (const auto& [n, v] : values)
      if (n == name) return v;
    throw ConfigError("grid point has no '" + std::string(name) + "'");
  }
  double get_or(std::string_view name, double fallback) const {
    for (const auto& [n, v] : values)
      if (n == name) return v;
    return fallback;
  }
  std::string str() const {
    std::string s;
    for (const auto& [n, v] : values) s += (s.empty() ? "" : " ") + n + "=" + detail::format_double(v);
    return s;
  }
};

/// Cartesian product, first dimension varying slowest.
inline std::vector<GridPoint> expand(const GridSpec& spec) {
  if (spec.dimensions.empty()) throw ConfigError("grid has no dimensions");
  std::vector<GridPoint> pts{GridPoint{}};
  for (const auto& dim : spec.dimensions) {
    const auto vals = dim.values();
    std::vector<GridPoint> next;
    for (const auto& p : pts)
      for (double v : vals) {
        GridPoint q = p;
        q.values.emplace_back(dim.name, v);
        next.push_back(std::move(q));
      }
    pts = std::move(next);
  }
  return pts;
}

/// What grid_search needs from a dataset: its span and row slices by month.
template <class S>
concept RowSource = requires(const S& s, const MonthRange& r) {
  { s.span } -> std::convertible_to<MonthRange>;
  { s.rows_in(r) } -> std::convertible_to<AlignedDataset>;
};

/// A trainable model family scored on held-out rows.
template <class F>
concept ModelFamily = requires(const F& f, const GridPoint& p, const AlignedDataset& d, std::uint64_t seed) {
  { f.fit_and_score(p, d, d, seed) } -> std::convertible_to<double>;
  { f.parameter_count(p, d.width()) } -> std::convertible_to<double>;
};

struct LeaderboardEntry {
  GridPoint point;
  double mean_mse = std::numeric_limits<double>::infinity();
  std::vector<double> fold_mse;
  double parameters = 0.0;
  bool failed = false;
  std::string message;
};

struct SearchResult {
  GridPoint best;
  std::size_t best_index = 0;
  std::vector<LeaderboardEntry> leaderboard;  // grid order
};

/// Concatenates row blocks; the result's span covers the first through last block.
inline AlignedDataset concat_rows(const std::vector<AlignedDataset>& parts) {
  if (parts.empty()) throw LengthError("nothing to concatenate");
  Eigen::Index rows = 0;
  for (const auto& p : parts) rows += p.rows();
  AlignedDataset out = parts.front();
  out.features.resize(rows, parts.front().width());
  out.target.resize(rows);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.features.middleRows(at, p.rows()) = p.features;
    out.target.segment(at, p.rows()) = p.target;
    at += p.rows();
  }
  out.span = {parts.front().span.first, parts.back().span.last};
  return out;
}

struct SearchOptions {
  unsigned parallelism = 1;
};

/// K-fold cross-validation over the training folds of `folds`: each point is
/// trained on K-1 folds and scored by MSE on the held-out fold. Only training
/// months are ever read from `data`. The minimum mean MSE wins; exact ties go
/// to the point with fewer parameters, then to grid order.
template <ModelFamily Family, RowSource Source>
SearchResult grid_search(const Family& family, const GridSpec& grid, const FoldPlan& folds, const Source& data,
                         std::uint64_t seed, const SearchOptions& opt = {}) {
  const auto points = expand(grid);
  if (folds.k < 2) throw PlanError("grid search needs at least two training folds");
  if (!MonthRange(data.span).contains(folds.training))
    throw InvalidSpanError("training range " + folds.training.str() + " outside dataset span");

  std::vector<AlignedDataset> fold_rows;
  for (const auto& f : folds.folds) fold_rows.push_back(data.rows_in(f));

  SearchResult res;
  res.leaderboard.resize(points.size());
  auto evaluate = [&](std::size_t i) {
    LeaderboardEntry e;
    e.point = points[i];
    try {
      e.parameters = family.parameter_count(points[i], fold_rows.front().width());
      double total = 0.0;
      for (std::size_t held = 0; held < fold_rows.size(); ++held) {
        std::vector<AlignedDataset> train;
        for (std::size_t f = 0; f < fold_rows.size(); ++f)
          if (f != held) train.push_back(fold_rows[f]);
        const std::uint64_t s = derive_seed(seed, "grid/" + std::to_string(i) + "/" + std::to_string(held));
        const double score = family.fit_and_score(points[i], concat_rows(train), fold_rows[held], s);
        if (!std::isfinite(score)) throw DivergenceError(0);
        e.fold_mse.push_back(score);
        total += score;
      }
      e.mean_mse = total / static_cast<double>(fold_rows.size());
    } catch (const std::exception& ex) {
      e.failed = true;
      e.message = ex.what();
      e.mean_mse = std::numeric_limits<double>::infinity();
    }
    res.leaderboard[i] = std::move(e);
  };

  const unsigned workers = std::max(1u, std::min<unsigned>(opt.parallelism, static_cast<unsigned>(points.size())));
  if (workers == 1) {
    for (std::size_t i = 0; i < points.size(); ++i) evaluate(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < points.size(); i = next++) evaluate(i);
      });
    for (auto& t : pool) t.join();
  }

  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < res.leaderboard.size(); ++i) {
    const auto& e = res.leaderboard[i];
    if (e.failed) continue;
    if (!best) {
      best = i;
      continue;
    }
    const auto& b = res.leaderboard[*best];
    if (e.mean_mse < b.mean_mse || (e.mean_mse == b.mean_mse && e.parameters < b.parameters)) best = i;
  }
  if (!best) throw SearchFailedError("every grid point failed");
  res.best_index = *best;
  res.best = points[*best];
  return res;
}

}  // namespace itac
