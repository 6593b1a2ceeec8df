#pragma once

#include <optional>
#include <string>
#include <vector>

#include "itac/core.hpp"
#include "itac/ingest.hpp"

namespace itac {

/// Divides by the series maximum and multiplies by 100.
inline TimeSeries rescale_0_100(const TimeSeries& s) {
  if (s.empty()) throw LengthError("rescale of an empty series");
  double mx = 0.0;
  for (double v : s.values) {
    if (!(v >= 0.0)) throw DegenerateSeriesError("rescale requires nonnegative values");
    mx = std::max(mx, v);
  }
  if (mx <= 0.0) throw DegenerateSeriesError("all-zero series cannot be rescaled");
  TimeSeries out = s;
  for (double& v : out.values) v = v == mx ? 100.0 : v / mx * 100.0;
  return out;
}

/// Elementwise ln(value + offset).
inline TimeSeries log_series(const TimeSeries& s, double offset = 1.0) {
  TimeSeries out = s;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double x = s.values[i] + offset;
    if (!(x > 0.0)) throw DomainError(i);
    out.values[i] = std::log(x);
  }
  return out;
}

/// ln(v[t]) - ln(v[t-1]); the result starts one period later.
inline TimeSeries log_diff(const TimeSeries& s) {
  if (s.size() < 2) throw LengthError("log_diff needs at least two values");
  for (std::size_t i = 0; i < s.size(); ++i)
    if (!(s.values[i] > 0.0)) throw DomainError(i);
  TimeSeries out{s.period(1), {}, s.frequency};
  out.values.reserve(s.size() - 1);
  for (std::size_t i = 1; i < s.size(); ++i) out.values.push_back(std::log(s.values[i]) - std::log(s.values[i - 1]));
  return out;
}

enum class ImputePolicy { forward_fill, linear, drop_term };

inline ImputePolicy parse_impute_policy(std::string_view s) {
  if (s == "forward-fill" || s == "forward_fill") return ImputePolicy::forward_fill;
  if (s == "linear") return ImputePolicy::linear;
  if (s == "drop-term" || s == "drop_term") return ImputePolicy::drop_term;
  throw ConfigError("unknown impute policy '" + std::string(s) + "'");
}

/// Fills missing cells. Leading gaps are back-filled with the first observed
/// value under both filling policies; trailing gaps under `linear` carry the
/// last observation forward. `drop_term` removes every column with a gap.
inline TermPanel impute(const TermPanel& panel, ImputePolicy policy) {
  std::vector<Eigen::Index> keep;
  for (Eigen::Index j = 0; j < panel.cols(); ++j) {
    if (panel.missing.col(j).all()) throw EmptyColumnError(panel.terms[static_cast<std::size_t>(j)]);
    if (policy != ImputePolicy::drop_term || !panel.missing.col(j).any()) keep.push_back(j);
  }
  TermPanel out = panel.select(keep);
  if (policy == ImputePolicy::drop_term) return out;

  const Eigen::Index T = out.rows();
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    auto col = out.matrix.col(j);
    auto miss = out.missing.col(j);
    Eigen::Index first = 0;
    while (miss(first)) ++first;
    for (Eigen::Index i = 0; i < first; ++i) col(i) = col(first);
    Eigen::Index last_obs = first;
    for (Eigen::Index i = first + 1; i < T; ++i) {
      if (miss(i)) continue;
      if (i - last_obs > 1) {
        for (Eigen::Index g = last_obs + 1; g < i; ++g) {
          if (policy == ImputePolicy::forward_fill) {
            col(g) = col(last_obs);
          } else {
            const double w = static_cast<double>(g - last_obs) / static_cast<double>(i - last_obs);
            col(g) = col(last_obs) + w * (col(i) - col(last_obs));
          }
        }
      }
      last_obs = i;
    }
    for (Eigen::Index i = last_obs + 1; i < T; ++i) col(i) = col(last_obs);
    miss.setConstant(false);
  }
  return out;
}

/// Per-column transform chain applied by `align`, in order:
/// impute → rescale → log → log-diff → standardize.
/// With both `log` and `log_diff` set, the differences are taken of the
/// logged levels, i.e. ln(x[t] + offset) - ln(x[t-1] + offset).
struct TransformSpec {
  bool rescale = true;
  bool log = true;
  double log_offset = 1.0;
  bool log_diff = true;
  ImputePolicy impute_policy = ImputePolicy::linear;
  /// Columns with a larger missing share are dropped before filling.
  double max_missing_fraction = 0.2;
  bool standardize = true;
};

struct AlignedDataset {
  Matrix features;  // T × N
  Vector target;    // T
  MonthRange span;
  std::vector<std::string> feature_names;
  std::vector<std::string> feature_categories;
  /// Standardization statistics (identity when disabled).
  Vector means;
  Vector scales;

  Eigen::Index rows() const { return features.rows(); }
  Eigen::Index width() const { return features.cols(); }

  /// Rows falling in `r`, which must lie inside the dataset span.
  AlignedDataset rows_in(const MonthRange& r) const {
    if (!span.contains(r) || r.empty()) throw InvalidSpanError("range " + r.str() + " outside dataset span " + span.str());
    const auto off = span.offset(r.first);
    return {features.middleRows(off, r.size()), target.segment(off, r.size()), r, feature_names,
            feature_categories, means, scales};
  }
};

inline constexpr int kMinimumOverlapMonths = 24;

/// Transforms the panel, intersects it with the target span and standardizes
/// the features with statistics from `training_window` only (whole common span
/// when absent).
inline AlignedDataset align(const TermPanel& panel, const TimeSeries& target, const TransformSpec& spec,
                            std::optional<MonthRange> training_window = std::nullopt) {
  if (panel.cols() == 0) throw EmptyPanelError("panel has no columns");
  TermPanel p = panel;
  if (spec.impute_policy != ImputePolicy::drop_term) {
    std::vector<Eigen::Index> keep;
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      const double share = static_cast<double>(p.missing.col(j).count()) / static_cast<double>(p.rows());
      if (share <= spec.max_missing_fraction) keep.push_back(j);
    }
    p = p.select(keep);
  }
  p = impute(p, spec.impute_policy);
  if (p.cols() == 0) throw EmptyPanelError("every column was dropped during imputation");

  std::vector<TimeSeries> cols;
  for (Eigen::Index j = 0; j < p.cols(); ++j) {
    TimeSeries s = p.series(j);
    if (spec.rescale) s = rescale_0_100(s);
    if (spec.log && spec.log_diff) {
      s = log_diff([&] {
        TimeSeries shifted = s;
        for (double& v : shifted.values) v += spec.log_offset;
        return shifted;
      }());
    } else if (spec.log) {
      s = log_series(s, spec.log_offset);
    } else if (spec.log_diff) {
      s = log_diff(s);
    }
    cols.push_back(std::move(s));
  }

  const MonthRange feature_span = cols.front().span();
  const MonthRange common = MonthRange::intersect(feature_span, target.span());
  if (common.size() < kMinimumOverlapMonths)
    throw InsufficientOverlapError("panel and target overlap by " + std::to_string(common.size()) +
                                   " months; at least 24 required");

  AlignedDataset d;
  d.span = common;
  d.feature_names = p.terms;
  d.feature_categories = p.categories;
  d.target = to_vector(target.slice(common));
  d.features.resize(common.size(), p.cols());
  for (Eigen::Index j = 0; j < p.cols(); ++j) d.features.col(j) = to_vector(cols[static_cast<std::size_t>(j)].slice(common));

  d.means = Vector::Zero(p.cols());
  d.scales = Vector::Ones(p.cols());
  if (spec.standardize) {
    const MonthRange win = training_window.value_or(common);
    if (!common.contains(win) || win.size() < 2)
      throw InvalidSpanError("training window " + win.str() + " must lie inside " + common.str());
    const auto block = d.features.middleRows(common.offset(win.first), win.size());
    d.means = block.colwise().mean().transpose();
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      const double var = (block.col(j).array() - d.means(j)).square().sum() / static_cast<double>(win.size());
      d.scales(j) = var > 0.0 ? std::sqrt(var) : 1.0;
    }
    d.features = (d.features.rowwise() - d.means.transpose()).array().rowwise() / d.scales.transpose().array();
  }
  return d;
}

}  // namespace itac
