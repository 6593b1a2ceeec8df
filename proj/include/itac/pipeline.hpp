#pragma once

#include "itac/config.hpp"
#include "itac/evalx.hpp"
#include "itac/factors.hpp"
#include "itac/ingest.hpp"
#include "itac/neural.hpp"
#include "itac/random.hpp"
#include "itac/select.hpp"
#include "itac/serialize.hpp"
#include "itac/transform.hpp"

#include <map>
#include <mutex>
#include <set>
#include <thread>

namespace itac {

// ---------------------------------------------------------------------------
// Indicator series
// ---------------------------------------------------------------------------

struct IndicatorSeries {
  TimeSeries series;
  std::string method;
  Variant variant = Variant::itacons;
  std::map<std::string, std::string> hyperparameters;
  std::string vocabulary_hash;

  std::size_t size() const { return series.size(); }
  MonthRange span() const { return series.span(); }
  const std::vector<double>& values() const { return series.values; }
};

inline std::string indicator_csv(const IndicatorSeries& s) { return serialize_time_series(s.series); }

inline Json to_json(const IndicatorSeries& s) {
  Json hp = Json::object();
  for (const auto& [k, v] : s.hyperparameters) hp[k] = v;
  return {{"method", s.method},
          {"variant", to_string(s.variant)},
          {"frequency", s.series.frequency == Frequency::monthly ? "monthly" : "quarterly"},
          {"start", s.series.label(0)},
          {"periods", s.series.size()},
          {"vocabulary_hash", s.vocabulary_hash},
          {"hyperparameters", std::move(hp)}};
}

namespace detail {

/// Common span of the transformed panel and the target, before any model is fit.
inline MonthRange aligned_span(const TermPanel& panel, const TimeSeries& target, const TransformSpec& spec) {
  MonthRange features = panel.span;
  if (spec.log_diff) features.first = features.first.plus(1);
  return MonthRange::intersect(features, target.span());
}

inline double sample_sd(const Vector& v) {
  if (v.size() < 2) return 0.0;
  return std::sqrt((v.array() - v.mean()).square().sum() / static_cast<double>(v.size() - 1));
}

/// Orients `score` to correlate positively with `target` on `window` rows and
/// maps it onto the target's mean and standard deviation there.
inline Vector scale_to_target(const Vector& score, const Vector& target, Eigen::Index offset, Eigen::Index rows) {
  const Vector s = score.segment(offset, rows);
  const Vector y = target.segment(offset, rows);
  const double sd_s = sample_sd(s), sd_y = sample_sd(y);
  if (!(sd_s > 0.0)) throw DegenerateSeriesError("index has zero variance on the training window");
  const double cov = ((s.array() - s.mean()) * (y.array() - y.mean())).sum();
  const double sign = cov < 0.0 ? -1.0 : 1.0;
  return ((sign * (score.array() - s.mean()) / sd_s) * sd_y + y.mean()).matrix();
}

inline std::string fmt(double v) { return format_double(v); }

}  // namespace detail

struct BuildOutput {
  IndicatorSeries indicator;
  Json artifact;
};

/// Fits `method` on an already filtered panel and returns its index series.
///
/// Features are standardized with training-window statistics. PCA and DFM
/// indices are the first score/factor, sign-oriented and rescaled to the
/// target on the training window; network indices are the fitted values,
/// trained on the training window with early stopping on validation.
inline BuildOutput build_index(const TermPanel& panel, const std::string& method, const PipelineConfig& cfg,
                               const TimeSeries& target, std::uint64_t seed) {
  if (panel.cols() == 0) throw EmptyPanelError("no panel columns selected");
  const MonthRange common = detail::aligned_span(panel, target, cfg.transform);
  const FoldPlan fp = make_folds(common, cfg.plan);
  const AlignedDataset d = align(panel, target, cfg.transform, fp.training);
  const AlignedDataset train = d.rows_in(fp.training);
  const auto off = d.span.offset(fp.training.first);

  BuildOutput out;
  auto& ind = out.indicator;
  ind.method = method;
  ind.series.start = d.span.first;

  if (method == "pca") {
    const Eigen::Index k = std::min({cfg.pca_components, d.width(), train.rows() - 1});
    const PcaModel m = pca_fit(train.features, k, cfg.pca);
    const Vector score = pca_transform(m, d.features).values.col(0);
    ind.series.values = to_std(detail::scale_to_target(score, d.target, off, train.rows()));
    ind.hyperparameters = {{"components", std::to_string(k)},
                           {"standardize", cfg.pca.standardize ? "true" : "false"}};
    out.artifact = to_json(m);
  } else if (method == "dfm") {
    const Eigen::Index r = std::min(cfg.dfm_factors, d.width());
    const DfmModel m = dfm_fit(train.features, r, cfg.dfm);
    const Vector score = dfm_smooth(m, d.features).values.col(0);
    ind.series.values = to_std(detail::scale_to_target(score, d.target, off, train.rows()));
    ind.hyperparameters = {{"factors", std::to_string(r)},
                           {"series_length", detail::fmt(cfg.dfm.series_length)},
                           {"max_iter", std::to_string(cfg.dfm.max_iter)},
                           {"tol", detail::fmt(cfg.dfm.tol)}};
    out.artifact = to_json(m);
  } else if (method == "ann") {
    AnnConfig c = cfg.ann;
    c.seed = derive_seed(seed, "build/ann");
    const AlignedDataset val = d.rows_in(fp.validation);
    const AnnArtifact art = ann_train(train, c, &val);
    ind.series.values = to_std(ann_predict(art, d.features));
    ind.hyperparameters = {{"hidden_layers", std::to_string(c.hidden_layers)},
                           {"neurons", std::to_string(c.neurons)},
                           {"activation", std::string(to_string(c.activation))},
                           {"learning_rate", detail::fmt(c.learning_rate)},
                           {"epochs", std::to_string(c.epochs)},
                           {"batch_size", std::to_string(c.batch_size)},
                           {"layer_reading", std::string(to_string(c.layer_reading))}};
    out.artifact = to_json(art);
  } else if (method == "rnn") {
    RnnConfig c = cfg.rnn;
    c.seed = derive_seed(seed, "build/rnn");
    const AlignedDataset val = d.rows_in(fp.validation);
    const RnnArtifact art = rnn_train(train, c, &val);
    ind.series.values = to_std(rnn_predict_all(art, d.features));
    ind.series.start = d.span.first.plus(c.window);
    ind.hyperparameters = {{"cell", std::string(to_string(c.cell))},
                           {"hidden_layers", std::to_string(c.hidden_layers)},
                           {"neurons", std::to_string(c.neurons)},
                           {"window", std::to_string(c.window)},
                           {"learning_rate", detail::fmt(c.learning_rate)},
                           {"epochs", std::to_string(c.epochs)},
                           {"batch_size", std::to_string(c.batch_size)},
                           {"layer_reading", std::string(to_string(c.layer_reading))}};
    out.artifact = to_json(art);
  } else {
    throw ConfigError("unknown method '" + method + "'");
  }
  ind.hyperparameters["seed"] = std::to_string(seed);
  return out;
}

/// Index for one vocabulary variant.
inline BuildOutput build_itac(const TermPanel& panel, const Vocabulary& vocab, Variant variant,
                              const std::string& method, const PipelineConfig& cfg, const TimeSeries& target,
                              std::uint64_t seed) {
  if (!panel.span.contains(cfg.data.span()))
    throw InvalidSpanError("panel span " + panel.span.str() + " does not cover configured span " + cfg.data.span().str());
  const TermPanel filtered = panel.filter(vocab, variant);
  BuildOutput out = build_index(filtered, method, cfg, target, derive_seed(seed, "itac/" + std::string(to_string(variant))));
  out.indicator.variant = variant;
  out.indicator.vocabulary_hash = vocab.hash(variant);
  out.indicator.hyperparameters["columns"] = std::to_string(filtered.cols());
  return out;
}

/// One index per category present in the variant's vocabulary, keyed by category.
inline std::map<std::string, IndicatorSeries> build_category_itacs(const TermPanel& panel, const Vocabulary& vocab,
                                                                   Variant variant, const std::string& method,
                                                                   const PipelineConfig& cfg, const TimeSeries& target,
                                                                   std::uint64_t seed) {
  const TermPanel filtered = panel.filter(vocab, variant);
  std::set<std::string> categories(filtered.categories.begin(), filtered.categories.end());
  std::map<std::string, IndicatorSeries> out;
  for (const auto& cat : categories) {
    BuildOutput b = build_index(filtered.filter_category(cat), method, cfg, target, derive_seed(seed, "category/" + cat));
    b.indicator.variant = variant;
    b.indicator.vocabulary_hash = vocab.hash(variant);
    b.indicator.hyperparameters["category"] = cat;
    out.emplace(cat, std::move(b.indicator));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model families for grid_search
// ---------------------------------------------------------------------------

/// Principal-component regression: k scores feed an OLS of the target.
struct PcaFamily {
  PcaOptions options;

  double fit_and_score(const GridPoint& p, const AlignedDataset& train, const AlignedDataset& held, std::uint64_t) const {
    const auto k = static_cast<Eigen::Index>(p.get("components"));
    const PcaModel m = pca_fit(train.features, k, options);
    const OlsModel reg = ols_fit(pca_transform(m, train.features).values, train.target);
    return mse(held.target, reg.predict(pca_transform(m, held.features).values));
  }
  double parameter_count(const GridPoint& p, Eigen::Index width) const {
    const double k = p.get("components");
    return k * static_cast<double>(width) + k + 1.0;
  }
};

/// Smoothed DFM factors regressed onto the target.
struct DfmFamily {
  EmConfig em;

  double fit_and_score(const GridPoint& p, const AlignedDataset& train, const AlignedDataset& held, std::uint64_t) const {
    EmConfig c = em;
    c.series_length = p.get_or("series_length", em.series_length);
    const auto r = static_cast<Eigen::Index>(p.get("factors"));
    const DfmModel m = dfm_fit(train.features, r, c);
    const OlsModel reg = ols_fit(dfm_smooth(m, train.features).values, train.target);
    return mse(held.target, reg.predict(dfm_smooth(m, held.features).values));
  }
  double parameter_count(const GridPoint& p, Eigen::Index width) const {
    const double r = p.get("factors"), n = static_cast<double>(width);
    return n * r + r * r + n + r + 1.0;
  }
};

namespace detail {

inline double mlp_parameters(Eigen::Index inputs, const std::vector<int>& sizes) {
  double n = 0.0, in = static_cast<double>(inputs);
  for (int h : sizes) {
    n += (in + 1.0) * h;
    in = h;
  }
  return n + in + 1.0;
}

}  // namespace detail

struct AnnFamily {
  AnnConfig base;

  AnnConfig configure(const GridPoint& p, std::uint64_t seed) const {
    AnnConfig c = base;
    c.hidden_layers = static_cast<int>(p.get_or("hidden_layers", base.hidden_layers));
    c.neurons = static_cast<int>(p.get_or("neurons", base.neurons));
    c.batch_size = static_cast<int>(p.get_or("batch_size", base.batch_size));
    c.seed = seed;
    return c;
  }
  double fit_and_score(const GridPoint& p, const AlignedDataset& train, const AlignedDataset& held,
                       std::uint64_t seed) const {
    const AnnArtifact art = ann_train(train, configure(p, seed));
    return mse(held.target, ann_predict(art, held.features));
  }
  double parameter_count(const GridPoint& p, Eigen::Index width) const {
    const AnnConfig c = configure(p, 0);
    return detail::mlp_parameters(width, hidden_sizes(c.hidden_layers, c.neurons, c.layer_reading));
  }
};

struct RnnFamily {
  RnnConfig base;

  RnnConfig configure(const GridPoint& p, std::uint64_t seed) const {
    RnnConfig c = base;
    c.hidden_layers = static_cast<int>(p.get_or("hidden_layers", base.hidden_layers));
    c.neurons = static_cast<int>(p.get_or("neurons", base.neurons));
    c.batch_size = static_cast<int>(p.get_or("batch_size", base.batch_size));
    c.window = static_cast<int>(p.get_or("window", base.window));
    c.seed = seed;
    return c;
  }
  double fit_and_score(const GridPoint& p, const AlignedDataset& train, const AlignedDataset& held,
                       std::uint64_t seed) const {
    const RnnConfig c = configure(p, seed);
    if (held.rows() <= c.window) throw LengthError("held-out fold shorter than the window");
    const RnnArtifact art = rnn_train(train, c);
    return mse(held.target.tail(held.rows() - c.window), rnn_predict_all(art, held.features));
  }
  double parameter_count(const GridPoint& p, Eigen::Index width) const {
    const RnnConfig c = configure(p, 0);
    const double G = c.cell == CellType::lstm ? 4.0 : 1.0;
    double n = 0.0, in = static_cast<double>(width);
    for (int h : hidden_sizes(c.hidden_layers, c.neurons, c.layer_reading)) {
      n += G * h * (in + h + 1.0);
      in = h;
    }
    return n + in + 1.0;
  }
};

/// Runs the configured grid for `method` over the training folds of `data`.
template <RowSource Source>
SearchResult search_method(const std::string& method, const PipelineConfig& cfg, const FoldPlan& fp, const Source& data,
                           std::uint64_t seed) {
  const auto it = cfg.grids.find(method);
  if (it == cfg.grids.end()) throw ConfigError("no grid configured for method '" + method + "'");
  const SearchOptions opt{cfg.search_parallelism};
  const std::uint64_t s = derive_seed(seed, "search/" + method);
  if (method == "pca") return grid_search(PcaFamily{cfg.pca}, it->second, fp, data, s, opt);
  if (method == "dfm") return grid_search(DfmFamily{cfg.dfm}, it->second, fp, data, s, opt);
  if (method == "ann") return grid_search(AnnFamily{cfg.ann}, it->second, fp, data, s, opt);
  if (method == "rnn") return grid_search(RnnFamily{cfg.rnn}, it->second, fp, data, s, opt);
  throw ConfigError("unknown method '" + method + "'");
}

// ---------------------------------------------------------------------------
// Stage one
// ---------------------------------------------------------------------------

using NamedSeries = std::pair<std::string, TimeSeries>;

struct StageOneResult {
  SelectionTrace trace;
  OlsModel model;
  std::vector<std::string> selected;
  /// Fitted Xβ over the candidates' common span.
  TimeSeries xbeta;
  MonthRange fitted_on;
};

namespace detail {

inline MonthRange common_span(const std::vector<NamedSeries>& series) {
  if (series.empty()) throw LengthError("no series given");
  MonthRange r = series.front().second.span();
  for (const auto& s : series) r = MonthRange::intersect(r, s.second.span());
  return r;
}

inline Matrix stack_columns(const std::vector<NamedSeries>& series, const MonthRange& r) {
  Matrix X(r.size(), static_cast<Eigen::Index>(series.size()));
  for (std::size_t j = 0; j < series.size(); ++j) X.col(static_cast<Eigen::Index>(j)) = to_vector(series[j].second.slice(r));
  return X;
}

}  // namespace detail

/// Stepwise (bidirectional, BIC) OLS of `target` on the candidates over
/// `fit_range` (their common span when absent). A rank-deficient candidate set
/// is rejected up front.
inline StageOneResult stage_one_fit(const std::vector<NamedSeries>& candidates, const TimeSeries& target,
                                    std::optional<MonthRange> fit_range = std::nullopt) {
  std::vector<NamedSeries> all = candidates;
  all.emplace_back("__target", target);
  const MonthRange common = detail::common_span(all);
  const MonthRange fit = fit_range ? MonthRange::intersect(*fit_range, common) : common;
  if (fit.size() < static_cast<int>(candidates.size()) + 2)
    throw InsufficientOverlapError("stage one needs more months than candidates over " + fit.str());

  std::vector<std::string> names;
  for (const auto& c : candidates) names.push_back(c.first);
  const Matrix X = detail::stack_columns(candidates, fit);
  const Vector y = to_vector(target.slice(fit));
  (void)ols_fit(X, y, names);

  StageOneResult r;
  r.fitted_on = fit;
  r.trace = stepwise_select(X, y, Direction::bidirectional, Criterion::bic, names);
  r.model = r.trace.final;
  for (auto j : r.trace.selected) r.selected.push_back(names[j]);

  const MonthRange cand_span = detail::common_span(candidates);
  const Matrix full = detail::stack_columns(candidates, cand_span);
  Vector xb = Vector::Constant(full.rows(), r.model.coefficients(0));
  for (std::size_t k = 0; k < r.trace.selected.size(); ++k)
    xb += r.model.coefficients(static_cast<Eigen::Index>(k + 1)) * full.col(static_cast<Eigen::Index>(r.trace.selected[k]));
  r.xbeta = {cand_span.first, to_std(xb), Frequency::monthly};
  return r;
}

// ---------------------------------------------------------------------------
// Stage two
// ---------------------------------------------------------------------------

/// Read access to the evaluation target, by month range.
template <class S>
concept TargetSource = requires(const S& s, const MonthRange& r) {
  { s.span() } -> std::convertible_to<MonthRange>;
  { s.values(r) } -> std::convertible_to<std::vector<double>>;
};

struct SeriesTarget {
  const TimeSeries& series;
  MonthRange span() const { return series.span(); }
  std::vector<double> values(const MonthRange& r) const { return series.slice(r); }
};

struct StageTwoOptions {
  int horizon = 1;
  Correction correction = Correction::harvey;
  Alternative alternative = Alternative::greater;
  int gw_window = 1;
  McmcConfig mcmc;
  std::uint64_t seed = 0;
  unsigned parallelism = 1;
};

inline StageTwoOptions stage_two_options(const PipelineConfig& cfg, std::uint64_t seed) {
  return {cfg.evaluate.horizon, cfg.evaluate.correction, cfg.evaluate.alternative, cfg.evaluate.gw_window,
          cfg.evaluate.mcmc,    seed,                     cfg.evaluate.parallelism};
}

struct EvalRow {
  std::string category;
  double estimate = std::nan("");
  double mse = std::nan("");
  double rmse = std::nan("");
  double p_dm = std::nan("");
  double p_gw = std::nan("");
  std::vector<std::string> warnings;
  OlsModel model;
  std::vector<double> forecasts;
};

inline constexpr const char* kTotalRow = "Total";

struct EvalReport {
  std::vector<EvalRow> rows;  // categories by name, then Total
  MonthRange fitting;
  MonthRange testing;
  OlsModel baseline;  // target on Xβ alone
  double baseline_mse = std::nan("");
  std::vector<double> baseline_forecasts;
  InclusionRanking ranking;
  std::vector<std::string> total_members;

  const EvalRow* find(std::string_view category) const {
    for (const auto& r : rows)
      if (r.category == category) return &r;
    return nullptr;
  }
};

namespace detail {

struct FitForecast {
  OlsModel model;
  std::vector<double> forecasts;
};

/// OLS of `y` on the columns over the fitting rows, then predictions on the testing rows.
inline FitForecast fit_forecast(const std::vector<std::vector<double>>& fit_cols,
                                const std::vector<std::vector<double>>& test_cols, const Vector& y,
                                const std::vector<std::string>& names) {
  Matrix Xf(y.size(), static_cast<Eigen::Index>(fit_cols.size()));
  Matrix Xt(static_cast<Eigen::Index>(test_cols.front().size()), static_cast<Eigen::Index>(test_cols.size()));
  for (std::size_t j = 0; j < fit_cols.size(); ++j) {
    Xf.col(static_cast<Eigen::Index>(j)) = to_vector(fit_cols[j]);
    Xt.col(static_cast<Eigen::Index>(j)) = to_vector(test_cols[j]);
  }
  FitForecast f;
  f.model = ols_fit(Xf, y, names);
  f.forecasts = to_std(f.model.predict(Xt));
  return f;
}

inline Vector residualize(const Vector& v, const Matrix& design) {
  const OlsModel m = ols_fit(design, v);
  return v - m.predict(design);
}

inline void score_row(EvalRow& row, const Vector& actual, const LossSeries& baseline_loss, const StageTwoOptions& opt) {
  const Vector pred = to_vector(row.forecasts);
  row.mse = mse(actual, pred);
  row.rmse = std::sqrt(row.mse);
  const LossSeries loss = squared_errors(actual, pred);
  try {
    row.p_dm = dm_test(baseline_loss, loss, opt.horizon, opt.correction, opt.alternative).p_value;
  } catch (const Error& e) {
    row.warnings.push_back(std::string("DM: ") + e.what());
  }
  try {
    row.p_gw = gw_test(baseline_loss, loss, opt.gw_window).p_value;
  } catch (const Error& e) {
    row.warnings.push_back(std::string("GW: ") + e.what());
  }
}

}  // namespace detail

/// Two-stage evaluation. For every category, the target is regressed on Xβ and
/// that category's index over the fitting range (training + validation) and
/// forecast over the testing range. Forecasts are compared with the Xβ-only
/// model by DM (alternative from `opt`, default: the category model is more
/// accurate) and GW. The Total row uses the indices whose spike-and-slab
/// inclusion probability exceeds 0.5. Testing-range targets are read once,
/// after every forecast has been produced.
template <TargetSource Source>
EvalReport stage_two_forecast(const TimeSeries& xbeta, const std::map<std::string, IndicatorSeries>& itacs,
                              const Source& target, const FoldPlan& folds, const StageTwoOptions& opt = {}) {
  if (itacs.size() < 2) throw LengthError("stage two needs at least two categories");
  EvalReport rep;
  rep.fitting = folds.fitting();
  rep.testing = folds.testing;
  const MonthRange all{rep.fitting.first, rep.testing.last};
  auto require = [&](const MonthRange& have, const std::string& what) {
    if (!have.contains(all)) throw InvalidSpanError(what + " span " + have.str() + " does not cover " + all.str());
  };
  require(xbeta.span(), "Xβ");
  require(MonthRange(target.span()), "target");
  for (const auto& [cat, s] : itacs) require(s.span(), "index '" + cat + "'");

  const Vector y = to_vector(target.values(rep.fitting));
  const auto xb_fit = xbeta.slice(rep.fitting), xb_test = xbeta.slice(rep.testing);

  const auto base = detail::fit_forecast({xb_fit}, {xb_test}, y, {"xbeta"});
  rep.baseline = base.model;
  rep.baseline_forecasts = base.forecasts;

  std::vector<std::string> cats;
  for (const auto& kv : itacs) cats.push_back(kv.first);
  rep.rows.resize(cats.size());
  auto fit_category = [&](std::size_t i) {
    EvalRow& row = rep.rows[i];
    row.category = cats[i];
    const auto& s = itacs.at(cats[i]).series;
    try {
      auto f = detail::fit_forecast({xb_fit, s.slice(rep.fitting)}, {xb_test, s.slice(rep.testing)}, y,
                                    {"xbeta", cats[i]});
      row.estimate = f.model.coefficients(2);
      row.model = std::move(f.model);
      row.forecasts = std::move(f.forecasts);
    } catch (const Error& e) {
      row.warnings.push_back(std::string("fit: ") + e.what());
    }
  };
  const unsigned workers = std::max(1u, std::min<unsigned>(opt.parallelism, static_cast<unsigned>(cats.size())));
  if (workers == 1) {
    for (std::size_t i = 0; i < cats.size(); ++i) fit_category(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < cats.size(); i = next++) fit_category(i);
      });
    for (auto& t : pool) t.join();
  }

  // Total: rank indices by their contribution beyond Xβ.
  EvalRow total;
  total.category = kTotalRow;
  {
    const Matrix design = to_vector(xb_fit);
    Matrix Z(y.size(), static_cast<Eigen::Index>(cats.size()));
    for (std::size_t j = 0; j < cats.size(); ++j)
      Z.col(static_cast<Eigen::Index>(j)) =
          detail::residualize(to_vector(itacs.at(cats[j]).series.slice(rep.fitting)), design);
    const Vector ry = detail::residualize(y, design);
    try {
      rep.ranking = spike_slab_rank(Z, ry, opt.mcmc, derive_seed(opt.seed, "stage-two/spike-slab"), cats);
      for (const auto& w : rep.ranking.warnings) total.warnings.push_back("ranking: " + w);
      const auto order = rep.ranking.order();
      for (auto j : order)
        if (rep.ranking.probabilities[j] > 0.5) rep.total_members.push_back(cats[j]);
      if (rep.total_members.empty()) {
        rep.total_members.push_back(cats[order.front()]);
        total.warnings.push_back("no index exceeds inclusion 0.5; Total uses the top-ranked '" + cats[order.front()] + "'");
      }
      std::vector<std::vector<double>> fc{xb_fit}, tc{xb_test};
      std::vector<std::string> names{"xbeta"};
      for (const auto& m : rep.total_members) {
        fc.push_back(itacs.at(m).series.slice(rep.fitting));
        tc.push_back(itacs.at(m).series.slice(rep.testing));
        names.push_back(m);
      }
      auto f = detail::fit_forecast(fc, tc, y, names);
      total.estimate = f.model.coefficients(2);
      total.model = std::move(f.model);
      total.forecasts = std::move(f.forecasts);
    } catch (const Error& e) {
      total.warnings.push_back(std::string("fit: ") + e.what());
    }
  }
  rep.rows.push_back(std::move(total));

  // Scoring: the only read of testing-range targets.
  const Vector actual = to_vector(target.values(rep.testing));
  rep.baseline_mse = mse(actual, to_vector(rep.baseline_forecasts));
  const LossSeries baseline_loss = squared_errors(actual, to_vector(rep.baseline_forecasts));
  for (auto& row : rep.rows)
    if (!row.forecasts.empty()) detail::score_row(row, actual, baseline_loss, opt);
  return rep;
}

inline EvalReport stage_two_forecast(const TimeSeries& xbeta, const std::map<std::string, IndicatorSeries>& itacs,
                                     const TimeSeries& target, const FoldPlan& folds, const StageTwoOptions& opt = {}) {
  return stage_two_forecast(xbeta, itacs, SeriesTarget{target}, folds, opt);
}

inline std::string report_csv(const EvalReport& rep) {
  auto cell = [](double v) { return std::isfinite(v) ? detail::format_double(v) : std::string("NA"); };
  std::string out = "category,estimate,mse,rmse,p_dm,p_gw\n";
  for (const auto& r : rep.rows)
    out += r.category + "," + cell(r.estimate) + "," + cell(r.mse) + "," + cell(r.rmse) + "," + cell(r.p_dm) + "," +
           cell(r.p_gw) + "\n";
  return out;
}

inline Json to_json(const EvalReport& rep) {
  auto num = [](double v) { return std::isfinite(v) ? Json(v) : Json(); };
  Json rows = Json::array();
  for (const auto& r : rep.rows)
    rows.push_back({{"category", r.category},
                    {"estimate", num(r.estimate)},
                    {"mse", num(r.mse)},
                    {"rmse", num(r.rmse)},
                    {"p_dm", num(r.p_dm)},
                    {"p_gw", num(r.p_gw)},
                    {"warnings", r.warnings}});
  return {{"fitting", rep.fitting.str()},
          {"testing", rep.testing.str()},
          {"baseline_mse", num(rep.baseline_mse)},
          {"total_members", rep.total_members},
          {"ranking", to_json(rep.ranking)},
          {"rows", std::move(rows)}};
}

// ---------------------------------------------------------------------------
// Aggregation and correlation
// ---------------------------------------------------------------------------

/// Quarterly means of a monthly series starting in Jan/Apr/Jul/Oct; a trailing
/// partial quarter is dropped.
inline TimeSeries quarterly_aggregate(const TimeSeries& monthly) {
  if (monthly.frequency != Frequency::monthly) throw InvalidSpanError("series is already quarterly");
  if ((monthly.start.month - 1) % 3 != 0)
    throw InvalidSpanError("quarterly aggregation needs a series starting in Jan/Apr/Jul/Oct, got " + monthly.start.str());
  const std::size_t quarters = monthly.size() / 3;
  if (quarters == 0) throw LengthError("fewer than three months; no complete quarter");
  TimeSeries q{monthly.start, {}, Frequency::quarterly};
  for (std::size_t i = 0; i < quarters; ++i)
    q.values.push_back((monthly.values[3 * i] + monthly.values[3 * i + 1] + monthly.values[3 * i + 2]) / 3.0);
  return q;
}

inline IndicatorSeries quarterly_aggregate(const IndicatorSeries& monthly) {
  IndicatorSeries q = monthly;
  q.series = quarterly_aggregate(monthly.series);
  return q;
}

struct CorrelationMatrix {
  std::vector<std::string> names;
  Matrix values;
};

/// Pearson correlations of equally dated series.
inline CorrelationMatrix correlation_report(const std::vector<NamedSeries>& series) {
  if (series.size() < 2) throw LengthError("correlation report needs at least two series");
  const auto& ref = series.front().second;
  for (const auto& [name, s] : series)
    if (s.start != ref.start || s.size() != ref.size() || s.frequency != ref.frequency)
      throw ShapeError("series '" + name + "' is not aligned with '" + series.front().first + "'");
  if (ref.size() < 2) throw LengthError("correlation needs at least two periods");

  const auto n = static_cast<Eigen::Index>(series.size());
  Matrix Z(static_cast<Eigen::Index>(ref.size()), n);
  CorrelationMatrix c;
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto& [name, s] = series[static_cast<std::size_t>(j)];
    Vector v = to_vector(s.values);
    v.array() -= v.mean();
    const double norm = v.norm();
    if (!(norm > 0.0)) throw DegenerateSeriesError(name);
    Z.col(j) = v / norm;
    c.names.push_back(name);
  }
  c.values = Z.transpose() * Z;
  for (Eigen::Index i = 0; i < n; ++i) {
    c.values(i, i) = 1.0;
    for (Eigen::Index j = 0; j < i; ++j) c.values(i, j) = c.values(j, i);
  }
  return c;
}

inline std::string correlation_csv(const CorrelationMatrix& c) {
  std::string out = "series";
  for (const auto& n : c.names) out += "," + n;
  out += "\n";
  for (Eigen::Index i = 0; i < c.values.rows(); ++i) {
    out += c.names[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < c.values.cols(); ++j) out += "," + detail::format_double(c.values(i, j));
    out += "\n";
  }
  return out;
}

inline std::string folds_csv(const FoldPlan& fp) {
  std::string out = "segment,start,end,months\n";
  auto row = [&](const std::string& name, const MonthRange& r) {
    out += name + "," + r.first.str() + "," + r.last.str() + "," + std::to_string(r.size()) + "\n";
  };
  for (std::size_t i = 0; i < fp.folds.size(); ++i) row("fold" + std::to_string(i + 1), fp.folds[i]);
  row("validation", fp.validation);
  row("testing", fp.testing);
  return out;
}

// ---------------------------------------------------------------------------
// SVG line chart
// ---------------------------------------------------------------------------

/// Line chart of monthly series on a shared month axis.
inline std::string svg_line_chart(const std::string& title, const std::vector<NamedSeries>& series) {
  if (series.empty()) throw LengthError("nothing to plot");
  constexpr double W = 800, H = 400, L = 60, R = 20, Tm = 40, B = 50;
  static constexpr const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

  int first = std::numeric_limits<int>::max(), last = std::numeric_limits<int>::min();
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& [name, s] : series) {
    if (s.empty()) continue;
    first = std::min(first, s.start.ordinal());
    last = std::max(last, s.period(s.size() - 1).ordinal());
    for (double v : s.values)
      if (std::isfinite(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
  }
  if (first > last || !std::isfinite(lo)) throw LengthError("nothing to plot");
  if (hi == lo) hi = lo + 1.0;
  const double span = std::max(1, last - first);
  auto px = [&](int ord) { return L + (W - L - R) * (ord - first) / span; };
  auto py = [&](double v) { return H - B - (H - Tm - B) * (v - lo) / (hi - lo); };
  auto f2 = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return std::string(buf);
  };
  auto escape = [](const std::string& s) {
    std::string o;
    for (char c : s) {
      if (c == '&') o += "&amp;";
      else if (c == '<') o += "&lt;";
      else if (c == '>') o += "&gt;";
      else o += c;
    }
    return o;
  };

  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"400\" viewBox=\"0 0 800 400\">\n";
  svg += "<rect width=\"800\" height=\"400\" fill=\"white\"/>\n";
  svg += "<text x=\"400\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">" + escape(title) + "</text>\n";
  svg += "<line x1=\"" + f2(L) + "\" y1=\"" + f2(H - B) + "\" x2=\"" + f2(W - R) + "\" y2=\"" + f2(H - B) + "\" stroke=\"black\"/>\n";
  svg += "<line x1=\"" + f2(L) + "\" y1=\"" + f2(Tm) + "\" x2=\"" + f2(L) + "\" y2=\"" + f2(H - B) + "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = lo + (hi - lo) * k / 4.0;
    svg += "<text x=\"" + f2(L - 6) + "\" y=\"" + f2(py(v) + 4) +
           "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" + f2(v) + "</text>\n";
  }
  for (int y = YearMonth::from_ordinal(first).year; y <= YearMonth::from_ordinal(last).year; ++y) {
    const int o = YearMonth{y, 1}.ordinal();
    if (o < first || o > last || (y % 2 != 0 && last - first > 120)) continue;
    svg += "<text x=\"" + f2(px(o)) + "\" y=\"" + f2(H - B + 16) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" + std::to_string(y) + "</text>\n";
  }
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& [name, s] = series[k];
    const char* colour = palette[k % std::size(palette)];
    std::string pts;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (!std::isfinite(s.values[i])) continue;
      pts += (pts.empty() ? "" : " ") + f2(px(s.period(i).ordinal())) + "," + f2(py(s.values[i]));
    }
    svg += "<polyline fill=\"none\" stroke=\"" + std::string(colour) + "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
    const double ly = Tm + 14.0 * static_cast<double>(k);
    svg += "<line x1=\"" + f2(W - R - 150) + "\" y1=\"" + f2(ly) + "\" x2=\"" + f2(W - R - 130) + "\" y2=\"" + f2(ly) +
           "\" stroke=\"" + colour + "\" stroke-width=\"2\"/>\n";
    svg += "<text x=\"" + f2(W - R - 125) + "\" y=\"" + f2(ly + 4) + "\" font-family=\"sans-serif\" font-size=\"11\">" +
           escape(name) + "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

// ---------------------------------------------------------------------------
// Data loading from a config
// ---------------------------------------------------------------------------

inline Vocabulary load_vocabulary(const PipelineConfig& cfg) {
  if (cfg.data.vocabulary.empty()) return builtin_vocabulary();
  return parse_vocabulary(read_file(cfg.resolve(cfg.data.vocabulary).string()));
}

inline TermPanel load_panel(const PipelineConfig& cfg, const Vocabulary& vocab) {
  return parse_panel(read_file(cfg.resolve(cfg.data.panel).string()), &vocab);
}

inline TimeSeries load_macro(const PipelineConfig& cfg, const std::string& name) {
  return parse_time_series(read_file((cfg.resolve(cfg.data.macro_dir) / (name + ".csv")).string()));
}

/// Everything `evaluate` produces.
struct Evaluation {
  StageOneResult stage_one;
  std::map<std::string, IndicatorSeries> itacs;
  FoldPlan folds;
  EvalReport report;
};

/// Runs both stages as configured: stage one on the fitting range, category
/// indices with `cfg.evaluate.method`, then stage two.
inline Evaluation run_evaluation(const PipelineConfig& cfg, std::uint64_t seed) {
  const Vocabulary vocab = load_vocabulary(cfg);
  const TermPanel panel = load_panel(cfg, vocab);
  const TimeSeries target = load_macro(cfg, cfg.data.target);
  const TimeSeries stage_target = load_macro(cfg, cfg.data.stage_one_target);
  std::vector<NamedSeries> candidates;
  for (const auto& n : cfg.data.stage_one_candidates) candidates.emplace_back(n, load_macro(cfg, n));

  Evaluation ev;
  ev.itacs = build_category_itacs(panel, vocab, cfg.evaluate.variant, cfg.evaluate.method, cfg, target, seed);
  MonthRange span = MonthRange::intersect(detail::common_span(candidates), target.span());
  span = MonthRange::intersect(span, stage_target.span());
  for (const auto& [cat, s] : ev.itacs) span = MonthRange::intersect(span, s.span());
  ev.folds = make_folds(span, cfg.plan);
  ev.stage_one = stage_one_fit(candidates, stage_target, ev.folds.fitting());
  ev.report = stage_two_forecast(ev.stage_one.xbeta, ev.itacs, target, ev.folds, stage_two_options(cfg, seed));
  return ev;
}

}  // namespace itac
