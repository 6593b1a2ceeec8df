#pragma once

// Variable selection: OLS, greedy stepwise search, and a spike-and-slab
// (point-mass spike, Zellner g-prior slab) Gibbs sampler for inclusion ranking.

#include <Eigen/QR>

#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "itac/core.hpp"
#include "itac/random.hpp"

namespace itac {

inline std::vector<std::string> default_names(Eigen::Index p) {
  std::vector<std::string> n;
  for (Eigen::Index j = 0; j < p; ++j) n.push_back("x" + std::to_string(j + 1));
  return n;
}

struct OlsModel {
  Vector coefficients;  // intercept first
  double residual_variance = 0.0;
  double r2 = 0.0;
  double rss = 0.0;
  Eigen::Index observations = 0;
  std::vector<std::string> included;

  Eigen::Index regressors() const { return coefficients.size() - 1; }

  Vector predict(const Matrix& X) const {
    if (X.cols() != regressors()) throw ShapeError("regressor count does not match model");
    return (X * coefficients.tail(regressors())).array() + coefficients(0);
  }
};

namespace detail {

inline Matrix with_intercept(const Matrix& X) {
  Matrix D(X.rows(), X.cols() + 1);
  D.col(0).setOnes();
  D.rightCols(X.cols()) = X;
  return D;
}

/// Names of the columns involved in linear dependencies of `D`.
inline std::vector<std::string> collinear_columns(const Matrix& D, const Eigen::ColPivHouseholderQR<Matrix>& qr,
                                                  const std::vector<std::string>& names) {
  const Eigen::Index rank = qr.rank();
  const auto& perm = qr.colsPermutation().indices();
  std::vector<Eigen::Index> basis(perm.data(), perm.data() + rank);
  Matrix B(D.rows(), rank);
  for (Eigen::Index k = 0; k < rank; ++k) B.col(k) = D.col(basis[static_cast<std::size_t>(k)]);
  Eigen::ColPivHouseholderQR<Matrix> bqr(B);
  std::vector<bool> flagged(static_cast<std::size_t>(D.cols()), false);
  for (Eigen::Index k = rank; k < D.cols(); ++k) {
    const Eigen::Index j = perm(k);
    flagged[static_cast<std::size_t>(j)] = true;
    const Vector c = bqr.solve(Vector(D.col(j)));
    const double scale = std::max(1.0, c.cwiseAbs().maxCoeff());
    for (Eigen::Index m = 0; m < rank; ++m)
      if (std::abs(c(m)) > 1e-8 * scale) flagged[static_cast<std::size_t>(basis[static_cast<std::size_t>(m)])] = true;
  }
  std::vector<std::string> out;
  for (std::size_t j = 0; j < flagged.size(); ++j)
    if (flagged[j]) out.push_back(j == 0 ? std::string("(intercept)") : names[j - 1]);
  return out;
}

}  // namespace detail

/// Least squares with an intercept via column-pivoted Householder QR.
inline OlsModel ols_fit(const Matrix& X, const Vector& y, std::vector<std::string> names = {}) {
  const Eigen::Index T = X.rows(), p = X.cols();
  if (names.empty()) names = default_names(p);
  if (static_cast<Eigen::Index>(names.size()) != p) throw ShapeError("name count does not match column count");
  if (y.size() != T) throw ShapeError("target length does not match design rows");
  if (T <= p + 1) throw LengthError("OLS needs more observations than parameters");
  if (!X.allFinite() || !y.allFinite()) throw NumericError("OLS input contains non-finite values");

  const Matrix D = detail::with_intercept(X);
  Eigen::ColPivHouseholderQR<Matrix> qr(D);
  qr.setThreshold(1e-10);
  if (qr.rank() < D.cols()) throw SingularError(detail::collinear_columns(D, qr, names));

  OlsModel m;
  m.coefficients = qr.solve(y);
  const Vector resid = y - D * m.coefficients;
  m.rss = resid.squaredNorm();
  m.observations = T;
  m.residual_variance = m.rss / static_cast<double>(T - p - 1);
  const double tss = (y.array() - y.mean()).square().sum();
  m.r2 = tss > 0.0 ? 1.0 - m.rss / tss : (m.rss == 0.0 ? 1.0 : 0.0);
  m.included = std::move(names);
  return m;
}

inline Matrix select_columns(const Matrix& X, const std::vector<std::size_t>& cols) {
  Matrix out(X.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = X.col(static_cast<Eigen::Index>(cols[k]));
  return out;
}

// ---------------------------------------------------------------------------
// Stepwise
// ---------------------------------------------------------------------------

enum class Direction { forward, backward, bidirectional };
enum class Criterion { aic, bic, mse_cv };

inline Direction parse_direction(std::string_view s) {
  if (s == "forward") return Direction::forward;
  if (s == "backward") return Direction::backward;
  if (s == "bidirectional") return Direction::bidirectional;
  throw ConfigError("unknown stepwise direction '" + std::string(s) + "'");
}
inline Criterion parse_criterion(std::string_view s) {
  if (s == "aic") return Criterion::aic;
  if (s == "bic") return Criterion::bic;
  if (s == "mse-cv" || s == "mse_cv") return Criterion::mse_cv;
  throw ConfigError("unknown selection criterion '" + std::string(s) + "'");
}
inline std::string_view to_string(Direction d) {
  return d == Direction::forward ? "forward" : d == Direction::backward ? "backward" : "bidirectional";
}
inline std::string_view to_string(Criterion c) {
  return c == Criterion::aic ? "aic" : c == Criterion::bic ? "bic" : "mse-cv";
}

struct SelectionStep {
  bool add = true;
  std::string variable;
  double criterion = 0.0;  // value after the move
};

struct SelectionTrace {
  Direction direction = Direction::bidirectional;
  Criterion criterion = Criterion::bic;
  double initial_criterion = 0.0;
  std::vector<SelectionStep> steps;
  std::vector<std::size_t> selected;  // column indices, ascending
  OlsModel final;
};

inline constexpr int kStepwiseCvFolds = 5;

/// Criterion value of the model using `cols` (intercept always included).
/// Rank-deficient candidate sets score +inf.
inline double selection_criterion(const Matrix& X, const Vector& y, const std::vector<std::size_t>& cols,
                                  Criterion crit) {
  const Eigen::Index T = X.rows();
  const double Td = static_cast<double>(T);
  const auto k = static_cast<double>(cols.size() + 1);
  try {
    if (crit == Criterion::mse_cv) {
      // Contiguous K-fold cross-validated MSE.
      double sse = 0.0;
      const Matrix Xs = select_columns(X, cols);
      for (int f = 0; f < kStepwiseCvFolds; ++f) {
        const Eigen::Index lo = T * f / kStepwiseCvFolds, hi = T * (f + 1) / kStepwiseCvFolds;
        const Eigen::Index ntr = T - (hi - lo);
        Matrix Xtr(ntr, Xs.cols());
        Vector ytr(ntr);
        Xtr << Xs.topRows(lo), Xs.bottomRows(T - hi);
        ytr << y.head(lo), y.tail(T - hi);
        const OlsModel m = ols_fit(Xtr, ytr);
        sse += (m.predict(Xs.middleRows(lo, hi - lo)) - y.segment(lo, hi - lo)).squaredNorm();
      }
      return sse / Td;
    }
    const double rss = cols.empty() ? (y.array() - y.mean()).square().sum() : ols_fit(select_columns(X, cols), y).rss;
    const double penalty = crit == Criterion::aic ? 2.0 : std::log(Td);
    return Td * std::log(std::max(rss, std::numeric_limits<double>::min()) / Td) + penalty * k;
  } catch (const SingularError&) {
    return std::numeric_limits<double>::infinity();
  } catch (const LengthError&) {
    return std::numeric_limits<double>::infinity();
  }
}

/// Greedy single-variable moves while the criterion strictly improves. Among
/// equally good moves the lowest column index wins.
inline SelectionTrace stepwise_select(const Matrix& X, const Vector& y, Direction dir = Direction::bidirectional,
                                      Criterion crit = Criterion::bic, std::vector<std::string> names = {}) {
  const Eigen::Index p = X.cols();
  if (p < 1) throw ShapeError("stepwise selection needs at least one candidate");
  if (X.rows() <= 3) throw LengthError("stepwise selection needs more than 3 observations");
  if (names.empty()) names = default_names(p);

  SelectionTrace tr;
  tr.direction = dir;
  tr.criterion = crit;
  std::vector<bool> in(static_cast<std::size_t>(p), dir == Direction::backward);
  auto current = [&] {
    std::vector<std::size_t> c;
    for (std::size_t j = 0; j < in.size(); ++j)
      if (in[j]) c.push_back(j);
    return c;
  };
  if (dir == Direction::backward) ols_fit(X, y, names);  // surfaces SingularError for the full model
  double best = selection_criterion(X, y, current(), crit);
  tr.initial_criterion = best;

  while (true) {
    std::optional<std::size_t> move;
    double move_value = best;
    for (std::size_t j = 0; j < in.size(); ++j) {
      const bool adding = !in[j];
      if (adding && dir == Direction::backward) continue;
      if (!adding && dir == Direction::forward) continue;
      in[j] = adding;
      const double v = selection_criterion(X, y, current(), crit);
      in[j] = !adding;
      if (v < move_value) {
        move_value = v;
        move = j;
      }
    }
    if (!move) break;
    in[*move] = !in[*move];
    best = move_value;
    tr.steps.push_back({in[*move], names[*move], move_value});
  }
  tr.selected = current();
  std::vector<std::string> sel_names;
  for (auto j : tr.selected) sel_names.push_back(names[j]);
  if (tr.selected.empty()) {
    tr.final.coefficients = Vector::Constant(1, y.mean());
    tr.final.rss = (y.array() - y.mean()).square().sum();
    tr.final.observations = X.rows();
    tr.final.residual_variance = tr.final.rss / static_cast<double>(X.rows() - 1);
    tr.final.r2 = 0.0;
  } else {
    tr.final = ols_fit(select_columns(X, tr.selected), y, sel_names);
  }
  return tr;
}

/// Replays the add/remove steps from the trace's starting model and refits.
inline OlsModel replay_trace(const Matrix& X, const Vector& y, const SelectionTrace& tr,
                             std::vector<std::string> names = {}) {
  if (names.empty()) names = default_names(X.cols());
  std::vector<bool> in(names.size(), tr.direction == Direction::backward);
  for (const auto& s : tr.steps) {
    auto it = std::find(names.begin(), names.end(), s.variable);
    if (it == names.end()) throw Error("trace names unknown variable '" + s.variable + "'");
    in[static_cast<std::size_t>(it - names.begin())] = s.add;
  }
  std::vector<std::size_t> cols;
  std::vector<std::string> sel;
  for (std::size_t j = 0; j < in.size(); ++j)
    if (in[j]) {
      cols.push_back(j);
      sel.push_back(names[j]);
    }
  if (cols.empty()) {
    OlsModel m;
    m.coefficients = Vector::Constant(1, y.mean());
    return m;
  }
  return ols_fit(select_columns(X, cols), y, sel);
}

// ---------------------------------------------------------------------------
// Spike-and-slab inclusion ranking
// ---------------------------------------------------------------------------

struct McmcConfig {
  int draws = 5000;
  int burn_in = 1000;
  double prior_inclusion = 0.5;
  /// Zellner g; nonpositive selects g = T (unit information).
  double g = 0.0;
};

struct InclusionRanking {
  std::vector<std::string> names;
  std::vector<double> probabilities;  // posterior inclusion frequency per column
  int draws = 0;
  int burn_in = 0;
  std::uint64_t seed = 0;
  std::vector<double> split_rhat;  // per coefficient; NaN where the chain never moved
  std::vector<std::string> warnings;

  /// Column indices by descending probability; ties keep column order.
  std::vector<std::size_t> order() const {
    std::vector<std::size_t> idx(probabilities.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return probabilities[a] > probabilities[b]; });
    return idx;
  }
};

/// Split-R̂ of one chain (first half vs second half); NaN when both halves are constant.
inline double split_rhat(const std::vector<double>& chain) {
  const std::size_t n = chain.size() / 2;
  if (n < 2) return std::nan("");
  auto stats = [&](std::size_t off, double& mean, double& var) {
    mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += chain[off + i];
    mean /= static_cast<double>(n);
    var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (chain[off + i] - mean) * (chain[off + i] - mean);
    var /= static_cast<double>(n - 1);
  };
  double m1, v1, m2, v2;
  stats(0, m1, v1);
  stats(n, m2, v2);
  const double W = 0.5 * (v1 + v2);
  if (W <= 0.0) return std::nan("");
  const double mm = 0.5 * (m1 + m2);
  const double B = static_cast<double>(n) * ((m1 - mm) * (m1 - mm) + (m2 - mm) * (m2 - mm));
  const double var_plus = (static_cast<double>(n) - 1.0) / static_cast<double>(n) * W + B / static_cast<double>(n);
  return std::sqrt(var_plus / W);
}

inline constexpr double kRhatWarning = 1.2;

/// Collapsed Gibbs sampler over inclusion indicators for
///   y = α + Xβ + ε,  β_γ | σ² ~ N(0, g σ² (X_γ'X_γ)⁻¹),  γ_j ~ Bernoulli(π),
/// flat prior on α and p(σ²) ∝ 1/σ². Coefficients are drawn each sweep from
/// their conditional posterior for the convergence diagnostic.
inline InclusionRanking spike_slab_rank(const Matrix& X, const Vector& y, const McmcConfig& cfg, std::uint64_t seed,
                                        std::vector<std::string> names = {}) {
  const Eigen::Index T = X.rows(), p = X.cols();
  if (cfg.draws < 1000) throw ConfigError("spike-and-slab needs at least 1000 draws");
  if (cfg.burn_in < 0) throw ConfigError("burn_in must be nonnegative");
  if (!(cfg.prior_inclusion >= 0.0 && cfg.prior_inclusion <= 1.0)) throw ConfigError("prior_inclusion must lie in [0,1]");
  if (y.size() != T) throw ShapeError("target length does not match design rows");
  if (T < 3) throw LengthError("spike-and-slab needs at least 3 observations");
  if (names.empty()) names = default_names(p);

  InclusionRanking out;
  out.names = names;
  out.draws = cfg.draws;
  out.burn_in = cfg.burn_in;
  out.seed = seed;

  const Matrix Xc = X.rowwise() - X.colwise().mean();
  const Vector yc = y.array() - y.mean();
  const Matrix XtX = Xc.transpose() * Xc;
  const Vector Xty = Xc.transpose() * yc;
  const double yty = yc.squaredNorm();
  const double g = cfg.g > 0.0 ? cfg.g : static_cast<double>(T);
  const double n1 = static_cast<double>(T - 1);

  // Posterior mean direction and explained sum of squares for a given inclusion set.
  struct Fit {
    bool ok = false;
    double ess = 0.0;
    Vector beta_hat;
    Matrix chol_inv;  // (X_γ'X_γ)⁻¹
  };
  auto fit = [&](const std::vector<std::size_t>& cols, bool need_inverse) {
    Fit f;
    if (cols.empty()) {
      f.ok = true;
      return f;
    }
    const auto k = static_cast<Eigen::Index>(cols.size());
    Matrix G(k, k);
    Vector b(k);
    for (Eigen::Index a = 0; a < k; ++a) {
      b(a) = Xty(static_cast<Eigen::Index>(cols[static_cast<std::size_t>(a)]));
      for (Eigen::Index c = 0; c < k; ++c)
        G(a, c) = XtX(static_cast<Eigen::Index>(cols[static_cast<std::size_t>(a)]), static_cast<Eigen::Index>(cols[static_cast<std::size_t>(c)]));
    }
    Eigen::LLT<Matrix> llt(G);
    if (llt.info() != Eigen::Success) return f;
    const Matrix L = llt.matrixL();
    if (L.diagonal().minCoeff() <= 1e-10 * std::sqrt(G.diagonal().maxCoeff())) return f;
    f.beta_hat = llt.solve(b);
    f.ess = b.dot(f.beta_hat);
    if (need_inverse) f.chol_inv = llt.solve(Matrix::Identity(k, k));
    f.ok = true;
    return f;
  };
  auto log_marginal = [&](const std::vector<std::size_t>& cols) {
    const Fit f = fit(cols, false);
    if (!f.ok) return -std::numeric_limits<double>::infinity();
    const double r2 = yty > 0.0 ? std::min(f.ess / yty, 1.0) : 0.0;
    const double k = static_cast<double>(cols.size());
    return 0.5 * (n1 - k) * std::log1p(g) - 0.5 * n1 * std::log1p(g * (1.0 - r2));
  };

  std::vector<bool> gamma(static_cast<std::size_t>(p), false);
  if (cfg.prior_inclusion >= 1.0) gamma.assign(static_cast<std::size_t>(p), true);
  auto included = [&] {
    std::vector<std::size_t> c;
    for (std::size_t j = 0; j < gamma.size(); ++j)
      if (gamma[j]) c.push_back(j);
    return c;
  };

  Rng rng(seed);
  std::vector<double> counts(static_cast<std::size_t>(p), 0.0);
  std::vector<std::vector<double>> coef_chain(static_cast<std::size_t>(p));
  const double prior_logit = cfg.prior_inclusion <= 0.0   ? -std::numeric_limits<double>::infinity()
                             : cfg.prior_inclusion >= 1.0 ? std::numeric_limits<double>::infinity()
                                                          : std::log(cfg.prior_inclusion / (1.0 - cfg.prior_inclusion));
  const bool degenerate = !std::isfinite(prior_logit);

  for (int it = 0; it < cfg.burn_in + cfg.draws; ++it) {
    if (!degenerate) {
      for (std::size_t j = 0; j < gamma.size(); ++j) {
        gamma[j] = true;
        const double l1 = log_marginal(included());
        gamma[j] = false;
        const double l0 = log_marginal(included());
        double log_odds = prior_logit + l1 - l0;
        if (std::isnan(log_odds)) log_odds = -std::numeric_limits<double>::infinity();
        const double prob = log_odds > 0 ? 1.0 / (1.0 + std::exp(-log_odds)) : std::exp(log_odds) / (1.0 + std::exp(log_odds));
        gamma[j] = rng.uniform() < prob;
      }
    }
    // σ² and β | γ, y
    const auto cols = included();
    const Fit f = fit(cols, true);
    std::vector<double> beta(static_cast<std::size_t>(p), 0.0);
    if (f.ok && !cols.empty()) {
      const double shrink = g / (1.0 + g);
      const double ssr = std::max(yty - shrink * f.ess, 1e-300);
      const double sigma2 = (0.5 * ssr) / rng.gamma(0.5 * n1);
      Eigen::LLT<Matrix> cov_llt(f.chol_inv * (sigma2 * shrink));
      Vector z(static_cast<Eigen::Index>(cols.size()));
      for (Eigen::Index a = 0; a < z.size(); ++a) z(a) = rng.normal();
      const Vector draw = shrink * f.beta_hat + Matrix(cov_llt.matrixL()) * z;
      for (std::size_t a = 0; a < cols.size(); ++a) beta[cols[a]] = draw(static_cast<Eigen::Index>(a));
    }
    if (it < cfg.burn_in) continue;
    for (std::size_t j = 0; j < gamma.size(); ++j) {
      if (gamma[j]) counts[j] += 1.0;
      coef_chain[j].push_back(beta[j]);
    }
  }

  for (std::size_t j = 0; j < counts.size(); ++j) {
    out.probabilities.push_back(counts[j] / static_cast<double>(cfg.draws));
    const double rh = split_rhat(coef_chain[j]);
    out.split_rhat.push_back(rh);
    if (std::isfinite(rh) && rh > kRhatWarning)
      out.warnings.push_back("ConvergenceWarning: split-Rhat " + std::to_string(rh) + " for " + names[j]);
  }
  return out;
}

}  // namespace itac
