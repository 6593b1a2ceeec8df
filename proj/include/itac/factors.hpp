#pragma once

// Linear index constructions: principal components and a dynamic factor model
// with VAR(1) factors estimated by EM (Kalman smoothing E-step, closed-form
// regression M-step).

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "itac/core.hpp"

namespace itac {

/// Factor or component scores, one row per period.
struct FactorSeries {
  Matrix values;
  std::optional<MonthRange> span;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index factors() const { return values.cols(); }
};

namespace detail {

inline void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw NumericError(std::string(what) + " contains non-finite values");
}

/// Column `j` flipped so its largest-magnitude entry is positive.
inline void orient_columns(Matrix& w) {
  for (Eigen::Index j = 0; j < w.cols(); ++j) {
    Eigen::Index idx = 0;
    w.col(j).cwiseAbs().maxCoeff(&idx);
    if (w(idx, j) < 0.0) w.col(j) = -w.col(j);
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// PCA
// ---------------------------------------------------------------------------

struct PcaOptions {
  /// Correlation PCA: columns scaled to unit sample variance before the decomposition.
  bool standardize = true;
};

struct PcaModel {
  Matrix loadings;     // N × k, orthonormal columns, descending eigenvalue
  Vector eigenvalues;  // k
  Vector means;        // N
  Vector scales;       // N; ones for covariance PCA
  double total_variance = 0.0;
  bool standardized = true;

  Eigen::Index components() const { return loadings.cols(); }
  Eigen::Index width() const { return loadings.rows(); }

  Vector explained_variance_ratio() const {
    if (total_variance <= 0.0) return Vector::Zero(eigenvalues.size());
    return eigenvalues / total_variance;
  }
};

/// Top-k principal directions of the sample covariance (or correlation) of
/// `features`, computed from the thin SVD of the centered data matrix.
inline PcaModel pca_fit(const Matrix& features, Eigen::Index k, const PcaOptions& opt = {}) {
  const Eigen::Index T = features.rows();
  const Eigen::Index N = features.cols();
  if (k < 1 || k > std::min(T - 1, N))
    throw RankError("component count " + std::to_string(k) + " outside [1, min(T-1, N)] = [1, " +
                    std::to_string(std::min(T - 1, N)) + "]");
  detail::require_finite(features, "PCA input");

  PcaModel m;
  m.standardized = opt.standardize;
  m.means = features.colwise().mean().transpose();
  Matrix centered = features.rowwise() - m.means.transpose();
  m.scales = Vector::Ones(N);
  if (opt.standardize) {
    for (Eigen::Index j = 0; j < N; ++j) {
      const double sd = std::sqrt(centered.col(j).squaredNorm() / static_cast<double>(T - 1));
      if (sd > 0.0) m.scales(j) = sd;
    }
    centered = centered.array().rowwise() / m.scales.transpose().array();
  }

  Eigen::BDCSVD<Matrix> svd(centered, Eigen::ComputeThinV);
  const Vector all = svd.singularValues().array().square() / static_cast<double>(T - 1);
  m.total_variance = centered.squaredNorm() / static_cast<double>(T - 1);
  m.eigenvalues = all.head(k);
  m.loadings = svd.matrixV().leftCols(k);
  detail::orient_columns(m.loadings);
  return m;
}

/// Scores Z = ((X - means) / scales) · W.
inline FactorSeries pca_transform(const PcaModel& m, const Matrix& features) {
  if (features.cols() != m.width())
    throw ShapeError("feature width " + std::to_string(features.cols()) + " does not match model width " +
                     std::to_string(m.width()));
  Matrix centered = features.rowwise() - m.means.transpose();
  centered = centered.array().rowwise() / m.scales.transpose().array();
  return {centered * m.loadings, std::nullopt};
}

// ---------------------------------------------------------------------------
// Dynamic factor model
// ---------------------------------------------------------------------------

struct EmConfig {
  int max_iter = 500;
  double tol = 1e-6;
  /// Ridge weight added to the loading regressions of the M-step. Zero keeps
  /// the updates exact maximum-likelihood, so the log-likelihood is monotone.
  double series_length = 0.0;
};

struct DfmModel {
  Matrix loadings;       // Λ, N × r
  Matrix transition;     // A, r × r
  Matrix factor_noise;   // Q, r × r
  Vector idiosyncratic;  // diag(R), N
  Vector means;          // N, subtracted before filtering
  Vector initial_mean;   // r
  Matrix initial_cov;    // r × r
  double log_likelihood = 0.0;
  std::vector<double> loglik_history;
  int iterations = 0;
  bool converged = false;
  double series_length = 0.0;
  std::vector<std::string> warnings;

  Eigen::Index factors() const { return loadings.cols(); }
  Eigen::Index width() const { return loadings.rows(); }
};

inline double spectral_radius(const Matrix& a) {
  if (a.size() == 0) return 0.0;
  Eigen::EigenSolver<Matrix> es(a, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

/// Filtered and smoothed moments of the factor state.
struct KalmanPass {
  Matrix filtered;                 // T × r
  Matrix smoothed;                 // T × r
  std::vector<Matrix> smoothed_cov;  // P_{t|T}
  std::vector<Matrix> lag_cov;       // Cov(f_t, f_{t-1} | Y), t ≥ 1
  double log_likelihood = 0.0;
};

/// Kalman filter and Rauch-Tung-Striebel smoother over demeaned data `y` (T × N).
inline KalmanPass kalman_smooth(const DfmModel& m, const Matrix& y) {
  const Eigen::Index T = y.rows();
  const Eigen::Index N = m.width();
  const Eigen::Index r = m.factors();
  const Matrix& L = m.loadings;
  const Matrix& A = m.transition;

  std::vector<Vector> a_pred(T), a_filt(T);
  std::vector<Matrix> p_pred(T), p_filt(T);
  KalmanPass out;
  out.log_likelihood = 0.0;
  const double log2pi = std::log(2.0 * std::numbers::pi);

  for (Eigen::Index t = 0; t < T; ++t) {
    if (t == 0) {
      a_pred[0] = m.initial_mean;
      p_pred[0] = m.initial_cov;
    } else {
      a_pred[t] = A * a_filt[t - 1];
      p_pred[t] = A * p_filt[t - 1] * A.transpose() + m.factor_noise;
      p_pred[t] = 0.5 * (p_pred[t] + p_pred[t].transpose());
    }
    const Vector v = y.row(t).transpose() - L * a_pred[t];
    const Matrix PLt = p_pred[t] * L.transpose();
    Matrix F = L * PLt;
    F.diagonal() += m.idiosyncratic;
    Eigen::LLT<Matrix> llt(F);
    if (llt.info() != Eigen::Success) throw NumericError("singular innovation covariance at t=" + std::to_string(t));
    const Matrix K = llt.solve(PLt.transpose()).transpose();  // r × N
    a_filt[t] = a_pred[t] + K * v;
    p_filt[t] = p_pred[t] - K * PLt.transpose();
    p_filt[t] = 0.5 * (p_filt[t] + p_filt[t].transpose());
    const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    out.log_likelihood -= 0.5 * (static_cast<double>(N) * log2pi + logdet + v.dot(llt.solve(v)));
  }

  out.filtered.resize(T, r);
  out.smoothed.resize(T, r);
  out.smoothed_cov.assign(T, Matrix());
  out.lag_cov.assign(T, Matrix());
  Vector a_s = a_filt[T - 1];
  Matrix p_s = p_filt[T - 1];
  out.smoothed.row(T - 1) = a_s.transpose();
  out.smoothed_cov[T - 1] = p_s;
  for (Eigen::Index t = T - 2; t >= 0; --t) {
    Eigen::LDLT<Matrix> ldlt(p_pred[t + 1]);
    if (ldlt.info() != Eigen::Success) throw NumericError("singular predicted state covariance");
    const Matrix J = ldlt.solve(A * p_filt[t]).transpose();  // P_{t|t} A' P_{t+1|t}^{-1}
    out.lag_cov[t + 1] = p_s * J.transpose();
    a_s = a_filt[t] + J * (a_s - a_pred[t + 1]);
    p_s = p_filt[t] + J * (p_s - p_pred[t + 1]) * J.transpose();
    p_s = 0.5 * (p_s + p_s.transpose());
    out.smoothed.row(t) = a_s.transpose();
    out.smoothed_cov[t] = p_s;
  }
  for (Eigen::Index t = 0; t < T; ++t) out.filtered.row(t) = a_filt[t].transpose();
  return out;
}

namespace detail {

inline constexpr double kMinIdiosyncraticVariance = 1e-8;

inline void dfm_m_step(DfmModel& m, const Matrix& y, const KalmanPass& ks) {
  const Eigen::Index T = y.rows();
  const Eigen::Index r = m.factors();
  const double Td = static_cast<double>(T);

  Matrix Sff = Matrix::Zero(r, r);  // Σ_t E[f_t f_t']
  for (Eigen::Index t = 0; t < T; ++t)
    Sff += ks.smoothed_cov[t] + ks.smoothed.row(t).transpose() * ks.smoothed.row(t);
  const Matrix Sxf = y.transpose() * ks.smoothed;  // N × r

  // Loadings, row by row; the ridge weight is the `series_length` hyperparameter.
  Matrix G = Sff;
  G.diagonal().array() += m.series_length;
  m.loadings = G.ldlt().solve(Sxf.transpose()).transpose();

  // diag(R): (1/T) Σ_t E[(x_ti - λ_i'f_t)^2]
  for (Eigen::Index i = 0; i < m.width(); ++i) {
    const Vector li = m.loadings.row(i).transpose();
    const double v = (y.col(i).squaredNorm() - 2.0 * li.dot(Sxf.row(i).transpose()) + li.dot(Sff * li)) / Td;
    m.idiosyncratic(i) = std::max(v, kMinIdiosyncraticVariance);
  }

  if (T < 2) return;
  Matrix S11 = Matrix::Zero(r, r), S10 = Matrix::Zero(r, r), S00 = Matrix::Zero(r, r);
  for (Eigen::Index t = 1; t < T; ++t) {
    const Vector ft = ks.smoothed.row(t).transpose();
    const Vector fp = ks.smoothed.row(t - 1).transpose();
    S11 += ks.smoothed_cov[t] + ft * ft.transpose();
    S00 += ks.smoothed_cov[t - 1] + fp * fp.transpose();
    S10 += ks.lag_cov[t] + ft * fp.transpose();
  }
  m.transition = S00.ldlt().solve(S10.transpose()).transpose();
  m.factor_noise = (S11 - m.transition * S10.transpose()) / (Td - 1.0);
  m.factor_noise = 0.5 * (m.factor_noise + m.factor_noise.transpose());
}

}  // namespace detail

/// Maximum-likelihood DFM by EM, initialized from principal components.
/// Non-convergence within `max_iter` is recorded in `warnings`, not thrown.
inline DfmModel dfm_fit(const Matrix& features, Eigen::Index r, const EmConfig& cfg = {}) {
  const Eigen::Index T = features.rows();
  const Eigen::Index N = features.cols();
  if (r < 1 || r > N) throw RankError("factor count " + std::to_string(r) + " outside [1, " + std::to_string(N) + "]");
  if (T < 10 * r) throw LengthError("DFM needs at least 10 observations per factor");
  detail::require_finite(features, "DFM input");

  DfmModel m;
  m.series_length = cfg.series_length;
  m.means = features.colwise().mean().transpose();
  const Matrix y = features.rowwise() - m.means.transpose();

  // PCA initialization on the raw covariance of the demeaned data.
  Eigen::BDCSVD<Matrix> svd(y, Eigen::ComputeThinV);
  m.loadings = svd.matrixV().leftCols(r);
  detail::orient_columns(m.loadings);
  const Matrix f0 = y * m.loadings;
  const Matrix resid = y - f0 * m.loadings.transpose();
  m.idiosyncratic = (resid.colwise().squaredNorm().transpose() / static_cast<double>(T))
                        .cwiseMax(std::max(1e-4 * y.squaredNorm() / static_cast<double>(T * N),
                                           detail::kMinIdiosyncraticVariance));
  const Matrix prev = f0.topRows(T - 1), next = f0.bottomRows(T - 1);
  m.transition = (prev.transpose() * prev).ldlt().solve(prev.transpose() * next).transpose();
  if (const double rho = spectral_radius(m.transition); rho >= 0.99) m.transition *= 0.95 / rho;
  const Matrix u = next - prev * m.transition.transpose();
  m.factor_noise = u.transpose() * u / static_cast<double>(T - 1);
  m.factor_noise.diagonal().array() += 1e-8;
  m.initial_mean = Vector::Zero(r);
  m.initial_cov = Matrix::Zero(r, r);
  m.initial_cov.diagonal() = (f0.transpose() * f0).diagonal() / static_cast<double>(T);
  m.initial_cov.diagonal().array() += 1e-8;

  double prev_ll = -std::numeric_limits<double>::infinity();
  for (int it = 0; it < cfg.max_iter; ++it) {
    const KalmanPass ks = kalman_smooth(m, y);
    if (!std::isfinite(ks.log_likelihood)) throw NumericError("non-finite log-likelihood during EM");
    m.loglik_history.push_back(ks.log_likelihood);
    m.log_likelihood = ks.log_likelihood;
    m.iterations = it + 1;
    if (it > 0) {
      const double change = (ks.log_likelihood - prev_ll) / std::max(1.0, 0.5 * (std::abs(ks.log_likelihood) + std::abs(prev_ll)));
      if (std::abs(change) < cfg.tol) {
        m.converged = true;
        break;
      }
    }
    prev_ll = ks.log_likelihood;
    detail::dfm_m_step(m, y, ks);
  }
  if (!m.converged) {
    const KalmanPass ks = kalman_smooth(m, y);
    m.loglik_history.push_back(ks.log_likelihood);
    m.log_likelihood = ks.log_likelihood;
    m.warnings.push_back("ConvergenceWarning: EM stopped at max_iter=" + std::to_string(cfg.max_iter));
  }
  if (const double rho = spectral_radius(m.transition); rho >= 1.0) {
    m.transition *= 0.99 / rho;
    m.warnings.push_back("transition spectral radius " + std::to_string(rho) + " shrunk to 0.99");
  }
  return m;
}

/// Kalman-smoothed factor means for every row of `features`.
inline FactorSeries dfm_smooth(const DfmModel& m, const Matrix& features) {
  if (features.cols() != m.width())
    throw ShapeError("feature width " + std::to_string(features.cols()) + " does not match model width " +
                     std::to_string(m.width()));
  if (features.rows() == 0) throw LengthError("no observations to smooth");
  const Matrix y = features.rowwise() - m.means.transpose();
  return {kalman_smooth(m, y).smoothed, std::nullopt};
}

/// Filtered (one-sided) factor means.
inline FactorSeries dfm_filter(const DfmModel& m, const Matrix& features) {
  if (features.cols() != m.width()) throw ShapeError("feature width does not match model width");
  const Matrix y = features.rowwise() - m.means.transpose();
  return {kalman_smooth(m, y).filtered, std::nullopt};
}

}  // namespace itac
