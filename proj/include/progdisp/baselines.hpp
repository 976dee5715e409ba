#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dataset.hpp"
#include "errors.hpp"
#include "stats.hpp"

namespace progdisp {

// Missing cells in baseline inputs are NaN.
inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

/// Column means over observed (non-NaN) cells; an all-missing column gets 0.
inline Eigen::VectorXd observed_column_means(const Eigen::MatrixXd& X) {
  Eigen::VectorXd m = Eigen::VectorXd::Zero(X.cols());
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    double s = 0.0;
    long n = 0;
    for (Eigen::Index i = 0; i < X.rows(); ++i)
      if (!std::isnan(X(i, j))) {
        s += X(i, j);
        ++n;
      }
    m(j) = n > 0 ? s / static_cast<double>(n) : 0.0;
  }
  return m;
}

inline Eigen::MatrixXd impute_with(const Eigen::MatrixXd& X, const Eigen::VectorXd& fill) {
  Eigen::MatrixXd out = X;
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    for (Eigen::Index j = 0; j < X.cols(); ++j)
      if (std::isnan(out(i, j))) out(i, j) = fill(j);
  return out;
}

// ---------------------------------------------------------------------------
// Principal component analysis

struct PcaModel {
  Eigen::VectorXd means;
  Eigen::MatrixXd components;  ///< p x k', orthonormal columns; k' <= k
  Eigen::VectorXd variances;   ///< eigenvalue of each kept component
};

/// Mean-imputes, centers and keeps the top-k eigenvectors of the sample
/// covariance. Directions with (numerically) zero variance are dropped.
inline PcaModel pca_fit(const Eigen::MatrixXd& X, int k) {
  if (X.rows() < 2) throw ConfigError("pca: need at least two rows");
  if (k < 1 || k > X.cols()) throw ConfigError("pca: k must lie in [1, p]");
  PcaModel m;
  m.means = observed_column_means(X);
  const Eigen::MatrixXd Xc = impute_with(X, m.means).rowwise() - m.means.transpose();
  const Eigen::MatrixXd cov = (Xc.transpose() * Xc) / static_cast<double>(X.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  const Eigen::VectorXd& ev = es.eigenvalues();  // ascending
  const double top = std::max(ev(ev.size() - 1), 0.0);
  const double tol = 1e-12 * std::max(top, cov.diagonal().cwiseAbs().maxCoeff());
  std::vector<Eigen::Index> keep;
  for (int c = 0; c < k; ++c) {
    const Eigen::Index idx = ev.size() - 1 - c;
    if (ev(idx) > tol && ev(idx) > 0.0) keep.push_back(idx);
  }
  m.components.resize(X.cols(), static_cast<Eigen::Index>(keep.size()));
  m.variances.resize(static_cast<Eigen::Index>(keep.size()));
  for (std::size_t c = 0; c < keep.size(); ++c) {
    m.components.col(static_cast<Eigen::Index>(c)) = es.eigenvectors().col(keep[c]);
    m.variances(static_cast<Eigen::Index>(c)) = ev(keep[c]);
  }
  return m;
}

inline Eigen::MatrixXd pca_reconstruct(const PcaModel& m, const Eigen::MatrixXd& X) {
  const Eigen::MatrixXd Xc = impute_with(X, m.means).rowwise() - m.means.transpose();
  Eigen::MatrixXd out = Xc * m.components * m.components.transpose();
  out.rowwise() += m.means.transpose();
  return out;
}

// ---------------------------------------------------------------------------
// Factor analysis

struct FaModel {
  Eigen::VectorXd means;
  Eigen::MatrixXd loadings;      ///< p x k
  Eigen::VectorXd uniquenesses;  ///< length p, strictly positive
  std::vector<double> log_likelihood;  ///< after every EM iteration
  int iterations = 0;
  bool converged = false;
  std::string warning;
};

namespace detail {

inline double fa_log_likelihood(const Eigen::MatrixXd& S, const Eigen::MatrixXd& L, const Eigen::VectorXd& u,
                                double n) {
  Eigen::MatrixXd sigma = L * L.transpose();
  sigma.diagonal() += u;
  const Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double trace = llt.solve(S).trace();
  return -0.5 * n * (static_cast<double>(S.rows()) * kLog2Pi + log_det + trace);
}

}  // namespace detail

/// Maximum-likelihood factor analysis by EM on mean-imputed data. Stops when
/// the relative log-likelihood change drops below `tol` or after
/// `max_iter` iterations (then `warning` is set).
inline FaModel fa_fit(const Eigen::MatrixXd& X, int k, int max_iter = 1000, double tol = 1e-8) {
  if (X.rows() < 2) throw ConfigError("fa: need at least two rows");
  if (k < 1 || k > X.cols()) throw ConfigError("fa: k must lie in [1, p]");
  const double n = static_cast<double>(X.rows());
  const Eigen::Index p = X.cols();
  FaModel m;
  m.means = observed_column_means(X);
  const Eigen::MatrixXd Xc = impute_with(X, m.means).rowwise() - m.means.transpose();
  const Eigen::MatrixXd S = (Xc.transpose() * Xc) / n;
  const Eigen::VectorXd floor = (S.diagonal().array() * 1e-9).max(1e-12).matrix();

  // Start from the leading principal directions.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
  Eigen::MatrixXd L(p, k);
  for (int c = 0; c < k; ++c) {
    const Eigen::Index idx = p - 1 - c;
    L.col(c) = es.eigenvectors().col(idx) * std::sqrt(std::max(0.5 * es.eigenvalues()(idx), 1e-6));
  }
  Eigen::VectorXd u = (S.diagonal() - (L * L.transpose()).diagonal()).cwiseMax(floor);
  u = u.cwiseMax(0.1 * S.diagonal()).cwiseMax(floor);

  double ll_prev = detail::fa_log_likelihood(S, L, u, n);
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(k, k);
  for (int it = 1; it <= max_iter; ++it) {
    // E-step through the k x k system: beta = L^T Sigma^{-1}.
    const Eigen::MatrixXd Ut = L.transpose() * u.cwiseInverse().asDiagonal();
    const Eigen::MatrixXd G = (I + Ut * L).inverse();
    const Eigen::MatrixXd beta = G * Ut;
    const Eigen::MatrixXd SB = S * beta.transpose();
    const Eigen::MatrixXd Ezz = G + beta * SB;
    // M-step.
    L = SB * Ezz.inverse();
    u = (S.diagonal() - (L * SB.transpose()).diagonal()).cwiseMax(floor);

    const double ll = detail::fa_log_likelihood(S, L, u, n);
    m.log_likelihood.push_back(ll);
    m.iterations = it;
    if (std::abs(ll - ll_prev) <= tol * std::abs(ll_prev)) {
      m.converged = true;
      break;
    }
    ll_prev = ll;
  }
  if (!m.converged) m.warning = "fa: EM stopped after " + std::to_string(m.iterations) + " iterations";
  m.loadings = L;
  m.uniquenesses = u;
  return m;
}

/// Posterior factor means E[f | x] for each row.
inline Eigen::MatrixXd fa_scores(const FaModel& m, const Eigen::MatrixXd& X) {
  const Eigen::MatrixXd Xc = impute_with(X, m.means).rowwise() - m.means.transpose();
  const auto k = m.loadings.cols();
  const Eigen::MatrixXd Ut = m.loadings.transpose() * m.uniquenesses.cwiseInverse().asDiagonal();
  const Eigen::MatrixXd G = (Eigen::MatrixXd::Identity(k, k) + Ut * m.loadings).inverse();
  return Xc * (G * Ut).transpose();
}

inline Eigen::MatrixXd fa_reconstruct(const FaModel& m, const Eigen::MatrixXd& X) {
  Eigen::MatrixXd out = fa_scores(m, X) * m.loadings.transpose();
  out.rowwise() += m.means.transpose();
  return out;
}

// ---------------------------------------------------------------------------
// Baseline inputs from a dataset

/// One row per visit among each patient's first `max_visits` visits; d
/// columns, NaN where unobserved.
inline Eigen::MatrixXd visit_matrix(const Dataset& data, std::size_t max_visits = 3) {
  std::vector<std::pair<std::size_t, std::size_t>> rows;
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::size_t seen = 0;
    const auto& rec = data.patients[i];
    for (std::size_t t = 0; t < rec.horizon() && seen < max_visits; ++t)
      if (rec.visit(t)) {
        rows.emplace_back(i, t);
        ++seen;
      }
  }
  const auto d = static_cast<std::size_t>(data.d);
  Eigen::MatrixXd X(static_cast<Eigen::Index>(rows.size()), data.d);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& rec = data.patients[rows[r].first];
    for (std::size_t j = 0; j < d; ++j)
      X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) =
          rec.is_observed(rows[r].second, j) ? rec.x(rows[r].second, j) : kMissing;
  }
  return X;
}

/// One row per patient with at least three visits: the features of the
/// first three visits concatenated (3d columns).
inline Eigen::MatrixXd patient_matrix(const Dataset& data) {
  const auto d = static_cast<std::size_t>(data.d);
  std::vector<std::vector<double>> rows;
  for (const auto& rec : data.patients) {
    std::vector<double> row;
    for (std::size_t t = 0; t < rec.horizon() && row.size() < 3 * d; ++t)
      if (rec.visit(t))
        for (std::size_t j = 0; j < d; ++j) row.push_back(rec.is_observed(t, j) ? rec.x(t, j) : kMissing);
    if (row.size() == 3 * d) rows.push_back(std::move(row));
  }
  Eigen::MatrixXd X(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(3 * d));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < 3 * d; ++c) X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  return X;
}

// ---------------------------------------------------------------------------
// Trajectory forecasting baselines

enum class TrajectoryMethod { Linear, Quadratic, Latest };

inline const char* to_string(TrajectoryMethod m) {
  switch (m) {
    case TrajectoryMethod::Linear: return "linear";
    case TrajectoryMethod::Quadratic: return "quadratic";
    case TrajectoryMethod::Latest: return "latest";
  }
  return "?";
}

/// Least-squares polynomial coefficients (constant term first).
inline Eigen::VectorXd fit_polynomial(std::span<const double> t, std::span<const double> y, int degree) {
  if (t.size() != y.size() || t.size() < static_cast<std::size_t>(degree + 1))
    throw ConfigError("fit_polynomial: not enough points for the requested degree");
  Eigen::MatrixXd A(static_cast<Eigen::Index>(t.size()), degree + 1);
  Eigen::VectorXd b(static_cast<Eigen::Index>(t.size()));
  for (std::size_t i = 0; i < t.size(); ++i) {
    double pw = 1.0;
    for (int c = 0; c <= degree; ++c) {
      A(static_cast<Eigen::Index>(i), c) = pw;
      pw *= t[i];
    }
    b(static_cast<Eigen::Index>(i)) = y[i];
  }
  return A.completeOrthogonalDecomposition().solve(b);
}

struct CellPrediction {
  std::size_t patient = 0;
  std::size_t t = 0;
  std::size_t feature = 0;
  double predicted = 0.0;
  double actual = 0.0;
};

/**
 * Per-patient, per-feature forecasts. Observations at normalized time below
 * `train_window` are training data; every observed cell at or after it is
 * predicted. Too few training points fall back to the feature's training
 * mean over all patients; Linear and Quadratic forecasts are clipped to the
 * feature's training range.
 */
inline std::vector<CellPrediction> trajectory_baselines(const Dataset& data, double train_window,
                                                        TrajectoryMethod method) {
  if (!(train_window > 0.0)) throw ConfigError("trajectory baselines: training window must be positive");
  const auto d = static_cast<std::size_t>(data.d);
  std::vector<double> pop_sum(d, 0.0), lo(d, std::numeric_limits<double>::infinity()),
      hi(d, -std::numeric_limits<double>::infinity());
  std::vector<long> pop_n(d, 0);
  for (const auto& rec : data.patients)
    for (std::size_t t = 0; t < rec.horizon(); ++t) {
      if (static_cast<double>(t) * data.delta >= train_window) break;
      for (std::size_t j = 0; j < d; ++j)
        if (rec.is_observed(t, j)) {
          pop_sum[j] += rec.x(t, j);
          ++pop_n[j];
          lo[j] = std::min(lo[j], rec.x(t, j));
          hi[j] = std::max(hi[j], rec.x(t, j));
        }
    }
  for (std::size_t j = 0; j < d; ++j)
    if (pop_n[j] == 0) throw ConfigError("trajectory baselines: training window holds no observations of feature " + std::to_string(j));

  const int min_points = method == TrajectoryMethod::Quadratic ? 3 : (method == TrajectoryMethod::Linear ? 2 : 1);
  const int degree = method == TrajectoryMethod::Quadratic ? 2 : 1;
  std::vector<CellPrediction> out;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& rec = data.patients[i];
    for (std::size_t j = 0; j < d; ++j) {
      std::vector<double> ts, ys;
      for (std::size_t t = 0; t < rec.horizon(); ++t) {
        const double tau = static_cast<double>(t) * data.delta;
        if (tau >= train_window) break;
        if (rec.is_observed(t, j)) {
          ts.push_back(tau);
          ys.push_back(rec.x(t, j));
        }
      }
      const double pop_mean = pop_sum[j] / static_cast<double>(pop_n[j]);
      std::optional<Eigen::VectorXd> coef;
      if (method != TrajectoryMethod::Latest && static_cast<int>(ts.size()) >= min_points)
        coef = fit_polynomial(ts, ys, degree);
      for (std::size_t t = 0; t < rec.horizon(); ++t) {
        const double tau = static_cast<double>(t) * data.delta;
        if (tau < train_window || !rec.is_observed(t, j)) continue;
        double pred = pop_mean;
        if (method == TrajectoryMethod::Latest) {
          if (!ys.empty()) pred = ys.back();
        } else if (coef) {
          pred = 0.0;
          for (Eigen::Index c = coef->size() - 1; c >= 0; --c) pred = pred * tau + (*coef)(c);
          pred = std::clamp(pred, lo[j], hi[j]);
        }
        out.push_back({i, t, j, pred, rec.x(t, j)});
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scoring

struct MapeResult {
  std::optional<double> value;  ///< percent; empty when nothing was scorable
  std::size_t n_scored = 0;
  std::size_t n_zero_excluded = 0;
};

/// Mean absolute percentage error over cells whose actual value is nonzero.
inline MapeResult mape(std::span<const double> predicted, std::span<const double> actual) {
  if (predicted.size() != actual.size()) throw std::invalid_argument("mape: length mismatch");
  MapeResult r;
  double s = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    if (std::isnan(actual[i]) || std::isnan(predicted[i])) continue;
    if (actual[i] == 0.0) {
      ++r.n_zero_excluded;
      continue;
    }
    s += std::abs(predicted[i] - actual[i]) / std::abs(actual[i]);
    ++r.n_scored;
  }
  if (r.n_scored > 0) r.value = 100.0 * s / static_cast<double>(r.n_scored);
  return r;
}

/// MAPE restricted to the columns in `features` (all when empty).
inline MapeResult mape(const Eigen::MatrixXd& predicted, const Eigen::MatrixXd& actual,
                       const std::vector<std::size_t>& features = {}) {
  if (predicted.rows() != actual.rows() || predicted.cols() != actual.cols())
    throw std::invalid_argument("mape: shape mismatch");
  std::vector<double> p, a;
  for (Eigen::Index j = 0; j < actual.cols(); ++j) {
    if (!features.empty() && std::find(features.begin(), features.end(), static_cast<std::size_t>(j)) == features.end())
      continue;
    for (Eigen::Index i = 0; i < actual.rows(); ++i) {
      p.push_back(predicted(i, j));
      a.push_back(actual(i, j));
    }
  }
  return mape(p, a);
}

/// MAPE of trajectory forecasts restricted to a feature subset (all when empty).
inline MapeResult mape(const std::vector<CellPrediction>& cells, const std::vector<std::size_t>& features = {}) {
  std::vector<double> p, a;
  for (const auto& c : cells) {
    if (!features.empty() && std::find(features.begin(), features.end(), c.feature) == features.end()) continue;
    p.push_back(c.predicted);
    a.push_back(c.actual);
  }
  return mape(p, a);
}

}  // namespace progdisp
