#include <cmath>
#include <vector>

#include <Eigen/SVD>
#include <gtest/gtest.h>

#include "progdisp/baselines.hpp"
#include "progdisp/rng.hpp"
#include "progdisp/simulate.hpp"

using namespace progdisp;

namespace {

Eigen::MatrixXd random_matrix(Eigen::Index n, Eigen::Index p, std::uint64_t seed) {
  Rng rng = make_stream(seed, 900, 0);
  Eigen::MatrixXd X(n, p);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < p; ++j) X(i, j) = standard_normal(rng) * (1.0 + static_cast<double>(j)) + 3.0;
  return X;
}

/// One patient per row of `values` (time by feature), visited at every bin.
Dataset grid_dataset(const std::vector<std::vector<std::vector<double>>>& values, double delta) {
  Dataset data;
  data.n_groups = 1;
  data.d = static_cast<int>(values.front().front().size());
  data.delta = delta;
  for (std::size_t i = 0; i < values.size(); ++i) {
    PatientRecord rec("q" + std::to_string(i), GroupId{0, true}, values[i].size(), values[i].front().size());
    for (std::size_t t = 0; t < values[i].size(); ++t) {
      rec.visits[t] = 1;
      for (std::size_t j = 0; j < values[i][t].size(); ++j) rec.set(t, j, values[i][t][j]);
    }
    data.patients.push_back(std::move(rec));
  }
  return data;
}

double max_abs(const Eigen::MatrixXd& A) { return A.cwiseAbs().maxCoeff(); }

}  // namespace

TEST(Pca, RankOneLineIsReconstructedExactly) {
  Eigen::MatrixXd X(6, 3);
  for (int i = 0; i < 6; ++i) X.row(i) << 1.0 + i, 2.0 - 0.5 * i, 4.0 + 2.0 * i;
  const PcaModel m = pca_fit(X, 1);
  EXPECT_LT(max_abs(pca_reconstruct(m, X) - X), 1e-12);
  EXPECT_NEAR(*mape(pca_reconstruct(m, X), X).value, 0.0, 1e-10);
}

TEST(Pca, FullRankReturnsInput) {
  const Eigen::MatrixXd X = random_matrix(20, 4, 1);
  EXPECT_LT(max_abs(pca_reconstruct(pca_fit(X, 4), X) - X), 1e-10);
}

TEST(Pca, MatchesSvdOracle) {
  const Eigen::MatrixXd X = random_matrix(50, 5, 2);
  const Eigen::RowVectorXd mean = X.colwise().mean();
  const Eigen::MatrixXd Xc = X.rowwise() - mean;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(Xc, Eigen::ComputeThinU | Eigen::ComputeThinV);
  for (int k = 1; k <= 4; ++k) {
    const Eigen::MatrixXd V = svd.matrixV().leftCols(k);
    const Eigen::MatrixXd oracle = (Xc * V * V.transpose()).rowwise() + mean;
    EXPECT_LT(max_abs(pca_reconstruct(pca_fit(X, k), X) - oracle), 1e-8) << "k = " << k;
  }
}

TEST(Pca, ErrorIsMonotoneInK) {
  const Eigen::MatrixXd X = random_matrix(40, 6, 3);
  double prev = std::numeric_limits<double>::infinity();
  for (int k = 1; k <= 6; ++k) {
    const double err = (pca_reconstruct(pca_fit(X, k), X) - X).squaredNorm();
    EXPECT_LE(err, prev + 1e-9);
    prev = err;
  }
}

TEST(Pca, ConstantRowsGiveMean) {
  Eigen::MatrixXd X(5, 3);
  for (int i = 0; i < 5; ++i) X.row(i) << 1.0, -2.0, 7.0;
  const PcaModel m = pca_fit(X, 2);
  EXPECT_EQ(m.components.cols(), 0);
  EXPECT_LT(max_abs(pca_reconstruct(m, X) - X), 1e-15);
}

TEST(Pca, MissingCellsAreMeanImputed) {
  Eigen::MatrixXd X(4, 2);
  X << 1.0, 2.0, 3.0, kMissing, 5.0, 6.0, kMissing, 4.0;
  const PcaModel m = pca_fit(X, 1);
  EXPECT_NEAR(m.means(0), 3.0, 1e-12);
  EXPECT_NEAR(m.means(1), 4.0, 1e-12);
  const Eigen::MatrixXd R = pca_reconstruct(m, X);
  EXPECT_TRUE(R.allFinite());
  // Scoring skips the unobserved cells.
  EXPECT_EQ(mape(R, X).n_scored, 6u);
}

TEST(Pca, NoiselessSimulatedVisitsAreOneDimensional) {
  SimConfig cfg;
  cfg.n_patients = 200;
  cfg.n_bins = 20;
  cfg.delta = 0.05;
  cfg.seed = 12;
  Rng rng = make_stream(cfg.seed, streams::kSimParams, 0);
  TrueParams p = draw_true_params(cfg, rng);
  for (double& v : p.shared.psi) v = 0.0;
  const SimulatedCohort c = simulate_dataset(cfg, p);
  const Eigen::MatrixXd V = visit_matrix(c.data, std::numeric_limits<std::size_t>::max());
  EXPECT_LT(*mape(pca_reconstruct(pca_fit(V, 1), V), V).value, 1e-6);
}

TEST(Fa, RecoversOneFactorLoadings) {
  const Eigen::Index n = 10000;
  const Eigen::VectorXd L = (Eigen::VectorXd(4) << 1.5, -0.8, 0.6, 2.0).finished();
  const Eigen::VectorXd u = (Eigen::VectorXd(4) << 0.5, 0.3, 0.8, 0.4).finished();
  Rng rng = make_stream(5, 901, 0);
  Eigen::MatrixXd X(n, 4);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double f = standard_normal(rng);
    for (Eigen::Index j = 0; j < 4; ++j) X(i, j) = 1.0 + L(j) * f + std::sqrt(u(j)) * standard_normal(rng);
  }
  const FaModel m = fa_fit(X, 1);
  ASSERT_TRUE(m.converged) << m.warning;
  const double sign = m.loadings(0, 0) > 0 ? 1.0 : -1.0;
  for (Eigen::Index j = 0; j < 4; ++j) EXPECT_NEAR(sign * m.loadings(j, 0), L(j), 0.05 * std::abs(L(j)));
  for (Eigen::Index j = 0; j < 4; ++j) EXPECT_GT(m.uniquenesses(j), 0.0);

  // At the EM fixed point the diagonal of the implied covariance equals the
  // sample variances; off-diagonals match up to sampling error. The default
  // stopping rule leaves a residual of order 1e-3, so converge tightly here.
  const FaModel tight = fa_fit(X, 1, 100000, 1e-15);
  ASSERT_TRUE(tight.converged);
  const Eigen::MatrixXd Xc = X.rowwise() - X.colwise().mean();
  const Eigen::MatrixXd S = Xc.transpose() * Xc / static_cast<double>(n);
  const Eigen::MatrixXd implied =
      tight.loadings * tight.loadings.transpose() + Eigen::MatrixXd(tight.uniquenesses.asDiagonal());
  for (Eigen::Index j = 0; j < 4; ++j) EXPECT_NEAR(implied(j, j), S(j, j), 1e-5 * S(j, j));
  EXPECT_LT(max_abs(implied - S), 0.05);
}

TEST(Fa, LogLikelihoodNeverDecreases) {
  const FaModel m = fa_fit(random_matrix(200, 5, 7), 2);
  ASSERT_GE(m.log_likelihood.size(), 2u);
  for (std::size_t k = 1; k < m.log_likelihood.size(); ++k)
    EXPECT_GE(m.log_likelihood[k], m.log_likelihood[k - 1] - 1e-9 * std::abs(m.log_likelihood[k - 1]));
}

TEST(Fa, IterationCapWarns) {
  const FaModel m = fa_fit(random_matrix(100, 4, 8), 1, 2);
  EXPECT_FALSE(m.converged);
  EXPECT_EQ(m.iterations, 2);
  EXPECT_NE(m.warning.find("2"), std::string::npos);
}

TEST(Fa, ReconstructionIsFinite) {
  const Eigen::MatrixXd X = random_matrix(60, 4, 9);
  const Eigen::MatrixXd R = fa_reconstruct(fa_fit(X, 1), X);
  EXPECT_TRUE(R.allFinite());
  EXPECT_EQ(R.rows(), X.rows());
}

TEST(Trajectory, NoiselessLinearFeatureIsExact) {
  // Patients with offsets spread so held-out values fall inside the
  // training range, where the clip is inactive.
  std::vector<std::vector<std::vector<double>>> v;
  for (int i = 0; i < 6; ++i) {
    std::vector<std::vector<double>> rows;
    const double slope = (i % 2 == 0) ? 1.0 : -1.0;
    for (int t = 0; t <= 10; ++t) rows.push_back({2.0 * i - 5.0 + slope * 0.1 * t});
    v.push_back(rows);
  }
  const Dataset data = grid_dataset(v, 0.1);
  const auto cells = trajectory_baselines(data, 0.55, TrajectoryMethod::Linear);
  double lo = 1e300, hi = -1e300;
  for (const auto& p : data.patients)
    for (std::size_t t = 0; t <= 5; ++t) {
      lo = std::min(lo, p.x(t, 0));
      hi = std::max(hi, p.x(t, 0));
    }
  int scored = 0;
  for (const auto& c : cells) {
    if (c.actual < lo || c.actual > hi) continue;
    EXPECT_NEAR(c.predicted, c.actual, 1e-10);
    ++scored;
  }
  EXPECT_GT(scored, 10);
  EXPECT_EQ(cells.size(), 6u * 5u);
}

TEST(Trajectory, ConstantFeatureLatestIsExact) {
  std::vector<std::vector<std::vector<double>>> v = {
      std::vector<std::vector<double>>(8, {3.0, -1.0}), std::vector<std::vector<double>>(8, {5.0, 2.0})};
  const auto cells = trajectory_baselines(grid_dataset(v, 0.125), 0.5, TrajectoryMethod::Latest);
  for (const auto& c : cells) EXPECT_EQ(c.predicted, c.actual);
  EXPECT_EQ(*mape(cells).value, 0.0);
}

TEST(Trajectory, QuadraticOnCollinearPointsIsLinear) {
  const std::vector<double> t = {0.0, 0.3, 0.7};
  const std::vector<double> y = {1.0, 1.6, 2.4};
  const Eigen::VectorXd q = fit_polynomial(t, y, 2), l = fit_polynomial(t, y, 1);
  EXPECT_NEAR(q(2), 0.0, 1e-10);
  EXPECT_NEAR(q(0), l(0), 1e-10);
  EXPECT_NEAR(q(1), l(1), 1e-10);
}

TEST(Trajectory, SparseTrainingFallsBackToPopulationMean) {
  Dataset data;
  data.n_groups = 1;
  data.d = 1;
  data.delta = 0.25;
  PatientRecord a("a", GroupId{0, true}, 5, 1), b("b", GroupId{0, true}, 5, 1);
  a.visits = {1, 1, 0, 1, 1};
  a.set(0, 0, 1.0);
  a.set(1, 0, 3.0);
  a.set(3, 0, 4.0);
  a.set(4, 0, 4.0);
  b.visits = {1, 0, 0, 1, 0};  // one training observation
  b.set(0, 0, 8.0);
  b.set(3, 0, 6.0);
  data.patients = {a, b};
  const auto lin = trajectory_baselines(data, 0.5, TrajectoryMethod::Linear);
  const auto quad = trajectory_baselines(data, 0.5, TrajectoryMethod::Quadratic);
  const double pop_mean = (1.0 + 3.0 + 8.0) / 3.0;
  for (const auto& c : lin)
    if (c.patient == 1) {
      EXPECT_DOUBLE_EQ(c.predicted, pop_mean);
    }
  // Two training points are too few for a quadratic.
  for (const auto& c : quad) EXPECT_DOUBLE_EQ(c.predicted, pop_mean);
  // Patient a's line 1 + 8 tau is clipped to the training range [1, 8].
  for (const auto& c : lin)
    if (c.patient == 0) {
      EXPECT_DOUBLE_EQ(c.predicted, std::min(8.0, 1.0 + 8.0 * static_cast<double>(c.t) * 0.25));
    }
}

TEST(Trajectory, ClipIsIdempotentInRange) {
  std::vector<std::vector<std::vector<double>>> v;
  Rng rng = make_stream(3, 902, 0);
  for (int i = 0; i < 10; ++i) {
    std::vector<std::vector<double>> rows;
    for (int t = 0; t < 10; ++t) rows.push_back({10.0 * standard_normal(rng)});
    v.push_back(rows);
  }
  const Dataset data = grid_dataset(v, 0.1);
  const auto cells = trajectory_baselines(data, 0.5, TrajectoryMethod::Linear);
  double lo = 1e300, hi = -1e300;
  for (const auto& p : data.patients)
    for (std::size_t t = 0; t < 5; ++t) {
      lo = std::min(lo, p.x(t, 0));
      hi = std::max(hi, p.x(t, 0));
    }
  int inside = 0;
  for (const auto& c : cells) {
    std::vector<double> ts, ys;
    for (std::size_t t = 0; t < 5; ++t) {
      ts.push_back(0.1 * static_cast<double>(t));
      ys.push_back(data.patients[c.patient].x(t, 0));
    }
    const Eigen::VectorXd coef = fit_polynomial(ts, ys, 1);
    const double raw = coef(0) + coef(1) * 0.1 * static_cast<double>(c.t);
    EXPECT_DOUBLE_EQ(c.predicted, std::clamp(raw, lo, hi));
    if (raw >= lo && raw <= hi) {
      EXPECT_NEAR(c.predicted, raw, 1e-12);
      ++inside;
    }
  }
  EXPECT_GT(inside, 0);
}

TEST(Trajectory, EmptyWindowIsConfigError) {
  std::vector<std::vector<std::vector<double>>> v = {std::vector<std::vector<double>>(4, {1.0})};
  const Dataset data = grid_dataset(v, 0.25);
  EXPECT_THROW(trajectory_baselines(data, 0.0, TrajectoryMethod::Linear), ConfigError);
  EXPECT_THROW(trajectory_baselines(data, -1.0, TrajectoryMethod::Latest), ConfigError);
}

TEST(Mape, Identities) {
  const std::vector<double> a = {1.0, -2.0, 4.0, 0.5};
  std::vector<double> scaled;
  for (double v : a) scaled.push_back(1.1 * v);
  EXPECT_EQ(*mape(a, a).value, 0.0);
  EXPECT_NEAR(*mape(scaled, a).value, 10.0, 1e-12);
}

TEST(Mape, FourCellLoopOracle) {
  const std::vector<double> pred = {1.5, -3.0, 0.0, 2.2};
  const std::vector<double> act = {2.0, -2.5, 4.0, 2.0};
  double s = 0.0;
  for (std::size_t k = 0; k < 4; ++k) s += std::abs(pred[k] - act[k]) / std::abs(act[k]);
  const MapeResult r = mape(pred, act);
  EXPECT_DOUBLE_EQ(*r.value, 100.0 * s / 4.0);
  EXPECT_EQ(r.n_scored, 4u);
}

TEST(Mape, ZerosAreExcludedAndCounted) {
  const MapeResult r = mape(std::vector<double>{1.0, 5.0, 3.0}, std::vector<double>{0.0, 4.0, 0.0});
  EXPECT_EQ(r.n_zero_excluded, 2u);
  EXPECT_EQ(r.n_scored, 1u);
  EXPECT_DOUBLE_EQ(*r.value, 25.0);
  const MapeResult none = mape(std::vector<double>{1.0}, std::vector<double>{0.0});
  EXPECT_FALSE(none.value.has_value());
}

TEST(Mape, FeatureSubsetSelectsColumns) {
  Eigen::MatrixXd a(2, 2), p(2, 2);
  a << 1.0, 10.0, 2.0, 20.0;
  p << 1.0, 12.0, 2.0, 22.0;
  EXPECT_EQ(*mape(p, a, {0}).value, 0.0);
  EXPECT_NEAR(*mape(p, a, {1}).value, 15.0, 1e-12);
}

TEST(BaselineInputs, PatientMatrixNeedsThreeVisits) {
  std::vector<std::vector<std::vector<double>>> v = {std::vector<std::vector<double>>(4, {1.0, 2.0}),
                                                      std::vector<std::vector<double>>(2, {3.0, 4.0})};
  const Dataset data = grid_dataset(v, 0.25);
  const Eigen::MatrixXd P = patient_matrix(data);
  EXPECT_EQ(P.rows(), 1);
  EXPECT_EQ(P.cols(), 6);
  EXPECT_EQ(visit_matrix(data).rows(), 3 + 2);
}
