#pragma once

#include <cmath>

#include <Eigen/Dense>

#include "errors.hpp"
#include "model.hpp"

namespace progdisp {

struct FeatureMoments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

/// Marginal mean and covariance of X_t for a patient drawn from `group`,
/// integrating out (z0, r).
inline FeatureMoments marginal_feature_moments(const SharedParams& shared, const GroupParams& group,
                                               double t) {
  if (!(t >= 0.0)) throw InvalidParameter("marginal_feature_moments: t must be non-negative");
  const auto d = static_cast<Eigen::Index>(shared.d());
  const Eigen::Map<const Eigen::VectorXd> F(shared.F.data(), d);
  const Eigen::Map<const Eigen::VectorXd> b(shared.b.data(), d);
  const Eigen::Map<const Eigen::VectorXd> psi(shared.psi.data(), d);
  const double z_mean = group.muR * t + group.muZ0;
  const double z_var = group.sigmaR * group.sigmaR * t * t + group.sigmaZ0 * group.sigmaZ0;
  FeatureMoments m;
  m.mean = b + F * z_mean;
  m.cov = z_var * (F * F.transpose());
  m.cov.diagonal() += psi;
  return m;
}

/// E[lambda_t] over the group's latent distribution (a lognormal mean).
inline double expected_visit_rate(const SharedParams& shared, const GroupParams& group, double t) {
  if (!(t >= 0.0)) throw InvalidParameter("expected_visit_rate: t must be non-negative");
  const double bz = shared.betaZ;
  const double quad = 0.5 * bz * bz * group.sigmaR * group.sigmaR;
  const double lin = bz * group.muR;
  const double c = shared.beta0 + 0.5 * bz * bz * group.sigmaZ0 * group.sigmaZ0 + bz * group.muZ0 +
                   group.betaA;
  return std::exp(quad * t * t + lin * t + c);
}

}  // namespace progdisp
