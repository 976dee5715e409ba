#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"
#include "stats.hpp"

namespace progdisp {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// A demographic group label. Exactly one group per configuration is the
/// pinned reference group.
struct GroupId {
  int index = 0;
  bool is_pinned = false;
};

/// Population-level parameters shared by every group.
struct SharedParams {
  std::vector<double> F;    ///< severity-to-feature loadings
  std::vector<double> b;    ///< feature intercepts
  std::vector<double> psi;  ///< diagonal feature noise variances
  double beta0 = 0.0;       ///< visit-rate log intercept
  double betaZ = 0.0;       ///< visit-rate severity coefficient

  std::size_t d() const { return F.size(); }
};

/// Per-group parameters. For the reference group muZ0 = 0, sigmaZ0 = 1 and
/// betaA = 0 always.
struct GroupParams {
  double muZ0 = 0.0;
  double sigmaZ0 = 1.0;
  double muR = 0.0;
  double sigmaR = 1.0;
  double betaA = 0.0;

  static GroupParams pinned(double muR, double sigmaR) { return {0.0, 1.0, muR, sigmaR, 0.0}; }
};

/// Per-patient latents. Severity at normalized time tau is z0 + r * tau.
struct PatientLatents {
  double z0 = 0.0;
  double r = 0.0;

  double severity(double tau) const { return z0 + r * tau; }
};

/// Everything the joint density depends on, in constrained space.
struct ModelParams {
  SharedParams shared;
  std::vector<GroupParams> groups;
  std::vector<PatientLatents> latents;
};

/// Which group-specific parameter blocks a fitted model carries.
struct ModelConfig {
  int n_groups = 2;
  int d = 4;
  int pinned_group = 0;
  bool initial_disparity = true;  ///< per-group (muZ0, sigmaZ0) for non-reference groups
  bool rate_disparity = true;     ///< per-group (muR, sigmaR); otherwise one shared pair
  bool visit_disparity = true;    ///< per-group betaA for non-reference groups
  double f0_lower = 0.0;          ///< sign pin: F[0] > f0_lower
  // Sampling coordinates only; neither changes the model.
  bool noncentered_rate = false;  ///< sample r as muR + sigmaR * eta
  bool scaled_latents = false;    ///< sample latents in the units of feature 0

  bool group_is_pinned(int g) const { return g == pinned_group; }
};

// ---------------------------------------------------------------------------
// Priors

/// Normal(mu, sigma), optionally truncated below at `lower`.
struct Prior {
  double mu = 0.0;
  double sigma = 1.0;
  double lower = kNegInf;

  static Prior normal(double mu, double sigma) { return {mu, sigma, kNegInf}; }
  static Prior truncated(double mu, double sigma, double lower) { return {mu, sigma, lower}; }

  bool is_truncated() const { return std::isfinite(lower); }

  /// log Z of the truncation; zero for an untruncated prior.
  double log_normalizer() const {
    return is_truncated() ? log_normal_cdf((mu - lower) / sigma) : 0.0;
  }

  double log_density(double x) const {
    if (is_truncated() && x < lower) return kNegInf;
    return normal_log_pdf(x, mu, sigma) - log_normalizer();
  }

  /// d/dx log density inside the support.
  double dlog_density(double x) const { return -(x - mu) / (sigma * sigma); }

  /// Exact draw; truncated priors use the inverse CDF.
  double sample(Rng& rng) const {
    if (!is_truncated()) return mu + sigma * standard_normal(rng);
    const double alpha = (lower - mu) / sigma;
    const double p_lo = normal_cdf(alpha);
    double u = p_lo + (1.0 - p_lo) * uniform01(rng);
    u = std::clamp(u, std::nextafter(p_lo, 1.0), std::nextafter(1.0, 0.0));
    if (!(u > 0.0 && u < 1.0)) return lower;
    return std::max(lower, mu + sigma * normal_quantile(u));
  }

  void validate(const char* what) const {
    if (!(sigma > 0.0) || !std::isfinite(sigma) || !std::isfinite(mu))
      throw ConfigError(std::string("prior for ") + what + ": sigma must be positive and finite");
  }
};

/// Prior family and hyperparameters for every sampled quantity.
struct PriorSpec {
  std::vector<Prior> F, b, psi;
  Prior beta0, betaZ, muZ0, sigmaZ0, muR, sigmaR, betaA;

  std::size_t d() const { return F.size(); }

  void validate() const {
    if (F.empty() || b.size() != F.size() || psi.size() != F.size())
      throw ConfigError("prior spec: F, b and psi must have the same non-zero length");
    for (const auto& p : F) p.validate("F");
    for (const auto& p : b) p.validate("b");
    for (const auto& p : psi) p.validate("psi");
    beta0.validate("beta0");
    betaZ.validate("betaZ");
    muZ0.validate("muZ0");
    sigmaZ0.validate("sigmaZ0");
    muR.validate("muR");
    sigmaR.validate("sigmaR");
    betaA.validate("betaA");
  }

  /// Generating priors for synthetic cohorts. Normal(mu, sigma) takes the
  /// standard deviation as its second argument.
  static PriorSpec simulation(int d) {
    PriorSpec p;
    p.F.assign(static_cast<std::size_t>(d), Prior::normal(0.0, 2.0));
    p.F[0] = Prior::truncated(1.0, 1.0, 0.5);
    p.b.assign(static_cast<std::size_t>(d), Prior::normal(0.0, 1.0));
    p.psi.assign(static_cast<std::size_t>(d), Prior::truncated(5.0, 1.0, 0.0));
    p.beta0 = Prior::normal(1.5, 0.1);
    p.betaZ = Prior::truncated(0.5, 0.1, 0.1);
    p.muZ0 = Prior::normal(0.0, 4.0);
    p.sigmaZ0 = Prior::truncated(1.0, 0.1, 0.0);
    p.muR = Prior::normal(1.0, 4.0);
    p.sigmaR = Prior::truncated(0.1, 0.4, 0.0);
    p.betaA = Prior::normal(0.0, 2.0);
    return p;
  }

  /// Priors used when fitting synthetic cohorts: the generating priors, with
  /// the F[0] bound relaxed to the sign pin.
  static PriorSpec synthetic_fit(int d) {
    PriorSpec p = simulation(d);
    p.F[0] = Prior::truncated(1.0, 1.0, 0.0);
    return p;
  }

  /// Weakly informative priors for real cohorts. `loading_means` are factor
  /// analysis loadings oriented so that loading_means[0] > 0.
  static PriorSpec weakly_informative(const std::vector<double>& loading_means) {
    PriorSpec p;
    const std::size_t d = loading_means.size();
    if (d == 0) throw ConfigError("weakly_informative: need at least one feature");
    for (double m : loading_means) p.F.push_back(Prior::normal(m, 1.0));
    p.F[0] = Prior::truncated(loading_means[0], 1.0, 0.0);
    p.b.assign(d, Prior::normal(0.0, 1.0));
    p.psi.assign(d, Prior::truncated(1.0, 0.5, 0.0));
    p.beta0 = Prior::normal(2.5, 1.0);
    p.betaZ = Prior::normal(0.0, 1.0);
    p.muZ0 = Prior::normal(0.0, 1.0);
    p.sigmaZ0 = Prior::truncated(1.0, 1.0, 0.0);
    p.muR = Prior::normal(0.0, 1.0);
    p.sigmaR = Prior::truncated(1.5, 1.0, 0.0);
    p.betaA = Prior::normal(0.0, 1.0);
    return p;
  }
};

}  // namespace progdisp
