#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "dataset.hpp"
#include "errors.hpp"
#include "fit.hpp"
#include "inference.hpp"
#include "model.hpp"
#include "rng.hpp"
#include "sampler.hpp"
#include "stats.hpp"

namespace progdisp {

// ---------------------------------------------------------------------------
// Model variants

enum class ModelVariant { Full, NoInitialSeverityDisparity, NoRateDisparity, NoVisitDisparity, NoDisparities };

inline constexpr std::array<ModelVariant, 5> kAllVariants = {
    ModelVariant::Full, ModelVariant::NoInitialSeverityDisparity, ModelVariant::NoRateDisparity,
    ModelVariant::NoVisitDisparity, ModelVariant::NoDisparities};

inline const char* to_string(ModelVariant v) {
  switch (v) {
    case ModelVariant::Full: return "Full";
    case ModelVariant::NoInitialSeverityDisparity: return "NoInitialSeverityDisparity";
    case ModelVariant::NoRateDisparity: return "NoRateDisparity";
    case ModelVariant::NoVisitDisparity: return "NoVisitDisparity";
    case ModelVariant::NoDisparities: return "NoDisparities";
  }
  return "?";
}

inline ModelVariant parse_variant(std::string_view name) {
  for (ModelVariant v : kAllVariants)
    if (name == to_string(v)) return v;
  throw ConfigError("unknown model variant '" + std::string(name) + "'");
}

/// Model configuration for a variant. Each ablation drops one family of
/// group-specific parameters; NoDisparities drops all three.
inline ModelConfig build_variant(ModelVariant v, ModelConfig base = {}) {
  base.initial_disparity = true;
  base.rate_disparity = true;
  base.visit_disparity = true;
  switch (v) {
    case ModelVariant::Full: break;
    case ModelVariant::NoInitialSeverityDisparity: base.initial_disparity = false; break;
    case ModelVariant::NoRateDisparity: base.rate_disparity = false; break;
    case ModelVariant::NoVisitDisparity: base.visit_disparity = false; break;
    case ModelVariant::NoDisparities:
      base.initial_disparity = false;
      base.rate_disparity = false;
      base.visit_disparity = false;
      break;
  }
  return base;
}

/// The group disadvantaged along the disparity a variant ignores: higher
/// initial severity (Full, NoInitialSeverityDisparity, NoDisparities),
/// faster progression (NoRateDisparity) or fewer visits at equal severity
/// (NoVisitDisparity). Ties go to the lower index.
inline int underserved_group(ModelVariant v, const std::vector<GroupParams>& truth) {
  if (truth.empty()) throw InvalidParameter("underserved_group: no groups");
  auto score = [v](const GroupParams& g) {
    switch (v) {
      case ModelVariant::NoRateDisparity: return g.muR;
      case ModelVariant::NoVisitDisparity: return -g.betaA;
      default: return g.muZ0;
    }
  };
  int best = 0;
  for (std::size_t g = 1; g < truth.size(); ++g)
    if (score(truth[g]) > score(truth[static_cast<std::size_t>(best)])) best = static_cast<int>(g);
  return best;
}

// ---------------------------------------------------------------------------
// Bias reports

struct GroupBias {
  int group = 0;
  std::size_t n_visits = 0;
  double mean_error = 0.0;        ///< mean inferred minus mean true severity
  std::optional<double> pearson;  ///< inferred vs true, over the group's visits
};

/// Affine map taking a fit's latent scale onto the reference scale:
/// z_ref = slope * z_fit + offset.
struct ScaleAlignment {
  double slope = 1.0;
  double offset = 0.0;
};

struct BiasReport {
  ModelVariant variant = ModelVariant::Full;
  std::vector<GroupBias> groups;
  /// Same metrics after mapping the estimates onto the reference latent
  /// scale through the fitted emission (see emission_alignment). Empty when
  /// no alignment was computed.
  std::vector<GroupBias> aligned;
  ScaleAlignment alignment;
  int underserved = 0;
  bool flagged = false;  ///< the fit did not converge
  double max_rhat = 0.0;
  std::vector<std::string> warnings;

  const GroupBias& group(int g) const {
    for (const auto& b : groups)
      if (b.group == g) return b;
    throw LookupError("bias report has no group " + std::to_string(g));
  }
};

/// Per-group severity error and correlation over every visit.
inline std::vector<GroupBias> group_bias(const std::vector<SeverityPoint>& points, int n_groups) {
  std::vector<GroupBias> out;
  for (int g = 0; g < n_groups; ++g) {
    std::vector<double> x, y;
    for (const auto& p : points)
      if (p.group == g) {
        x.push_back(p.truth);
        y.push_back(p.estimate);
      }
    GroupBias b;
    b.group = g;
    b.n_visits = x.size();
    if (!x.empty()) b.mean_error = mean(y) - mean(x);
    b.pearson = pearson(x, y);
    out.push_back(b);
  }
  return out;
}

inline BiasReport bias_report(ModelVariant variant, const Dataset& data, const ModelParams& truth,
                              const std::vector<PatientLatents>& estimate) {
  BiasReport r;
  r.variant = variant;
  r.groups = group_bias(visit_severity_points(data, truth.latents, estimate), data.n_groups);
  r.underserved = underserved_group(variant, truth.groups);
  return r;
}

/**
 * Latent severity is identified only up to the affine map fixed by the
 * model's anchor. Variants that pin every group share a pooled anchor, so
 * their raw estimates differ from the reference scale by a common shift and
 * stretch. This recovers that map from the emission alone: the reference
 * severity z whose noiseless features F z + b best match (weighted by 1/psi)
 * the fitted F' z' + b'. No true latents are used.
 */
inline ScaleAlignment emission_alignment(const PosteriorDraws& draws, const SharedParams& reference) {
  double num_slope = 0.0, num_offset = 0.0, den = 0.0;
  for (std::size_t j = 0; j < reference.d(); ++j) {
    const std::string idx = "[" + std::to_string(j) + "]";
    const double F = draws.posterior_mean(draws.index("F" + idx));
    const double b = draws.posterior_mean(draws.index("b" + idx));
    const double w = reference.F[j] / reference.psi[j];
    num_slope += w * F;
    num_offset += w * (b - reference.b[j]);
    den += w * reference.F[j];
  }
  if (!(den > 0.0)) throw InvalidParameter("emission_alignment: reference loadings carry no information");
  return {num_slope / den, num_offset / den};
}

inline std::vector<PatientLatents> align_latents(std::vector<PatientLatents> latents, const ScaleAlignment& a) {
  for (auto& l : latents) {
    l.z0 = a.slope * l.z0 + a.offset;
    l.r *= a.slope;
  }
  return latents;
}

/// bias_report plus the emission-aligned metrics.
inline BiasReport bias_report(ModelVariant variant, const Dataset& data, const ModelParams& truth,
                              const PosteriorDraws& draws) {
  const std::vector<PatientLatents> est = latent_means(draws, data);
  BiasReport r = bias_report(variant, data, truth, est);
  r.alignment = emission_alignment(draws, truth.shared);
  r.aligned = group_bias(visit_severity_points(data, truth.latents, align_latents(est, r.alignment)), data.n_groups);
  return r;
}

struct BiasExperimentOptions {
  double rhat_threshold = 1.1;
  FitOptions fit;
};

/// Fits every variant to the same data and scores each against the truth.
/// Each variant samples from its own seed derived from `sampler.seed`.
inline std::vector<BiasReport> bias_experiment(const Dataset& data, const ModelParams& truth,
                                               const std::vector<ModelVariant>& variants, const PriorSpec& priors,
                                               const SamplerConfig& sampler,
                                               const BiasExperimentOptions& options = {}) {
  if (truth.latents.size() != data.size()) throw InvalidParameter("bias_experiment: truth does not match the data");
  std::vector<BiasReport> out;
  for (ModelVariant v : variants) {
    ModelConfig base;
    base.n_groups = data.n_groups;
    base.d = data.d;
    for (const auto& rec : data.patients)
      if (rec.group.is_pinned) base.pinned_group = rec.group.index;
    SamplerConfig sc = sampler;
    sc.seed = splitmix64(sampler.seed ^ (0x5EEDULL + static_cast<std::uint64_t>(v)));
    FitOptions fo = options.fit;
    fo.rhat_threshold = options.rhat_threshold;
    const FitResult fit = fit_model(data, build_variant(v, base), priors, sc, fo);
    BiasReport r = bias_report(v, data, truth, fit.draws);
    r.flagged = !fit.converged;
    r.max_rhat = fit.max_rhat;
    r.warnings = fit.draws.warnings;
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// High-risk visits

struct VisitSeverity {
  int group = 0;
  double severity = 0.0;
};

/// Estimated severity at every visit.
inline std::vector<VisitSeverity> visit_severities(const Dataset& data, const std::vector<PatientLatents>& latents) {
  if (latents.size() != data.size()) throw InvalidParameter("visit_severities: one latent pair per patient required");
  std::vector<VisitSeverity> out;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& rec = data.patients[i];
    for (std::size_t t = 0; t < rec.horizon(); ++t)
      if (rec.visit(t)) out.push_back({rec.group.index, latents[i].severity(static_cast<double>(t) * data.delta)});
  }
  return out;
}

struct HighRiskGroup {
  int group = 0;
  std::size_t n_visits = 0;
  std::size_t n_flagged = 0;
  double flagged_fraction = 0.0;  ///< of this group's visits
  double share = 0.0;             ///< of all flagged visits
};

struct HighRiskProfile {
  double q = 0.25;
  double threshold = 0.0;
  bool degenerate = false;  ///< every severity equal; nothing flagged
  std::size_t n_visits = 0;
  std::size_t n_flagged = 0;
  std::vector<HighRiskGroup> groups;
};

/// Flags visits strictly above the nearest-rank (1 - q) quantile, i.e. the
/// top q share of all visits, and reports each group's part of them.
inline HighRiskProfile high_risk_profile(const std::vector<VisitSeverity>& visits, double q) {
  if (!(q > 0.0 && q < 1.0)) throw ConfigError("high_risk_profile: q must lie in (0, 1)");
  HighRiskProfile out;
  out.q = q;
  out.n_visits = visits.size();
  if (visits.empty()) {
    out.degenerate = true;
    return out;
  }
  std::vector<double> s;
  s.reserve(visits.size());
  for (const auto& v : visits) s.push_back(v.severity);
  std::sort(s.begin(), s.end());
  const auto n = static_cast<double>(s.size());
  const auto rank = static_cast<std::size_t>(std::max(1.0, std::ceil((1.0 - q) * n - 1e-9)));
  out.threshold = s[std::min(rank, s.size()) - 1];
  out.degenerate = s.front() == s.back();

  std::map<int, HighRiskGroup> by_group;
  for (const auto& v : visits) {
    auto& g = by_group[v.group];
    g.group = v.group;
    ++g.n_visits;
    if (!out.degenerate && v.severity > out.threshold) {
      ++g.n_flagged;
      ++out.n_flagged;
    }
  }
  for (auto& [id, g] : by_group) {
    g.flagged_fraction = static_cast<double>(g.n_flagged) / static_cast<double>(g.n_visits);
    g.share = out.n_flagged ? static_cast<double>(g.n_flagged) / static_cast<double>(out.n_flagged) : 0.0;
    out.groups.push_back(g);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Quadrature oracles for the direction of disparity-blind bias

enum class Theorem { InitialSeverity, Rate, VisitFrequency };

inline const char* to_string(Theorem t) {
  switch (t) {
    case Theorem::InitialSeverity: return "InitialSeverity";
    case Theorem::Rate: return "Rate";
    case Theorem::VisitFrequency: return "VisitFrequency";
  }
  return "?";
}

/**
 * One oracle scenario, built from normal densities.
 *
 * InitialSeverity: Z0 ~ N(mu_z0, sd_z0) in the population and
 * N(mu_z0 + shift, sd_z0) in the group, Z_t = Z0 + rate * t, and one
 * feature X = loading * Z_t + intercept + N(0, noise^2) observed at `x`.
 *
 * Rate: Z0 ~ N(mu_z0, sd_z0) for everyone, R ~ N(mu_r, sd_r) in the
 * population and N(mu_r + shift, sd_r) in the group, Z_t = Z0 + R t.
 *
 * VisitFrequency: Z_t ~ N(mu_z0, noise) for everyone; a visit happens with
 * probability F(z) = 1 - exp(-exp(beta0 + betaZ z)) in the population and
 * F(z - shift) in the group (a constant alpha). `visit` picks E = 1 or 0.
 *
 * `reversed` flips the sign of the shift, the mirror-image case.
 */
struct OracleScenario {
  Theorem theorem = Theorem::InitialSeverity;
  double shift = 1.0;
  double noise = 1.0;
  bool reversed = false;
  double x = 0.0;
  double t = 0.5;
  double loading = 1.0;
  double intercept = 0.0;
  double mu_z0 = 0.0;
  double sd_z0 = 1.0;
  double rate = 1.0;  ///< fixed progression rate for InitialSeverity
  double mu_r = 1.0;
  double sd_r = 0.5;
  double beta0 = 0.0;
  double betaZ = 1.0;
  int visit = 1;

  double signed_shift() const { return reversed ? -shift : shift; }
};

struct OracleResult {
  OracleScenario scenario;
  double e_pop = 0.0;    ///< expectation under the population densities
  double e_group = 0.0;  ///< expectation under the group's densities
  double error_bound = 0.0;  ///< bound on the quadrature error of e_group - e_pop
  int expected_sign = 0;     ///< sign the theorem predicts for e_group - e_pop
  bool holds = false;
};

inline constexpr double kQuadratureTolerance = 1e-8;  ///< absolute, per integral

namespace detail {

struct Integral {
  double value = 0.0;
  double error = 0.0;
};

template <class F>
Integral gk(F f, double a, double b) {
  double err = 0.0;
  const double v = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, a, b, 15, 1e-13, &err);
  if (!std::isfinite(v) || !(err <= kQuadratureTolerance))
    throw PrecisionError("quadrature error estimate " + std::to_string(err) + " exceeds the tolerance");
  return {v, err};
}

// Error of N / D given the errors of N and D (first order).
inline double ratio_error(const Integral& num, const Integral& den) {
  if (!(den.value > 0.0)) throw PrecisionError("quadrature missed all of the posterior mass");
  return (num.error + std::abs(num.value / den.value) * den.error) / std::abs(den.value);
}

inline double phi(double x, double mu, double sd) {
  const double u = (x - mu) / sd;
  return std::exp(-0.5 * u * u) / (sd * 2.5066282746310002);
}

inline double visit_probability(double z, double beta0, double betaZ) {
  return -std::expm1(-std::exp(std::min(beta0 + betaZ * z, kMaxLogRate)));
}

// E[Z_t | evidence] for one set of densities, with its error bound.
inline std::pair<double, double> conditional_mean(const OracleScenario& s, double shift) {
  if (s.theorem == Theorem::InitialSeverity) {
    const double mu = s.mu_z0 + shift;
    const double lo = std::min(s.mu_z0, mu) - 10.0 * s.sd_z0, hi = std::max(s.mu_z0, mu) + 10.0 * s.sd_z0;
    auto w = [&](double z0) {
      const double zt = z0 + s.rate * s.t;
      return phi(z0, mu, s.sd_z0) * phi(s.x, s.loading * zt + s.intercept, s.noise);
    };
    const Integral den = gk(w, lo, hi);
    const Integral num = gk([&](double z0) { return (z0 + s.rate * s.t) * w(z0); }, lo, hi);
    return {num.value / den.value, ratio_error(num, den)};
  }
  if (s.theorem == Theorem::Rate) {
    const double mu = s.mu_r + shift;
    const double rlo = std::min(s.mu_r, mu) - 10.0 * s.sd_r, rhi = std::max(s.mu_r, mu) + 10.0 * s.sd_r;
    const double zlo = s.mu_z0 - 10.0 * s.sd_z0, zhi = s.mu_z0 + 10.0 * s.sd_z0;
    double inner_err = 0.0;
    auto inner = [&](double r, bool moment) {
      const Integral in = gk(
          [&](double z0) {
            const double zt = z0 + r * s.t;
            const double w = phi(z0, s.mu_z0, s.sd_z0) * phi(s.x, s.loading * zt + s.intercept, s.noise);
            return moment ? zt * w : w;
          },
          zlo, zhi);
      inner_err = std::max(inner_err, in.error);
      return phi(r, mu, s.sd_r) * in.value;
    };
    Integral den = gk([&](double r) { return inner(r, false); }, rlo, rhi);
    Integral num = gk([&](double r) { return inner(r, true); }, rlo, rhi);
    // The inner errors integrate against a density over the outer range.
    den.error += inner_err;
    num.error += inner_err;
    if (!(inner_err <= kQuadratureTolerance)) throw PrecisionError("inner quadrature tolerance unmet");
    return {num.value / den.value, ratio_error(num, den)};
  }
  const double sd = s.noise;
  const double lo = s.mu_z0 - 10.0 * sd, hi = s.mu_z0 + 10.0 * sd;
  auto w = [&](double z) {
    const double p = visit_probability(z - shift, s.beta0, s.betaZ);
    return phi(z, s.mu_z0, sd) * (s.visit ? p : 1.0 - p);
  };
  const Integral den = gk(w, lo, hi);
  const Integral num = gk([&](double z) { return z * w(z); }, lo, hi);
  return {num.value / den.value, ratio_error(num, den)};
}

}  // namespace detail

/// Computes both conditional expectations by adaptive Gauss-Kronrod
/// quadrature over mean +/- 10 sd and checks the predicted direction: a
/// group that is worse off (higher initial severity, faster progression,
/// fewer visits at equal severity) has E_group > E_pop, and the reverse for
/// a group that is better off. A zero shift predicts equality.
inline OracleResult mlrp_bias_oracle(const OracleScenario& s, double expectation_tolerance = 1e-6) {
  if (!(s.noise > 0.0) || !(s.sd_z0 > 0.0) || !(s.sd_r > 0.0) || !(s.shift >= 0.0))
    throw ConfigError("oracle scenario: scales must be positive and the shift non-negative");
  if (s.theorem == Theorem::Rate && !(s.t > 0.0)) throw ConfigError("oracle scenario: the rate case needs t > 0");
  if (s.theorem == Theorem::VisitFrequency && !(s.betaZ > 0.0))
    throw ConfigError("oracle scenario: visit probability must increase with severity");
  OracleResult r;
  r.scenario = s;
  const auto [pop, pop_err] = detail::conditional_mean(s, 0.0);
  const auto [grp, grp_err] = detail::conditional_mean(s, s.signed_shift());
  r.e_pop = pop;
  r.e_group = grp;
  r.error_bound = pop_err + grp_err;
  if (!(r.error_bound <= expectation_tolerance) || !std::isfinite(pop) || !std::isfinite(grp))
    throw PrecisionError("oracle: expectation error bound " + std::to_string(r.error_bound) + " exceeds " +
                         std::to_string(expectation_tolerance));
  r.expected_sign = s.shift == 0.0 ? 0 : (s.reversed ? -1 : 1);
  const double diff = grp - pop;
  if (r.expected_sign == 0) r.holds = std::abs(diff) <= expectation_tolerance;
  else r.holds = diff * r.expected_sign > r.error_bound;
  return r;
}

/// A grid of scenarios per theorem: shift magnitudes 0.1 to 3 and noise
/// scales 0.25 to 4, each in both directions. Visit scenarios alternate
/// between conditioning on a visit and on no visit.
inline std::vector<OracleScenario> oracle_grid(Theorem theorem) {
  const std::array<double, 4> shifts = {0.1, 0.5, 1.5, 3.0};
  const std::array<double, 3> noises = {0.25, 1.0, 4.0};
  std::vector<OracleScenario> out;
  int k = 0;
  for (double shift : shifts)
    for (double noise : noises)
      for (bool reversed : {false, true}) {
        OracleScenario s;
        s.theorem = theorem;
        s.shift = shift;
        s.noise = noise;
        s.reversed = reversed;
        s.x = (k % 3) - 1.0;  // observations at -1, 0, 1
        s.t = 0.25 + 0.25 * (k % 4);
        s.visit = (k / 2) % 2;  // both directions meet both outcomes
        out.push_back(s);
        ++k;
      }
  return out;
}

}  // namespace progdisp
