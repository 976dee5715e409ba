#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "dataset.hpp"
#include "layout.hpp"
#include "model.hpp"

namespace progdisp {

/// log(lambda) above this is treated as overflow and the density is -inf.
inline constexpr double kMaxLogRate = 30.0;

/// Per-patient sufficient statistics for the Gaussian emission term. For each
/// feature, sums over the observed cells of 1, tau, tau^2, x, x*tau, x^2.
struct EmissionStats {
  double n = 0, s_t = 0, s_tt = 0, s_x = 0, s_xt = 0, s_xx = 0;
};

/// Data reshaped for repeated density evaluation.
struct PreparedData {
  struct Patient {
    int group = 0;
    std::vector<std::uint8_t> visits;
    std::vector<std::uint32_t> visit_bins;  ///< bins t >= 1 with a visit
    std::vector<EmissionStats> stats;       ///< one per feature
  };

  std::vector<Patient> patients;
  int d = 0;
  double delta = 1.0;

  PreparedData() = default;

  explicit PreparedData(const Dataset& data) : d(data.d), delta(data.delta) {
    patients.reserve(data.size());
    const auto dd = static_cast<std::size_t>(data.d);
    for (const auto& rec : data.patients) {
      Patient p;
      p.group = rec.group.index;
      p.visits = rec.visits;
      for (std::size_t t = 1; t < rec.horizon(); ++t)
        if (rec.visit(t)) p.visit_bins.push_back(static_cast<std::uint32_t>(t));
      p.stats.assign(dd, EmissionStats{});
      for (std::size_t t = 0; t < rec.horizon(); ++t) {
        if (!rec.visit(t)) continue;
        const double tau = static_cast<double>(t) * data.delta;
        for (std::size_t j = 0; j < dd; ++j) {
          if (!rec.is_observed(t, j)) continue;
          const double x = rec.x(t, j);
          auto& s = p.stats[j];
          s.n += 1.0;
          s.s_t += tau;
          s.s_tt += tau * tau;
          s.s_x += x;
          s.s_xt += x * tau;
          s.s_xx += x * x;
        }
      }
      patients.push_back(std::move(p));
    }
  }
};

/// Gaussian emission log likelihood over all observed cells at visit bins.
/// Accumulates d/d(constrained) into *grad when given.
inline double log_lik_emission(const SharedParams& shared, std::span<const PatientLatents> latents,
                               const PreparedData& data, ModelParams* grad = nullptr) {
  const auto d = static_cast<std::size_t>(data.d);
  if (shared.F.size() != d || shared.b.size() != d || shared.psi.size() != d)
    throw InvalidParameter("emission: parameter dimension does not match the data");
  if (latents.size() != data.patients.size())
    throw InvalidParameter("emission: one latent pair per patient required");
  for (double v : shared.psi)
    if (!(v > 0.0)) throw InvalidParameter("emission: psi must be strictly positive");

  std::vector<double> log_psi(d);
  for (std::size_t j = 0; j < d; ++j) log_psi[j] = std::log(shared.psi[j]);

  double total = 0.0;
  for (std::size_t i = 0; i < data.patients.size(); ++i) {
    const auto& pat = data.patients[i];
    const double z0 = latents[i].z0, r = latents[i].r;
    double g_z0 = 0.0, g_r = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const EmissionStats& s = pat.stats[j];
      if (s.n == 0.0) continue;
      const double F = shared.F[j], psi = shared.psi[j];
      const double m = shared.b[j] + F * z0;  // intercept of the mean line in tau
      const double k = F * r;                 // slope of the mean line in tau
      const double rss = s.s_xx - 2.0 * m * s.s_x - 2.0 * k * s.s_xt + s.n * m * m +
                         2.0 * m * k * s.s_t + k * k * s.s_tt;
      total += -0.5 * s.n * (kLog2Pi + log_psi[j]) - 0.5 * rss / psi;
      if (grad) {
        const double gm = (s.s_x - s.n * m - k * s.s_t) / psi;
        const double gk = (s.s_xt - m * s.s_t - k * s.s_tt) / psi;
        grad->shared.b[j] += gm;
        grad->shared.F[j] += gm * z0 + gk * r;
        grad->shared.psi[j] += -0.5 * s.n / psi + 0.5 * rss / (psi * psi);
        g_z0 += gm * F;
        g_r += gk * F;
      }
    }
    if (grad) {
      grad->latents[i].z0 += g_z0;
      grad->latents[i].r += g_r;
    }
  }
  return total;
}

/**
 * Discretized visit-process log likelihood.
 *
 * Bin 0 is conditioned on. For bins t = 1 .. horizon-1 the rate is
 * lambda_t = exp(beta0 + betaZ * Z_t + betaA[group]) with Z_t taken at the
 * bin's left edge, and a visit in the bin has probability
 * 1 - exp(-lambda_t * delta). Returns -inf if any log rate exceeds
 * kMaxLogRate.
 */
inline double log_lik_visits(const SharedParams& shared, std::span<const GroupParams> groups,
                             std::span<const PatientLatents> latents, const PreparedData& data,
                             ModelParams* grad = nullptr) {
  if (latents.size() != data.patients.size())
    throw InvalidParameter("visits: one latent pair per patient required");
  if (!std::isfinite(shared.beta0) || !std::isfinite(shared.betaZ))
    throw InvalidParameter("visits: non-finite rate parameters");
  const double delta = data.delta;
  const double log_delta = std::log(delta);
  std::vector<double> mus;  // lambda_t * delta for the current patient
  double total = 0.0;
  for (std::size_t i = 0; i < data.patients.size(); ++i) {
    const auto& pat = data.patients[i];
    const auto g = static_cast<std::size_t>(pat.group);
    const double base = shared.beta0 + groups[g].betaA;
    const double z0 = latents[i].z0, r = latents[i].r;
    const std::size_t horizon = pat.visits.size();
    if (horizon < 2) continue;
    // Z is linear in t, so the largest log rate sits at an end of the window.
    const double eta_first = base + shared.betaZ * (z0 + r * delta);
    const double eta_last = base + shared.betaZ * (z0 + r * static_cast<double>(horizon - 1) * delta);
    if (!(eta_first <= kMaxLogRate) || !(eta_last <= kMaxLogRate)) return kNegInf;

    // Every bin first contributes -lambda_t * delta (a geometric sequence in
    // t); visit bins then add back lambda_t * delta + log(1 - exp(-lambda_t * delta)).
    const double ratio = std::exp(shared.betaZ * r * delta);
    mus.resize(horizon);
    double mu = std::exp(eta_first) * delta;
    double s0 = 0.0, s1 = 0.0;
    for (std::size_t t = 1; t < horizon; ++t, mu *= ratio) {
      mus[t] = mu;
      s0 += mu;
      s1 += mu * static_cast<double>(t);
    }
    total -= s0;
    double g_eta_sum = -s0, g_t = -s1;  // sums of d/d(eta_t) and t * d/d(eta_t)
    for (const std::uint32_t t : pat.visit_bins) {
      const double tt = static_cast<double>(t);
      const double m = mus[t];
      double g_eta;
      if (m < 1e-8) {
        const double eta = base + shared.betaZ * (z0 + r * tt * delta);
        total += eta + log_delta + 0.5 * m;
        g_eta = 1.0 + 0.5 * m;
      } else if (m < 1.0) {
        const double em1 = std::expm1(m);
        total += std::log(em1);
        g_eta = m / em1 + m;
      } else {
        // log(expm1(m)) without overflow for large m.
        const double e = std::exp(-m);
        total += m + std::log1p(-e);
        g_eta = m * e / (1.0 - e) + m;
      }
      g_eta_sum += g_eta;
      g_t += g_eta * tt;
    }
    const double g_betaZ = z0 * g_eta_sum + r * delta * g_t;
    const double g_r = delta * g_t;
    if (grad) {
      grad->shared.beta0 += g_eta_sum;
      grad->groups[g].betaA += g_eta_sum;
      grad->shared.betaZ += g_betaZ;
      grad->latents[i].z0 += g_eta_sum * shared.betaZ;
      grad->latents[i].r += g_r * shared.betaZ;
    }
  }
  return total;
}

/// Prior log density of every sampled quantity plus the hierarchical latent
/// terms. Pinned and tied quantities contribute once or not at all, as the
/// configuration dictates.
///
/// With a non-empty `rate_noise` (one standardized rate per patient), the
/// rate latents are scored as standard normals on those values, and their
/// gradient lands in `rate_noise_grad` rather than in `grad`.
inline double log_prior(const ModelParams& p, const PriorSpec& priors, const ModelConfig& config,
                        const PreparedData& data, ModelParams* grad = nullptr,
                        std::span<const double> rate_noise = {}, std::span<double> rate_noise_grad = {}) {
  priors.validate();
  const auto d = static_cast<std::size_t>(config.d);
  double total = 0.0;
  auto term = [&](const Prior& prior, double x, double* g) {
    total += prior.log_density(x);
    if (g) *g += prior.dlog_density(x);
  };
  for (std::size_t j = 0; j < d; ++j) {
    term(priors.F[j], p.shared.F[j], grad ? &grad->shared.F[j] : nullptr);
    term(priors.b[j], p.shared.b[j], grad ? &grad->shared.b[j] : nullptr);
    term(priors.psi[j], p.shared.psi[j], grad ? &grad->shared.psi[j] : nullptr);
  }
  term(priors.beta0, p.shared.beta0, grad ? &grad->shared.beta0 : nullptr);
  term(priors.betaZ, p.shared.betaZ, grad ? &grad->shared.betaZ : nullptr);

  for (int g = 0; g < config.n_groups; ++g) {
    const auto gi = static_cast<std::size_t>(g);
    const GroupParams& gp = p.groups[gi];
    GroupParams* gg = grad ? &grad->groups[gi] : nullptr;
    const bool pinned = config.group_is_pinned(g);
    if (config.initial_disparity && !pinned) {
      term(priors.muZ0, gp.muZ0, gg ? &gg->muZ0 : nullptr);
      term(priors.sigmaZ0, gp.sigmaZ0, gg ? &gg->sigmaZ0 : nullptr);
    }
    // A shared rate pair is counted once, through the reference group slot;
    // the layout sums tied gradients across groups.
    if (config.rate_disparity || pinned) {
      term(priors.muR, gp.muR, gg ? &gg->muR : nullptr);
      term(priors.sigmaR, gp.sigmaR, gg ? &gg->sigmaR : nullptr);
    }
    if (config.visit_disparity && !pinned) term(priors.betaA, gp.betaA, gg ? &gg->betaA : nullptr);
  }

  const bool noncentered = !rate_noise.empty();
  if (noncentered && rate_noise.size() != data.patients.size())
    throw InvalidParameter("prior: one standardized rate per patient required");
  for (std::size_t i = 0; i < data.patients.size(); ++i) {
    const auto g = static_cast<std::size_t>(data.patients[i].group);
    const GroupParams& gp = p.groups[g];
    const PatientLatents& lat = p.latents[i];
    const double ez = (lat.z0 - gp.muZ0) / gp.sigmaZ0;
    total += -0.5 * kLog2Pi - std::log(gp.sigmaZ0) - 0.5 * ez * ez;
    if (grad) {
      grad->latents[i].z0 += -ez / gp.sigmaZ0;
      grad->groups[g].muZ0 += ez / gp.sigmaZ0;
      grad->groups[g].sigmaZ0 += (ez * ez - 1.0) / gp.sigmaZ0;
    }
    if (noncentered) {
      const double eta = rate_noise[i];
      total += -0.5 * kLog2Pi - 0.5 * eta * eta;
      if (!rate_noise_grad.empty()) rate_noise_grad[i] += -eta;
      continue;
    }
    const double er = (lat.r - gp.muR) / gp.sigmaR;
    total += -0.5 * kLog2Pi - std::log(gp.sigmaR) - 0.5 * er * er;
    if (grad) {
      grad->latents[i].r += -er / gp.sigmaR;
      grad->groups[g].muR += er / gp.sigmaR;
      grad->groups[g].sigmaR += (er * er - 1.0) / gp.sigmaR;
    }
  }
  return total;
}

/// Values of the three density components at a parameter point.
struct DensityTerms {
  double emission = 0.0;
  double visits = 0.0;
  double prior = 0.0;
  double log_jacobian = 0.0;

  double total() const { return emission + visits + prior + log_jacobian; }
};

/**
 * The joint log posterior over the unconstrained parameter vector of a model
 * configuration, with its analytic gradient. Evaluation is const and
 * allocation-local, so one instance can serve several threads.
 */
class ModelDensity {
 public:
  ModelDensity(const Dataset& data, const ModelConfig& config, const PriorSpec& priors)
      : config_(config), priors_(priors), prepared_(data), layout_(config, priors, data) {
    priors_.validate();
    if (data.d != config.d || data.n_groups > config.n_groups)
      throw ConfigError("model configuration does not match the dataset");
  }

  const ParameterLayout& layout() const { return layout_; }
  const ModelConfig& config() const { return config_; }
  const PriorSpec& priors() const { return priors_; }
  const PreparedData& prepared() const { return prepared_; }
  std::size_t dim() const { return layout_.dim(); }

  DensityTerms terms(std::span<const double> u) const {
    DensityTerms out;
    const ModelParams p = layout_.constrain(u, &out.log_jacobian);
    out.emission = log_lik_emission(p.shared, p.latents, prepared_);
    out.visits = log_lik_visits(p.shared, p.groups, p.latents, prepared_);
    out.prior = log_prior(p, priors_, config_, prepared_, nullptr, rate_noise(u));
    return out;
  }

  double log_posterior(std::span<const double> u) const {
    const DensityTerms t = terms(u);
    const double v = t.total();
    return std::isnan(v) ? kNegInf : v;
  }

  /// Log posterior and its gradient in unconstrained space. On the -inf
  /// sentinel the gradient is zeroed.
  double log_posterior_gradient(std::span<const double> u, std::span<double> grad) const {
    double log_j = 0.0;
    const ModelParams p = layout_.constrain(u, &log_j);
    ModelParams g = zeros_like(p);
    const double visits = log_lik_visits(p.shared, p.groups, p.latents, prepared_, &g);
    if (visits == kNegInf) {
      std::fill(grad.begin(), grad.end(), 0.0);
      return kNegInf;
    }
    const std::vector<double> eta = rate_noise(u);
    std::vector<double> eta_grad(eta.size(), 0.0);
    const double value = log_lik_emission(p.shared, p.latents, prepared_, &g) + visits +
                         log_prior(p, priors_, config_, prepared_, &g, eta, eta_grad) + log_j;
    if (!std::isfinite(value)) {
      std::fill(grad.begin(), grad.end(), 0.0);
      return kNegInf;
    }
    layout_.chain_gradient(p, u, std::move(g), grad);
    for (std::size_t i = 0; i < eta_grad.size(); ++i) grad[layout_.n_global() + 2 * i + 1] += eta_grad[i];
    return value;
  }

  std::vector<double> gradient(std::span<const double> u) const {
    std::vector<double> g(dim());
    log_posterior_gradient(u, g);
    return g;
  }

 private:
  // Standardized rates read straight from u; empty for the centered form.
  std::vector<double> rate_noise(std::span<const double> u) const {
    std::vector<double> eta;
    if (!config_.noncentered_rate) return eta;
    const std::size_t n = prepared_.patients.size();
    eta.reserve(n);
    for (std::size_t i = 0; i < n; ++i) eta.push_back(u[layout_.n_global() + 2 * i + 1]);
    return eta;
  }

  ModelConfig config_;
  PriorSpec priors_;
  PreparedData prepared_;
  ParameterLayout layout_;
};

/// Convenience overloads on raw datasets.
inline double log_lik_emission(const SharedParams& shared, std::span<const PatientLatents> latents,
                               const Dataset& data) {
  return log_lik_emission(shared, latents, PreparedData(data));
}

inline double log_lik_visits(const SharedParams& shared, std::span<const GroupParams> groups,
                             std::span<const PatientLatents> latents, const Dataset& data) {
  return log_lik_visits(shared, groups, latents, PreparedData(data));
}

inline double log_prior(const ModelParams& p, const PriorSpec& priors, const ModelConfig& config,
                        const Dataset& data) {
  return log_prior(p, priors, config, PreparedData(data));
}

}  // namespace progdisp
