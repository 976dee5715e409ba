#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "baselines.hpp"
#include "dataset.hpp"
#include "density.hpp"
#include "diagnostics.hpp"
#include "draws.hpp"
#include "layout.hpp"
#include "model.hpp"
#include "sampler.hpp"

namespace progdisp {

/// How chains are started when no explicit init is given. `Prior` draws
/// every chain from the priors; `DataInformed` starts from a one-factor
/// analysis of the visits and jitters it per chain.
enum class InitStrategy { Prior, DataInformed };

struct FitOptions {
  /// Explicit starting point used for every chain as-is.
  std::optional<ModelParams> init;
  InitStrategy init_strategy = InitStrategy::DataInformed;
  double init_jitter = 0.2;  ///< uniform(-j, j) per unconstrained coordinate
  /// R-hat above this on any global parameter marks the fit non-converged.
  double rhat_threshold = 1.1;
  /// Sample in non-centered rates and feature-scaled latents. The model is
  /// unchanged; only the coordinates the sampler moves in differ.
  bool reparameterize = true;
  /// Dense metric over the global parameters (the latents stay diagonal).
  bool dense_globals = true;
};

struct FitResult {
  PosteriorDraws draws;  ///< constrained space, canonical names
  ModelConfig config;
  std::size_t n_global = 0;
  std::vector<ParameterDiagnostics> diagnostics;  ///< global parameters only
  double max_rhat = 0.0;
  bool converged = true;
};

/// Starting point for one chain: globals drawn from their priors (kept
/// inside each coordinate's support), latents drawn from the drawn group
/// distributions.
inline ModelParams prior_init(const ParameterLayout& layout, const PriorSpec& priors, Rng& rng) {
  const ModelConfig& cfg = layout.config();
  std::vector<double> x(layout.dim());
  auto draw = [&](const Prior& p, double lower) {
    double v = p.sample(rng);
    if (std::isfinite(lower) && !(v > lower)) v = lower + 1e-3 + std::abs(v - lower);
    return v;
  };
  const auto& coords = layout.coordinates();
  for (std::size_t k = 0; k < layout.n_global(); ++k) {
    const Coordinate& c = coords[k];
    const auto j = static_cast<std::size_t>(std::max(c.index, 0));
    switch (c.field) {
      case Field::F: x[k] = draw(priors.F[j], c.lower); break;
      case Field::b: x[k] = draw(priors.b[j], c.lower); break;
      case Field::psi: x[k] = draw(priors.psi[j], c.lower); break;
      case Field::beta0: x[k] = draw(priors.beta0, c.lower); break;
      case Field::betaZ: x[k] = draw(priors.betaZ, c.lower); break;
      case Field::muZ0: x[k] = draw(priors.muZ0, c.lower); break;
      case Field::sigmaZ0: x[k] = draw(priors.sigmaZ0, c.lower); break;
      case Field::muR: x[k] = draw(priors.muR, c.lower); break;
      case Field::sigmaR: x[k] = draw(priors.sigmaR, c.lower); break;
      case Field::betaA: x[k] = draw(priors.betaA, c.lower); break;
      default: break;
    }
  }
  ModelParams p = layout.unflatten(x);
  (void)cfg;
  for (std::size_t i = 0; i < layout.n_patients(); ++i) {
    const GroupParams& gp = p.groups[static_cast<std::size_t>(layout.patient_groups()[i])];
    p.latents[i].z0 = gp.muZ0 + gp.sigmaZ0 * standard_normal(rng);
    p.latents[i].r = gp.muR + gp.sigmaR * standard_normal(rng);
  }
  return p;
}

/**
 * A rough point estimate used to start chains near the posterior bulk.
 *
 * A one-factor analysis over all visits gives loadings and per-visit scores,
 * oriented so that the first loading is positive. Per-patient least squares
 * of the scores on time give (z0, r); these are rescaled so the reference
 * group's z0 has mean 0 and unit variance, and the loadings and intercepts
 * absorb the inverse map. Group parameters are moments of the latents; the
 * visit-rate intercept matches the overall visit frequency.
 */
inline ModelParams data_informed_init(const Dataset& data, const ParameterLayout& layout,
                                      const PriorSpec& priors) {
  const ModelConfig& cfg = layout.config();
  const auto d = static_cast<std::size_t>(data.d);
  std::size_t max_visits = 0;
  for (const auto& rec : data.patients) max_visits = std::max(max_visits, rec.n_visits());
  const Eigen::MatrixXd X = visit_matrix(data, max_visits);
  const FaModel fa = fa_fit(X, 1, 200, 1e-6);
  Eigen::VectorXd L = fa.loadings.col(0);
  Eigen::VectorXd scores = fa_scores(fa, X).col(0);
  if (L(0) < 0.0) {
    L = -L;
    scores = -scores;
  }

  // Per-patient lines through the scores.
  const std::size_t n = data.size();
  std::vector<double> z0(n, 0.0), r(n, 0.0);
  std::vector<bool> has_rate(n, false);
  Eigen::Index row = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& rec = data.patients[i];
    std::vector<double> ts, ys;
    for (std::size_t t = 0; t < rec.horizon(); ++t)
      if (rec.visit(t)) {
        ts.push_back(static_cast<double>(t) * data.delta);
        ys.push_back(scores(row++));
      }
    if (ts.size() >= 3) {
      const Eigen::VectorXd c = fit_polynomial(ts, ys, 1);
      z0[i] = c(0);
      r[i] = c(1);
      has_rate[i] = true;
    } else {
      z0[i] = ys.front();
    }
  }
  std::vector<double> rates;
  for (std::size_t i = 0; i < n; ++i)
    if (has_rate[i]) rates.push_back(r[i]);
  const double fallback_rate = rates.empty() ? 0.0 : quantile(rates, 0.5);
  for (std::size_t i = 0; i < n; ++i)
    if (!has_rate[i]) r[i] = fallback_rate;

  // Fix the scale on the reference group.
  std::vector<double> ref;
  for (std::size_t i = 0; i < n; ++i)
    if (data.patients[i].group.index == cfg.pinned_group) ref.push_back(z0[i]);
  if (ref.size() < 2)
    for (std::size_t i = 0; i < n; ++i) ref.push_back(z0[i]);
  const double m = mean(ref);
  const double s = std::max(std::sqrt(variance(ref)), 1e-3);
  for (std::size_t i = 0; i < n; ++i) {
    z0[i] = (z0[i] - m) / s;
    r[i] /= s;
  }

  ModelParams p;
  const auto& coords = layout.coordinates();
  for (std::size_t j = 0; j < d; ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    p.shared.F.push_back(L(jj) * s);
    p.shared.b.push_back(fa.means(jj) + L(jj) * m);
    p.shared.psi.push_back(std::max(fa.uniquenesses(jj), 0.05 * std::max(fa.uniquenesses(jj), 1e-2)));
  }
  const double f0_lower = coords[0].lower;
  if (!(p.shared.F[0] > f0_lower + 0.05)) p.shared.F[0] = f0_lower + 0.05;
  for (std::size_t j = 0; j < d; ++j) {
    const double lower = coords[2 * d + j].lower;
    if (!(p.shared.psi[j] > lower)) p.shared.psi[j] = lower + 0.05;
  }

  auto clamp_to = [](const Prior& pr, double v) {
    return pr.is_truncated() ? std::max(v, pr.lower + 0.05) : v;
  };
  auto moments = [&](auto pick, auto in_group) {
    std::vector<double> v;
    for (std::size_t i = 0; i < n; ++i)
      if (in_group(data.patients[i].group.index)) v.push_back(pick(i));
    const double mu = v.empty() ? 0.0 : mean(v);
    const double sd = v.size() < 2 ? 1.0 : std::sqrt(variance(v));
    return std::pair{mu, sd};
  };

  p.groups.assign(static_cast<std::size_t>(cfg.n_groups), GroupParams{});
  for (int g = 0; g < cfg.n_groups; ++g) {
    auto& gp = p.groups[static_cast<std::size_t>(g)];
    const bool pinned = cfg.group_is_pinned(g);
    auto mine = [g](int h) { return h == g; };
    auto all = [](int) { return true; };
    if (cfg.initial_disparity && !pinned) {
      const auto [mu, sd] = moments([&](std::size_t i) { return z0[i]; }, mine);
      gp.muZ0 = mu;
      gp.sigmaZ0 = clamp_to(priors.sigmaZ0, std::max(sd, 0.1));
    }
    const auto [rmu, rsd] = cfg.rate_disparity ? moments([&](std::size_t i) { return r[i]; }, mine)
                                               : moments([&](std::size_t i) { return r[i]; }, all);
    gp.muR = rmu;
    gp.sigmaR = clamp_to(priors.sigmaR, std::max(0.5 * rsd, 0.05));
  }

  // Visit-rate intercept from the overall per-bin visit frequency.
  double visits = 0.0, bins = 0.0;
  for (const auto& rec : data.patients)
    for (std::size_t t = 1; t < rec.horizon(); ++t) {
      visits += rec.visit(t);
      bins += 1.0;
    }
  const double freq = std::clamp(bins > 0 ? visits / bins : 0.5, 1e-3, 0.999);
  p.shared.betaZ = clamp_to(priors.betaZ, priors.betaZ.mu);
  p.shared.beta0 = std::log(-std::log1p(-freq) / data.delta);
  for (std::size_t i = 0; i < n; ++i) p.latents.push_back({z0[i], r[i]});
  return p;
}

/// Maps raw sampler output (unconstrained) to constrained, named draws.
inline PosteriorDraws constrain_draws(const ParameterLayout& layout, PosteriorDraws raw) {
  const std::size_t dim = layout.dim();
  std::vector<double> u(dim);
  for (std::size_t i = 0; i < raw.n_draws(); ++i) {
    std::copy_n(raw.values.begin() + static_cast<std::ptrdiff_t>(i * dim), dim, u.begin());
    const std::vector<double> x = layout.flatten(layout.constrain(u));
    std::copy(x.begin(), x.end(), raw.values.begin() + static_cast<std::ptrdiff_t>(i * dim));
  }
  raw.names = layout.names();
  return raw;
}

/// Fits the model to `data` with NUTS and summarizes convergence of the
/// global parameters.
inline FitResult fit_model(const Dataset& data, const ModelConfig& model, const PriorSpec& priors,
                           const SamplerConfig& sampler_config, const FitOptions& options = {}) {
  data.validate();
  ModelConfig config = model;
  if (options.reparameterize) {
    config.noncentered_rate = true;
    config.scaled_latents = true;
  }
  const ModelDensity density(data, config, priors);
  const ParameterLayout& layout = density.layout();
  SamplerConfig sampler = sampler_config;
  if (options.dense_globals) sampler.dense_block = static_cast<int>(layout.n_global());

  SampleOptions so;
  so.names = layout.names();
  std::vector<double> center;
  if (options.init) {
    so.init = layout.unconstrain(*options.init);
  } else if (options.init_strategy == InitStrategy::DataInformed) {
    center = layout.unconstrain(data_informed_init(data, layout, priors));
    so.init_fn = [&](Rng& rng, int) {
      for (int attempt = 0; attempt < 100; ++attempt) {
        std::vector<double> u = center;
        for (double& v : u) v += options.init_jitter * (2.0 * uniform01(rng) - 1.0);
        if (std::isfinite(density.log_posterior(u))) return u;
      }
      throw InvalidParameter("fit: could not find a finite starting point near the data-informed estimate");
    };
  } else {
    so.init_fn = [&](Rng& rng, int) {
      for (int attempt = 0; attempt < 100; ++attempt) {
        const std::vector<double> u = layout.unconstrain(prior_init(layout, priors, rng));
        if (std::isfinite(density.log_posterior(u))) return u;
      }
      throw InvalidParameter("fit: could not find a finite starting point from the priors");
    };
  }
  LogDensityGradient f = [&](std::span<const double> u, std::span<double> g) {
    return density.log_posterior_gradient(u, g);
  };

  FitResult out;
  out.config = config;
  out.n_global = layout.n_global();
  out.draws = constrain_draws(layout, sample(f, layout.dim(), sampler, so));
  out.diagnostics = summarize(out.draws, out.n_global);
  for (const auto& d : out.diagnostics)
    if (std::isfinite(d.rhat)) out.max_rhat = std::max(out.max_rhat, d.rhat);
  if (sampler.chains >= 2 && out.max_rhat > options.rhat_threshold) {
    out.converged = false;
    out.draws.warnings.push_back("R-hat above " + std::to_string(options.rhat_threshold) +
                                 " on a global parameter (max " + std::to_string(out.max_rhat) + ")");
  }
  return out;
}

}  // namespace progdisp
