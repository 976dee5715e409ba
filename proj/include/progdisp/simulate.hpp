#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "errors.hpp"
#include "model.hpp"
#include "rng.hpp"

namespace progdisp {

/// Synthetic cohort settings. Group 0 is the pinned reference group; a
/// patient joins group 1 with probability `group_probability`.
struct SimConfig {
  int n_patients = 1000;
  double group_probability = 0.5;
  int d = 4;
  int n_bins = 50;
  double delta = 0.02;
  std::uint64_t seed = 0;
  std::optional<PriorSpec> prior_overrides;

  /// Which group differences the generating parameters carry. With
  /// `rate_disparity` off, one (muR, sigmaR) pair is shared by both groups.
  bool initial_disparity = true;
  bool rate_disparity = false;
  bool visit_disparity = true;

  static constexpr int kGroups = 2;
  static constexpr int kPinnedGroup = 0;

  void validate() const {
    if (n_patients < 1 || d < 1 || n_bins < 1) throw ConfigError("sim: counts must be positive");
    if (!(group_probability > 0.0 && group_probability < 1.0))
      throw ConfigError("sim: group_probability must lie in (0, 1)");
    if (!(delta > 0.0) || !std::isfinite(delta)) throw ConfigError("sim: delta must be positive");
    if (prior_overrides) {
      prior_overrides->validate();
      if (prior_overrides->d() != static_cast<std::size_t>(d))
        throw ConfigError("sim: prior override dimension does not match d");
    }
  }

  PriorSpec priors() const { return prior_overrides ? *prior_overrides : PriorSpec::simulation(d); }
};

/// Generating population parameters for one synthetic dataset.
struct TrueParams {
  SharedParams shared;
  std::vector<GroupParams> groups;
};

inline TrueParams draw_true_params(const SimConfig& cfg, Rng& rng) {
  cfg.validate();
  const PriorSpec pr = cfg.priors();
  TrueParams t;
  const auto d = static_cast<std::size_t>(cfg.d);
  t.shared.F.resize(d);
  t.shared.b.resize(d);
  t.shared.psi.resize(d);
  for (std::size_t j = 0; j < d; ++j) t.shared.F[j] = pr.F[j].sample(rng);
  for (std::size_t j = 0; j < d; ++j) t.shared.b[j] = pr.b[j].sample(rng);
  for (std::size_t j = 0; j < d; ++j) t.shared.psi[j] = pr.psi[j].sample(rng);
  t.shared.beta0 = pr.beta0.sample(rng);
  t.shared.betaZ = pr.betaZ.sample(rng);

  const double muR = pr.muR.sample(rng);
  const double sigmaR = pr.sigmaR.sample(rng);
  t.groups.assign(SimConfig::kGroups, GroupParams::pinned(muR, sigmaR));
  GroupParams& other = t.groups[1];
  // Draw order is fixed so toggling a disparity does not perturb the rest.
  const double muZ0 = pr.muZ0.sample(rng);
  const double sigmaZ0 = pr.sigmaZ0.sample(rng);
  const double betaA = pr.betaA.sample(rng);
  const double muR1 = pr.muR.sample(rng);
  if (cfg.initial_disparity) {
    other.muZ0 = muZ0;
    other.sigmaZ0 = sigmaZ0;
  }
  if (cfg.visit_disparity) other.betaA = betaA;
  if (cfg.rate_disparity) other.muR = muR1;
  return t;
}

/// A simulated cohort with its ground truth.
struct SimulatedCohort {
  Dataset data;
  ModelParams truth;  ///< shared, groups and per-patient latents
};

/// Simulates every patient from its own RNG substream of `cfg.seed`.
inline SimulatedCohort simulate_dataset(const SimConfig& cfg, const TrueParams& params) {
  cfg.validate();
  const auto d = static_cast<std::size_t>(cfg.d);
  if (params.shared.d() != d || params.groups.size() != SimConfig::kGroups)
    throw InvalidParameter("simulate: parameters do not match the configuration");
  for (double v : params.shared.psi)
    if (!(v >= 0.0)) throw InvalidParameter("simulate: psi must be non-negative");

  SimulatedCohort out;
  out.data.n_groups = SimConfig::kGroups;
  out.data.d = cfg.d;
  out.data.delta = cfg.delta;
  out.truth.shared = params.shared;
  out.truth.groups = params.groups;

  const std::size_t horizon = static_cast<std::size_t>(cfg.n_bins) + 1;
  const int width = static_cast<int>(std::to_string(cfg.n_patients - 1).size());
  for (int i = 0; i < cfg.n_patients; ++i) {
    Rng rng = make_stream(cfg.seed, streams::kSimPatients, static_cast<std::uint64_t>(i));
    const int g = uniform01(rng) < cfg.group_probability ? 1 : 0;
    const GroupParams& gp = params.groups[static_cast<std::size_t>(g)];
    PatientLatents lat;
    lat.z0 = gp.muZ0 + gp.sigmaZ0 * standard_normal(rng);
    lat.r = gp.muR + gp.sigmaR * standard_normal(rng);

    std::string id = std::to_string(i);
    id = "p" + std::string(static_cast<std::size_t>(width) - id.size(), '0') + id;
    PatientRecord rec(std::move(id), GroupId{g, g == SimConfig::kPinnedGroup}, horizon, d);
    for (std::size_t t = 0; t < horizon; ++t) {
      const double z = lat.severity(static_cast<double>(t) * cfg.delta);
      bool visit = (t == 0);
      if (t > 0) {
        const double lambda = std::exp(params.shared.beta0 + params.shared.betaZ * z + gp.betaA);
        visit = uniform01(rng) < -std::expm1(-lambda * cfg.delta);
      }
      if (!visit) continue;
      rec.visits[t] = 1;
      for (std::size_t j = 0; j < d; ++j) {
        const double noise = std::sqrt(params.shared.psi[j]) * standard_normal(rng);
        rec.set(t, j, params.shared.F[j] * z + params.shared.b[j] + noise);
      }
    }
    out.data.patients.push_back(std::move(rec));
    out.truth.latents.push_back(lat);
  }
  return out;
}

/// Draws parameters from the `kSimParams` stream of the seed and simulates.
inline SimulatedCohort simulate(const SimConfig& cfg) {
  Rng rng = make_stream(cfg.seed, streams::kSimParams, 0);
  return simulate_dataset(cfg, draw_true_params(cfg, rng));
}

}  // namespace progdisp
