#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "progdisp/dataset.hpp"
#include "progdisp/layout.hpp"
#include "progdisp/model.hpp"
#include "progdisp/rng.hpp"

namespace progdisp::testing {

/// Random cohort on a grid with the dataset invariants satisfied. Each cell
/// at a visit is observed with probability `p_obs` (at least one per visit).
inline Dataset toy_dataset(int n_patients, std::size_t horizon, int d, double delta, Rng& rng,
                           double p_visit = 0.4, double p_obs = 0.8, int n_groups = 2) {
  Dataset data;
  data.n_groups = n_groups;
  data.d = d;
  data.delta = delta;
  const auto dd = static_cast<std::size_t>(d);
  for (int i = 0; i < n_patients; ++i) {
    const int g = i % n_groups;
    PatientRecord rec("t" + std::to_string(i), GroupId{g, g == 0}, horizon, dd);
    for (std::size_t t = 0; t < horizon; ++t) {
      if (t > 0 && uniform01(rng) >= p_visit) continue;
      rec.visits[t] = 1;
      const std::size_t forced = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(dd)) % dd;
      for (std::size_t j = 0; j < dd; ++j)
        if (j == forced || uniform01(rng) < p_obs) rec.set(t, j, 2.0 * standard_normal(rng) + 0.5);
    }
    data.patients.push_back(std::move(rec));
  }
  return data;
}

/// Parameters drawn from `priors`, with pins and ties of `config` applied
/// and latents drawn from each patient's group.
inline ModelParams random_params(const ModelConfig& config, const PriorSpec& priors, const Dataset& data,
                                 Rng& rng) {
  ModelParams p;
  const auto d = static_cast<std::size_t>(config.d);
  for (std::size_t j = 0; j < d; ++j) {
    double f = priors.F[j].sample(rng);
    if (j == 0) f = std::max(f, config.f0_lower + 1e-3);
    p.shared.F.push_back(f);
    p.shared.b.push_back(priors.b[j].sample(rng));
    p.shared.psi.push_back(std::max(priors.psi[j].sample(rng), 1e-3));
  }
  p.shared.beta0 = priors.beta0.sample(rng);
  p.shared.betaZ = priors.betaZ.sample(rng);
  const double muR = priors.muR.sample(rng);
  const double sigmaR = std::max(priors.sigmaR.sample(rng), 1e-3);
  for (int g = 0; g < config.n_groups; ++g) {
    GroupParams gp = GroupParams::pinned(muR, sigmaR);
    if (!config.group_is_pinned(g)) {
      if (config.initial_disparity) {
        gp.muZ0 = priors.muZ0.sample(rng);
        gp.sigmaZ0 = std::max(priors.sigmaZ0.sample(rng), 1e-3);
      }
      if (config.visit_disparity) gp.betaA = priors.betaA.sample(rng);
    }
    if (config.rate_disparity) {
      gp.muR = priors.muR.sample(rng);
      gp.sigmaR = std::max(priors.sigmaR.sample(rng), 1e-3);
    }
    p.groups.push_back(gp);
  }
  for (const auto& rec : data.patients) {
    const GroupParams& gp = p.groups[static_cast<std::size_t>(rec.group.index)];
    p.latents.push_back({gp.muZ0 + gp.sigmaZ0 * standard_normal(rng), gp.muR + gp.sigmaR * standard_normal(rng)});
  }
  return p;
}

}  // namespace progdisp::testing
