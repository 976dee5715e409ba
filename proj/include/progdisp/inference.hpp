#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dataset.hpp"
#include "draws.hpp"
#include "errors.hpp"
#include "io.hpp"
#include "model.hpp"
#include "rng.hpp"
#include "stats.hpp"

namespace progdisp {

// ---------------------------------------------------------------------------
// Severity

struct Estimate {
  double mean = 0.0;
  double sd = 0.0;
};

/// Posterior of Z at bin `t` (normalized time t * delta), from the draws of
/// one patient's (z0, r).
inline Estimate severity_estimate(const PosteriorDraws& draws, const std::string& patient_id, double t,
                                  double delta) {
  if (!draws.has("z0[" + patient_id + "]")) throw LookupError("no fitted patient '" + patient_id + "'");
  const std::size_t kz = draws.index("z0[" + patient_id + "]");
  const std::size_t kr = draws.index("r[" + patient_id + "]");
  const double tau = t * delta;
  std::vector<double> z(draws.n_draws());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = draws.at(i, kz) + draws.at(i, kr) * tau;
  if (z.empty()) throw InvalidParameter("severity_estimate: no draws");
  return {mean(z), z.size() < 2 ? 0.0 : std::sqrt(variance(z))};
}

/// Posterior-mean (z0, r) for every patient of `data`, in dataset order.
inline std::vector<PatientLatents> latent_means(const PosteriorDraws& draws, const Dataset& data) {
  std::vector<PatientLatents> out;
  out.reserve(data.size());
  for (const auto& rec : data.patients) {
    if (!draws.has("z0[" + rec.patient_id + "]")) throw LookupError("no fitted patient '" + rec.patient_id + "'");
    out.push_back({draws.posterior_mean("z0[" + rec.patient_id + "]"), draws.posterior_mean("r[" + rec.patient_id + "]")});
  }
  return out;
}

/// True and estimated severity at one visit.
struct SeverityPoint {
  int group = 0;
  double truth = 0.0;
  double estimate = 0.0;
};

/// One point per visit (bin 0 included) of every patient.
inline std::vector<SeverityPoint> visit_severity_points(const Dataset& data, const std::vector<PatientLatents>& truth,
                                                        const std::vector<PatientLatents>& estimate) {
  if (truth.size() != data.size() || estimate.size() != data.size())
    throw InvalidParameter("visit_severity_points: one latent pair per patient required");
  std::vector<SeverityPoint> out;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& rec = data.patients[i];
    for (std::size_t t = 0; t < rec.horizon(); ++t) {
      if (!rec.visit(t)) continue;
      const double tau = static_cast<double>(t) * data.delta;
      out.push_back({rec.group.index, truth[i].severity(tau), estimate[i].severity(tau)});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parameter recovery

/// True and posterior-mean values of one fit.
struct RecoveryTrial {
  std::map<std::string, double> truth;
  std::map<std::string, double> estimate;
  std::vector<SeverityPoint> severity;
};

/// Pairs every global parameter of a fit with its generating value. A
/// shared rate parameter ("muR", "sigmaR") takes the reference group's value.
inline RecoveryTrial recovery_trial(const PosteriorDraws& draws, std::size_t n_global, const Truth& truth,
                                    const Dataset& data, int pinned_group = 0) {
  RecoveryTrial trial;
  for (std::size_t k = 0; k < n_global; ++k) {
    const std::string& name = draws.names[k];
    std::string key = name;
    if (!truth.has(key)) key = name + "[" + std::to_string(pinned_group) + "]";
    trial.truth[name] = truth.at(key);
    trial.estimate[name] = draws.posterior_mean(k);
  }
  trial.severity = visit_severity_points(data, truth.params(data).latents, latent_means(draws, data));
  return trial;
}

struct ParameterRecovery {
  std::string name;
  std::size_t n_trials = 0;
  std::optional<double> pearson;  ///< empty when either side has no spread
  std::optional<double> slope;    ///< no-intercept calibration slope
};

struct GroupSeverityRecovery {
  int group = 0;
  std::size_t n = 0;
  std::optional<double> pearson;
  std::optional<double> slope;
  double mean_error = 0.0;  ///< mean(estimate - truth)
};

struct RecoveryReport {
  std::vector<ParameterRecovery> parameters;
  std::vector<GroupSeverityRecovery> groups;
  std::optional<double> mean_pearson;  ///< over parameters with a defined r
  std::optional<double> median_pearson;
  std::optional<double> mean_slope;
  std::size_t n_undefined = 0;  ///< parameters whose r is undefined
};

namespace detail {

// Sorting first makes the sums, and so the result, independent of input order.
inline std::pair<std::optional<double>, std::optional<double>> fit_pairs(std::vector<std::pair<double, double>> xy) {
  std::sort(xy.begin(), xy.end());
  std::vector<double> x, y;
  for (const auto& [a, b] : xy) {
    x.push_back(a);
    y.push_back(b);
  }
  return {pearson(x, y), slope_through_origin(x, y)};
}

}  // namespace detail

/// Correlation and no-intercept slope of estimate on truth per parameter
/// across trials, plus per-group severity agreement pooled over trials.
inline RecoveryReport recovery_report(const std::vector<RecoveryTrial>& trials) {
  if (trials.size() < 2) throw ConfigError("recovery_report: at least two trials are required");
  std::set<std::string> names;
  for (const auto& t : trials)
    for (const auto& [name, v] : t.estimate) names.insert(name);

  RecoveryReport out;
  std::vector<double> rs, slopes;
  for (const auto& name : names) {
    std::vector<std::pair<double, double>> xy;
    for (const auto& t : trials) {
      auto e = t.estimate.find(name);
      auto x = t.truth.find(name);
      if (e != t.estimate.end() && x != t.truth.end()) xy.emplace_back(x->second, e->second);
    }
    ParameterRecovery p;
    p.name = name;
    p.n_trials = xy.size();
    if (xy.size() >= 2) std::tie(p.pearson, p.slope) = detail::fit_pairs(std::move(xy));
    if (p.pearson) rs.push_back(*p.pearson);
    else ++out.n_undefined;
    if (p.slope) slopes.push_back(*p.slope);
    out.parameters.push_back(std::move(p));
  }
  if (!rs.empty()) {
    out.mean_pearson = mean(rs);
    std::sort(rs.begin(), rs.end());
    const std::size_t m = rs.size();
    out.median_pearson = m % 2 ? rs[m / 2] : 0.5 * (rs[m / 2 - 1] + rs[m / 2]);
  }
  if (!slopes.empty()) out.mean_slope = mean(slopes);

  std::map<int, std::vector<std::pair<double, double>>> by_group;
  for (const auto& t : trials)
    for (const auto& s : t.severity) by_group[s.group].emplace_back(s.truth, s.estimate);
  for (auto& [g, xy] : by_group) {
    GroupSeverityRecovery gs;
    gs.group = g;
    gs.n = xy.size();
    std::sort(xy.begin(), xy.end());
    double err = 0.0;
    for (const auto& [x, y] : xy) err += y - x;
    gs.mean_error = err / static_cast<double>(xy.size());
    std::tie(gs.pearson, gs.slope) = detail::fit_pairs(std::move(xy));
    out.groups.push_back(gs);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Disparity magnitudes

/// Progression rates smaller than this in magnitude make the delay
/// conversion meaningless.
inline constexpr double kMinMeanRate = 1e-6;

/// How much later in its progression a group arrives: delta_muZ0 / rate in
/// model time units, times `years_per_unit`. Empty when the rate is ~0.
inline std::optional<double> care_delay_years(double delta_muZ0, double mean_rate, double years_per_unit) {
  if (!(years_per_unit > 0.0) || !std::isfinite(years_per_unit))
    throw ConfigError("years_per_unit must be a positive number");
  if (!(std::abs(mean_rate) >= kMinMeanRate)) return std::nullopt;
  return delta_muZ0 / mean_rate * years_per_unit;
}

/// Multiplicative visit-rate change at equal severity.
inline double visit_rate_ratio(double betaA) { return std::exp(betaA); }

struct Interval {
  double mean = 0.0;
  double lower = 0.0;  ///< 2.5% percentile
  double upper = 0.0;  ///< 97.5% percentile
};

inline Interval percentile_interval(std::vector<double> xs) {
  if (xs.empty()) throw InvalidParameter("percentile_interval: no values");
  const double m = mean(xs);
  return {m, quantile(xs, 0.025), quantile(std::move(xs), 0.975)};
}

struct GroupDisparity {
  int group = 0;
  bool pinned = false;
  std::optional<Interval> delta_muZ0;     ///< absent when the fit has no such parameter
  std::optional<double> delay_units;       ///< delta_muZ0.mean / mean rate
  std::optional<double> delay_years;
  std::optional<Interval> delay_years_draws;  ///< per-draw ratio, for uncertainty
  std::optional<Interval> betaA;
  double rate_ratio = 1.0;                 ///< exp(posterior mean of betaA)
  std::optional<Interval> rate_ratio_draws;
};

struct DisparitySummary {
  double mean_rate = 0.0;  ///< average over groups of the posterior-mean muR
  bool delay_defined = false;
  double years_per_unit = 0.0;
  std::vector<GroupDisparity> groups;
};

/// Per-group differences from the reference group, converted to care delay
/// and visit-rate ratios.
inline DisparitySummary disparity_summary(const PosteriorDraws& draws, int n_groups, int pinned_group,
                                          double years_per_unit) {
  if (n_groups < 2) throw ConfigError("disparity_summary: at least two groups are required");
  if (!(years_per_unit > 0.0) || !std::isfinite(years_per_unit))
    throw ConfigError("disparity_summary: years_per_unit must be a positive number");
  if (draws.n_draws() == 0) throw InvalidParameter("disparity_summary: no draws");
  auto sub = [](const char* base, int g) { return std::string(base) + "[" + std::to_string(g) + "]"; };

  DisparitySummary out;
  out.years_per_unit = years_per_unit;
  const std::size_t n = draws.n_draws();
  std::vector<double> rate_draw(n, 0.0);
  if (draws.has("muR")) {
    rate_draw = draws.column("muR");
  } else {
    for (int g = 0; g < n_groups; ++g) {
      const auto col = draws.column(sub("muR", g));
      for (std::size_t i = 0; i < n; ++i) rate_draw[i] += col[i] / n_groups;
    }
  }
  out.mean_rate = mean(rate_draw);
  out.delay_defined = std::abs(out.mean_rate) >= kMinMeanRate;

  for (int g = 0; g < n_groups; ++g) {
    GroupDisparity gd;
    gd.group = g;
    gd.pinned = g == pinned_group;
    if (gd.pinned) {
      gd.delta_muZ0 = Interval{};
      gd.betaA = Interval{};
      gd.rate_ratio = 1.0;
      gd.rate_ratio_draws = Interval{1.0, 1.0, 1.0};
      if (out.delay_defined) {
        gd.delay_units = 0.0;
        gd.delay_years = 0.0;
        gd.delay_years_draws = Interval{};
      }
      out.groups.push_back(gd);
      continue;
    }
    if (draws.has(sub("muZ0", g))) {
      const auto col = draws.column(sub("muZ0", g));
      gd.delta_muZ0 = percentile_interval(col);
      if (out.delay_defined) {
        gd.delay_units = gd.delta_muZ0->mean / out.mean_rate;
        gd.delay_years = care_delay_years(gd.delta_muZ0->mean, out.mean_rate, years_per_unit);
        std::vector<double> years;
        for (std::size_t i = 0; i < n; ++i)
          if (std::abs(rate_draw[i]) >= kMinMeanRate) years.push_back(col[i] / rate_draw[i] * years_per_unit);
        if (!years.empty()) gd.delay_years_draws = percentile_interval(std::move(years));
      }
    }
    if (draws.has(sub("betaA", g))) {
      std::vector<double> col = draws.column(sub("betaA", g));
      gd.betaA = percentile_interval(col);
      gd.rate_ratio = visit_rate_ratio(gd.betaA->mean);
      for (double& v : col) v = std::exp(v);
      gd.rate_ratio_draws = percentile_interval(std::move(col));
    }
    out.groups.push_back(gd);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cluster bootstrap

/// A statistic of a resampled cohort, given as patient indices (with
/// repeats). Returns empty when undefined on that resample.
using ClusterStatistic = std::function<std::optional<double>(std::span<const std::size_t>)>;

struct BootstrapResult {
  std::optional<double> estimate;  ///< statistic on the original cohort
  double lower = 0.0;
  double upper = 0.0;
  std::size_t n_valid = 0;
  std::size_t n_dropped = 0;  ///< replicates where the statistic was undefined
};

/// Resamples whole patients with replacement and returns the equal-tailed
/// 95% percentile interval of the statistic.
inline BootstrapResult cluster_bootstrap(const ClusterStatistic& statistic, std::size_t n_patients, int n_boot,
                                         std::uint64_t seed) {
  if (n_boot < 100) throw ConfigError("cluster_bootstrap: n_boot must be at least 100");
  if (n_patients == 0) throw InvalidParameter("cluster_bootstrap: no patients");
  BootstrapResult out;
  std::vector<std::size_t> idx(n_patients);
  for (std::size_t i = 0; i < n_patients; ++i) idx[i] = i;
  out.estimate = statistic(idx);

  Rng rng = make_stream(seed, streams::kBootstrap, 0);
  std::uniform_int_distribution<std::size_t> pick(0, n_patients - 1);
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(n_boot));
  for (int b = 0; b < n_boot; ++b) {
    for (auto& i : idx) i = pick(rng);
    const std::optional<double> v = statistic(idx);
    if (v && std::isfinite(*v)) values.push_back(*v);
    else ++out.n_dropped;
  }
  out.n_valid = values.size();
  if (values.empty()) throw InvalidParameter("cluster_bootstrap: the statistic was undefined on every replicate");
  out.lower = quantile(values, 0.025);
  out.upper = quantile(std::move(values), 0.975);
  return out;
}

}  // namespace progdisp
