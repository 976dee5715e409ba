#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "progdisp/inference.hpp"
#include "support.hpp"

using namespace progdisp;

namespace {

// Draws over two chains for patients p0..p{n-1} with arbitrary globals.
PosteriorDraws latent_draws(int n_patients, int n_draws, std::uint64_t seed, bool zero_rate = false) {
  Rng rng = make_stream(seed, 77, 0);
  PosteriorDraws d;
  d.names = {"beta0"};
  for (int i = 0; i < n_patients; ++i) {
    d.names.push_back("z0[p" + std::to_string(i) + "]");
    d.names.push_back("r[p" + std::to_string(i) + "]");
  }
  for (int k = 0; k < n_draws; ++k) {
    d.chain_ids.push_back(k % 2);
    d.values.push_back(standard_normal(rng));
    for (int i = 0; i < n_patients; ++i) {
      d.values.push_back(0.3 * i + standard_normal(rng));
      d.values.push_back(zero_rate ? 0.0 : 1.0 + 0.5 * standard_normal(rng));
    }
  }
  return d;
}

PosteriorDraws disparity_draws(double muZ0, double betaA, double muR0, double muR1, int n = 400) {
  PosteriorDraws d;
  d.names = {"muZ0[1]", "muR[0]", "muR[1]", "betaA[1]"};
  // Symmetric perturbations keep each column's mean exactly at the centre.
  for (int k = 0; k < n; ++k) {
    const double e = (k % 2 ? 1.0 : -1.0) * 0.01 * (k / 2 % 7);
    d.chain_ids.push_back(k % 2);
    d.values.insert(d.values.end(), {muZ0 + e, muR0 + e, muR1 - e, betaA + e});
  }
  return d;
}

RecoveryTrial trial_from(const std::vector<double>& truth, double scale) {
  RecoveryTrial t;
  for (std::size_t k = 0; k < truth.size(); ++k) {
    t.truth["p" + std::to_string(k)] = truth[k];
    t.estimate["p" + std::to_string(k)] = scale * truth[k];
  }
  t.severity.push_back({0, truth[0], scale * truth[0]});
  t.severity.push_back({1, truth[1], scale * truth[1]});
  return t;
}

}  // namespace

TEST(SeverityEstimate, AtZeroEqualsMeanOfZ0) {
  const PosteriorDraws d = latent_draws(5, 300, 1);
  for (int i = 0; i < 5; ++i) {
    const std::string id = "p" + std::to_string(i);
    EXPECT_NEAR(severity_estimate(d, id, 0.0, 0.02).mean, d.posterior_mean("z0[" + id + "]"), 1e-12);
  }
}

TEST(SeverityEstimate, ZeroRateIsConstantInTime) {
  const PosteriorDraws d = latent_draws(3, 200, 2, true);
  const Estimate a = severity_estimate(d, "p2", 0.0, 0.02);
  for (double t : {1.0, 10.0, 49.0}) {
    const Estimate b = severity_estimate(d, "p2", t, 0.02);
    EXPECT_EQ(a.mean, b.mean);
    EXPECT_EQ(a.sd, b.sd);
  }
}

TEST(SeverityEstimate, MatchesPerDrawRecomputation) {
  const PosteriorDraws d = latent_draws(10, 500, 3);
  Rng rng = make_stream(4, 77, 2);
  const double delta = 0.02;
  for (int i = 0; i < 10; ++i) {
    const std::string id = "p" + std::to_string(i);
    const double t = std::floor(50.0 * uniform01(rng));
    // Oracle: walk the raw value buffer directly.
    const std::size_t stride = d.names.size();
    const std::size_t kz = 1 + 2 * static_cast<std::size_t>(i);
    double s = 0.0, s2 = 0.0;
    for (std::size_t k = 0; k < d.n_draws(); ++k) {
      const double z = d.values[k * stride + kz] + d.values[k * stride + kz + 1] * t * delta;
      s += z;
      s2 += z * z;
    }
    const double n = static_cast<double>(d.n_draws());
    const double m = s / n;
    const double sd = std::sqrt((s2 - n * m * m) / (n - 1.0));
    const Estimate e = severity_estimate(d, id, t, delta);
    EXPECT_NEAR(e.mean, m, 1e-10);
    EXPECT_NEAR(e.sd, sd, 1e-8);
  }
}

TEST(SeverityEstimate, DifferenceIsLinearInTime) {
  const PosteriorDraws d = latent_draws(4, 400, 5);
  const double delta = 0.02;
  for (int i = 0; i < 4; ++i) {
    const std::string id = "p" + std::to_string(i);
    const double mr = d.posterior_mean("r[" + id + "]");
    for (auto [t1, t2] : {std::pair{0.0, 10.0}, std::pair{3.0, 47.0}, std::pair{20.0, 21.0}}) {
      const double diff = severity_estimate(d, id, t2, delta).mean - severity_estimate(d, id, t1, delta).mean;
      EXPECT_NEAR(diff, mr * (t2 - t1) * delta, 1e-12);
    }
  }
}

TEST(SeverityEstimate, UnknownPatientThrows) {
  const PosteriorDraws d = latent_draws(2, 10, 6);
  EXPECT_THROW(severity_estimate(d, "nobody", 0.0, 0.02), LookupError);
}

TEST(Recovery, PerfectAndScaledEstimates) {
  std::vector<RecoveryTrial> same, doubled;
  Rng rng = make_stream(8, 77, 3);
  for (int k = 0; k < 6; ++k) {
    std::vector<double> truth = {standard_normal(rng), standard_normal(rng), 1.0 + uniform01(rng)};
    same.push_back(trial_from(truth, 1.0));
    doubled.push_back(trial_from(truth, 2.0));
  }
  const RecoveryReport a = recovery_report(same);
  const RecoveryReport b = recovery_report(doubled);
  ASSERT_EQ(a.parameters.size(), 3u);
  for (const auto& p : a.parameters) {
    EXPECT_NEAR(*p.pearson, 1.0, 1e-12);
    EXPECT_NEAR(*p.slope, 1.0, 1e-12);
  }
  for (const auto& p : b.parameters) {
    EXPECT_NEAR(*p.pearson, 1.0, 1e-12);
    EXPECT_NEAR(*p.slope, 2.0, 1e-12);
  }
  EXPECT_NEAR(*b.mean_slope, 2.0, 1e-12);
  ASSERT_EQ(a.groups.size(), 2u);
  EXPECT_NEAR(*a.groups[1].pearson, 1.0, 1e-12);
  EXPECT_NEAR(a.groups[0].mean_error, 0.0, 1e-15);
}

TEST(Recovery, DegenerateParameterIsReported) {
  std::vector<RecoveryTrial> trials;
  for (int k = 0; k < 4; ++k) {
    RecoveryTrial t;
    t.truth["fixed"] = 1.0;
    t.estimate["fixed"] = 1.0 + 0.1 * k;
    t.truth["moving"] = k;
    t.estimate["moving"] = k + 0.5;
    trials.push_back(t);
  }
  const RecoveryReport r = recovery_report(trials);
  EXPECT_EQ(r.n_undefined, 1u);
  EXPECT_FALSE(r.parameters[0].pearson.has_value());  // "fixed" sorts first
  EXPECT_TRUE(r.parameters[0].slope.has_value());
  EXPECT_THROW(recovery_report({trials[0]}), ConfigError);
}

TEST(Recovery, InvariantUnderTrialOrder) {
  std::vector<RecoveryTrial> trials;
  Rng rng = make_stream(9, 77, 4);
  for (int k = 0; k < 12; ++k) {
    RecoveryTrial t;
    for (int j = 0; j < 3; ++j) {
      const double x = standard_normal(rng);
      t.truth["q" + std::to_string(j)] = x;
      t.estimate["q" + std::to_string(j)] = 0.8 * x + 0.3 * standard_normal(rng);
    }
    for (int v = 0; v < 5; ++v) {
      const double x = standard_normal(rng);
      t.severity.push_back({v % 2, x, x + 0.2 * standard_normal(rng)});
    }
    trials.push_back(t);
  }
  const RecoveryReport a = recovery_report(trials);
  std::shuffle(trials.begin(), trials.end(), rng);
  const RecoveryReport b = recovery_report(trials);
  for (std::size_t k = 0; k < a.parameters.size(); ++k) {
    EXPECT_EQ(*a.parameters[k].pearson, *b.parameters[k].pearson);
    EXPECT_EQ(*a.parameters[k].slope, *b.parameters[k].slope);
  }
  for (std::size_t g = 0; g < a.groups.size(); ++g) EXPECT_EQ(*a.groups[g].pearson, *b.groups[g].pearson);
}

TEST(Disparity, WorkedDelayConversion) {
  // 0.22 / 0.62 * 8.5 = 3.016...
  const auto y = care_delay_years(0.22, 0.62, 8.5);
  ASSERT_TRUE(y.has_value());
  EXPECT_NEAR(*y, 0.22 / 0.62 * 8.5, 1e-15);
  EXPECT_NEAR(std::round(*y * 10.0) / 10.0, 3.0, 1e-12);
  EXPECT_FALSE(care_delay_years(0.22, 0.0, 8.5).has_value());
  EXPECT_THROW(care_delay_years(0.22, 0.62, 0.0), ConfigError);
}

TEST(Disparity, SummaryFromDraws) {
  const PosteriorDraws d = disparity_draws(0.22, -0.11, 0.5, 0.74);
  const DisparitySummary s = disparity_summary(d, 2, 0, 8.5);
  EXPECT_NEAR(s.mean_rate, 0.62, 1e-12);
  ASSERT_EQ(s.groups.size(), 2u);
  const GroupDisparity& g = s.groups[1];
  EXPECT_NEAR(g.delta_muZ0->mean, 0.22, 1e-12);
  EXPECT_NEAR(*g.delay_years, 0.22 / 0.62 * 8.5, 1e-10);
  EXPECT_NEAR(*g.delay_units, 0.22 / 0.62, 1e-12);
  // Rate ratio is exp of the posterior mean by construction.
  EXPECT_EQ(g.rate_ratio, std::exp(d.posterior_mean("betaA[1]")));
  EXPECT_LE(g.betaA->lower, g.betaA->mean);
  EXPECT_GE(g.betaA->upper, g.betaA->mean);
  EXPECT_EQ(s.groups[0].rate_ratio, 1.0);
  EXPECT_TRUE(s.groups[0].pinned);
}

TEST(Disparity, ZeroBetaGivesUnitRatioAndZeroRateIsUndefined) {
  const PosteriorDraws d = disparity_draws(0.3, 0.0, 0.0, 0.0);
  const DisparitySummary s = disparity_summary(d, 2, 0, 8.5);
  EXPECT_EQ(visit_rate_ratio(0.0), 1.0);
  EXPECT_FALSE(s.delay_defined);
  EXPECT_FALSE(s.groups[1].delay_years.has_value());
  EXPECT_THROW(disparity_summary(d, 1, 0, 8.5), ConfigError);
  EXPECT_THROW(disparity_summary(d, 2, 0, -1.0), ConfigError);
}

TEST(Bootstrap, ConstantStatisticHasZeroWidth) {
  const BootstrapResult r = cluster_bootstrap([](std::span<const std::size_t>) { return 4.2; }, 50, 200, 1);
  EXPECT_EQ(r.lower, 4.2);
  EXPECT_EQ(r.upper, 4.2);
  EXPECT_EQ(r.n_valid, 200u);
}

TEST(Bootstrap, MeanIntervalMatchesCentralLimit) {
  Rng rng = make_stream(11, 77, 5);
  std::vector<double> values(400);
  for (double& v : values) v = standard_normal(rng);
  auto stat = [&](std::span<const std::size_t> idx) -> std::optional<double> {
    double s = 0.0;
    for (auto i : idx) s += values[i];
    return s / static_cast<double>(idx.size());
  };
  const BootstrapResult r = cluster_bootstrap(stat, values.size(), 2000, 12);
  const double expected = 2.0 * 1.96 / 20.0;
  EXPECT_NEAR(r.upper - r.lower, expected, 0.25 * expected);
  const BootstrapResult again = cluster_bootstrap(stat, values.size(), 2000, 12);
  EXPECT_EQ(r.lower, again.lower);
  EXPECT_EQ(r.upper, again.upper);
}

TEST(Bootstrap, UndefinedReplicatesAreDroppedAndCounted) {
  auto stat = [](std::span<const std::size_t> idx) -> std::optional<double> {
    // Undefined when patient 0 is missing from the resample.
    if (std::find(idx.begin(), idx.end(), 0u) == idx.end()) return std::nullopt;
    return static_cast<double>(idx.size());
  };
  const BootstrapResult r = cluster_bootstrap(stat, 5, 500, 3);
  EXPECT_GT(r.n_dropped, 0u);
  EXPECT_EQ(r.n_valid + r.n_dropped, 500u);
  EXPECT_THROW(cluster_bootstrap(stat, 5, 99, 3), ConfigError);
}
