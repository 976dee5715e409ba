#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "progdisp/diagnostics.hpp"
#include "progdisp/sampler.hpp"

using namespace progdisp;

namespace {

LogDensityGradient standard_normal_target() {
  return [](std::span<const double> x, std::span<double> g) {
    double lp = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      lp -= 0.5 * x[i] * x[i];
      g[i] = -x[i];
    }
    return lp;
  };
}

// Bivariate normal with unit variances and correlation rho.
LogDensityGradient correlated_target(double rho) {
  return [rho](std::span<const double> x, std::span<double> g) {
    const double c = 1.0 / (1.0 - rho * rho);
    g[0] = -c * (x[0] - rho * x[1]);
    g[1] = -c * (x[1] - rho * x[0]);
    return -0.5 * c * (x[0] * x[0] - 2.0 * rho * x[0] * x[1] + x[1] * x[1]);
  };
}

ChainSet iid_chains(int m, int n, double offset_step, std::uint64_t seed) {
  Rng rng = make_stream(seed, 77, 0);
  ChainSet chains(static_cast<std::size_t>(m));
  for (int c = 0; c < m; ++c)
    for (int i = 0; i < n; ++i) chains[static_cast<std::size_t>(c)].push_back(standard_normal(rng) + offset_step * c);
  return chains;
}

}  // namespace

TEST(Sampler, StandardNormalFiveDimensions) {
  SamplerConfig cfg;
  cfg.seed = 11;
  const auto f = standard_normal_target();
  const PosteriorDraws d = sample(f, 5, cfg);
  ASSERT_EQ(d.n_draws(), 4000u);
  for (std::size_t k = 0; k < 5; ++k) {
    const ChainSet ch = d.chains(k);
    const std::vector<double> col = d.column(k);
    EXPECT_LT(std::abs(mean(col)), 3.0 * mcse_mean(ch)) << k;
    EXPECT_NEAR(variance(col), 1.0, 0.1) << k;
    EXPECT_LT(rhat(ch), 1.01);
  }
  EXPECT_TRUE(d.warnings.empty());
}

TEST(Sampler, CorrelatedGaussianCovariance) {
  SamplerConfig cfg;
  cfg.seed = 12;
  const PosteriorDraws d = sample(correlated_target(0.9), 2, cfg);
  const auto a = d.column(0), b = d.column(1);
  const double ma = mean(a), mb = mean(b);
  double cab = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) cab += (a[i] - ma) * (b[i] - mb);
  cab /= static_cast<double>(a.size() - 1);
  EXPECT_NEAR(variance(a), 1.0, 0.1);
  EXPECT_NEAR(variance(b), 1.0, 0.1);
  EXPECT_NEAR(cab, 0.9, 0.09);
}

TEST(Sampler, DenseBlockLearnsStrongCorrelation) {
  // Coordinates 0 and 1 are correlated at 0.99 and share the dense block;
  // coordinates 2..4 are independent and stay on the diagonal.
  const double rho = 0.99;
  LogDensityGradient f = [rho](std::span<const double> x, std::span<double> g) {
    const double c = 1.0 / (1.0 - rho * rho);
    g[0] = -c * (x[0] - rho * x[1]);
    g[1] = -c * (x[1] - rho * x[0]);
    double lp = -0.5 * c * (x[0] * x[0] - 2.0 * rho * x[0] * x[1] + x[1] * x[1]);
    for (std::size_t i = 2; i < x.size(); ++i) {
      g[i] = -x[i] / 4.0;
      lp -= 0.5 * x[i] * x[i] / 4.0;
    }
    return lp;
  };
  SamplerConfig cfg;
  cfg.seed = 21;
  const PosteriorDraws diag = sample(f, 5, cfg);
  cfg.dense_block = 2;
  const PosteriorDraws dense = sample(f, 5, cfg);

  const auto a = dense.column(0), b = dense.column(1);
  const double ma = mean(a), mb = mean(b);
  double cab = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) cab += (a[i] - ma) * (b[i] - mb);
  cab /= static_cast<double>(a.size() - 1);
  EXPECT_NEAR(variance(a), 1.0, 0.1);
  EXPECT_NEAR(variance(b), 1.0, 0.1);
  EXPECT_NEAR(cab, rho, 0.1);
  // Five means checked at once, two of them nearly the same quantity: a
  // 4-MCSE band keeps the family-wise false alarm rate small.
  for (std::size_t k = 0; k < 5; ++k) EXPECT_LT(std::abs(mean(dense.column(k))), 4.0 * mcse_mean(dense.chains(k)));
  for (std::size_t k = 2; k < 5; ++k) EXPECT_NEAR(variance(dense.column(k)), 4.0, 0.4);

  auto mean_leapfrog = [](const PosteriorDraws& d) {
    double s = 0.0;
    for (int n : d.n_leapfrog) s += n;
    return s / static_cast<double>(d.n_draws());
  };
  // The dense block removes the 0.99 ridge, so trajectories get much shorter.
  EXPECT_LT(2.0 * mean_leapfrog(dense), mean_leapfrog(diag));
}

TEST(Sampler, FixedSeedIsBitReproducible) {
  SamplerConfig cfg;
  cfg.seed = 13;
  cfg.warmup = 200;
  cfg.draws = 200;
  const auto f = correlated_target(0.5);
  const PosteriorDraws a = sample(f, 2, cfg);
  const PosteriorDraws b = sample(f, 2, cfg);
  EXPECT_EQ(a.values, b.values);
  cfg.threads = 4;
  const PosteriorDraws c = sample(f, 2, cfg);
  EXPECT_EQ(a.values, c.values);
  cfg.seed = 14;
  const PosteriorDraws e = sample(f, 2, cfg);
  EXPECT_NE(a.values, e.values);
}

TEST(Sampler, OneDimensionalKolmogorovSmirnov) {
  SamplerConfig cfg;
  cfg.seed = 15;
  cfg.draws = 4000;
  const PosteriorDraws d = sample(standard_normal_target(), 1, cfg);
  // Keep every fourth draw: 4000 nearly independent draws, so the iid
  // critical value applies (unthinned 1-D NUTS draws have ESS near n / 3).
  const std::vector<double> all = d.column(0);
  std::vector<double> x;
  for (std::size_t i = 0; i < all.size(); i += 4) x.push_back(all[i]);
  ASSERT_EQ(x.size(), 4000u);
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double ks = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double F = normal_cdf(x[i]);
    ks = std::max({ks, static_cast<double>(i + 1) / n - F, F - static_cast<double>(i) / n});
  }
  // Asymptotic 1% critical value of the one-sample statistic.
  EXPECT_LT(ks, 1.628 / std::sqrt(n));
}

TEST(Sampler, LeapfrogErrorIsSecondOrder) {
  const auto f = standard_normal_target();
  std::vector<double> p0 = {0.8, -1.1, 0.3};
  const std::vector<double> q0 = {1.0, 0.5, -0.7};
  auto worst = [&](double eps) {
    detail::NutsChain chain(f, 3, 10, make_stream(1, 1, 1));
    chain.set_position(q0);
    return chain.max_energy_error(p0, eps, static_cast<int>(std::round(2.0 / eps)));
  };
  const double e1 = worst(0.2), e2 = worst(0.1);
  EXPECT_GT(e1 / e2, 3.0);
}

TEST(Sampler, RejectsBadInputs) {
  SamplerConfig cfg;
  cfg.target_accept = 1.0;
  EXPECT_THROW(sample(standard_normal_target(), 2, cfg), ConfigError);
  cfg = SamplerConfig{};
  cfg.dense_block = -1;
  EXPECT_THROW(sample(standard_normal_target(), 2, cfg), ConfigError);
  cfg = SamplerConfig{};
  SampleOptions opt;
  opt.init = std::vector<double>{std::nan(""), 0.0};
  EXPECT_THROW(sample(standard_normal_target(), 2, cfg, opt), InvalidParameter);
  opt.init = std::vector<double>{0.0};
  EXPECT_THROW(sample(standard_normal_target(), 2, cfg, opt), InvalidParameter);
}

TEST(Sampler, DivergenceWarningOnPathologicalTarget) {
  // A density with an unreachable-looking wall: log p = -inf beyond |x| > 1
  // forces most long trajectories to diverge.
  LogDensityGradient f = [](std::span<const double> x, std::span<double> g) {
    g[0] = -1e4 * x[0];
    if (std::abs(x[0]) > 1.0) return -std::numeric_limits<double>::infinity();
    return -0.5e4 * x[0] * x[0];
  };
  SamplerConfig cfg;
  cfg.seed = 16;
  cfg.warmup = 50;
  cfg.draws = 100;
  cfg.chains = 1;
  const PosteriorDraws d = sample(f, 1, cfg);
  EXPECT_EQ(d.n_draws(), 100u);
  // Only structural here: the warning mirrors the divergence count.
  const bool many = d.n_divergent() * 5 > d.n_draws();
  EXPECT_EQ(many, !d.warnings.empty());
}

TEST(Diagnostics, IidChainsGiveUnitRhat) {
  const ChainSet ch = iid_chains(4, 1000, 0.0, 1);
  const double r = rhat(ch);
  EXPECT_GE(r, 0.99);
  EXPECT_LE(r, 1.01);
}

TEST(Diagnostics, OffsetChainsGiveLargeRhat) {
  EXPECT_GT(rhat(iid_chains(4, 500, 10.0, 2)), 1.5);
}

TEST(Diagnostics, SingleChainRhatIsAnError) {
  const ChainSet one = iid_chains(1, 100, 0.0, 3);
  EXPECT_THROW(rhat(one), ConfigError);
  EXPECT_GT(ess(one), 0.0);
}

TEST(Diagnostics, WhiteNoiseEssNearLength) {
  const ChainSet one = iid_chains(1, 4000, 0.0, 4);
  EXPECT_NEAR(ess(one), 4000.0, 800.0);
  const ChainSet four = iid_chains(4, 1000, 0.0, 5);
  EXPECT_NEAR(ess(four), 4000.0, 800.0);
}

TEST(Diagnostics, AutocorrelatedChainHasSmallerEss) {
  Rng rng = make_stream(6, 77, 0);
  ChainSet ch(1);
  double x = 0.0;
  for (int i = 0; i < 4000; ++i) {
    x = 0.9 * x + std::sqrt(1 - 0.81) * standard_normal(rng);
    ch[0].push_back(x);
  }
  // AR(1) with phi = 0.9: ESS / n = (1 - phi) / (1 + phi).
  EXPECT_NEAR(ess(ch) / 4000.0, 0.1 / 1.9, 0.03);
}
