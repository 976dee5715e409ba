#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "draws.hpp"
#include "errors.hpp"
#include "stats.hpp"

namespace progdisp {

using ChainSet = std::vector<std::vector<double>>;

namespace detail {

inline std::size_t common_length(const ChainSet& chains) {
  std::size_t n = std::numeric_limits<std::size_t>::max();
  for (const auto& c : chains) n = std::min(n, c.size());
  return chains.empty() ? 0 : n;
}

/// Classic potential scale reduction on equal-length chains.
inline double basic_rhat(const ChainSet& chains) {
  const std::size_t m = chains.size();
  const std::size_t n = common_length(chains);
  std::vector<double> means(m), vars(m);
  for (std::size_t c = 0; c < m; ++c) {
    std::span<const double> x(chains[c].data(), n);
    means[c] = mean(x);
    vars[c] = variance(x);
  }
  const double w = mean(vars);
  const double b_over_n = variance(means);
  if (!(w > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  const double nn = static_cast<double>(n);
  const double var_plus = (nn - 1.0) / nn * w + b_over_n;
  return std::sqrt(var_plus / w);
}

/// Splits each chain into halves, dropping the middle draw of odd lengths.
inline ChainSet split_chains(const ChainSet& chains) {
  const std::size_t n = common_length(chains);
  const std::size_t half = n / 2;
  ChainSet out;
  for (const auto& c : chains) {
    out.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(half));
    out.emplace_back(c.begin() + static_cast<std::ptrdiff_t>(n - half), c.begin() + static_cast<std::ptrdiff_t>(n));
  }
  return out;
}

/// Replaces every value by the normal score of its pooled rank (average
/// ranks for ties).
inline ChainSet rank_normalize(const ChainSet& chains) {
  std::vector<std::pair<double, std::size_t>> all;
  for (std::size_t c = 0; c < chains.size(); ++c)
    for (std::size_t i = 0; i < chains[c].size(); ++i) all.emplace_back(chains[c][i], all.size());
  const std::size_t s = all.size();
  std::vector<std::size_t> order(s);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return all[a].first < all[b].first; });
  std::vector<double> rank(s);
  for (std::size_t i = 0; i < s;) {
    std::size_t j = i;
    while (j + 1 < s && all[order[j + 1]].first == all[order[i]].first) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  ChainSet out = chains;
  std::size_t flat = 0;
  const double denom = static_cast<double>(s) + 0.25;
  for (auto& c : out)
    for (double& v : c) v = normal_quantile((rank[flat++] - 0.375) / denom);
  return out;
}

}  // namespace detail

/**
 * Rank-normalized split R-hat: the larger of the bulk value (on rank-normal
 * scores) and the tail value (on scores of the distance from the median).
 * Requires at least two chains of at least four draws.
 */
inline double rhat(const ChainSet& chains) {
  if (chains.size() < 2) throw ConfigError("rhat needs at least two chains");
  const std::size_t n = detail::common_length(chains);
  if (n < 4) throw ConfigError("rhat needs at least four draws per chain");
  const ChainSet split = detail::split_chains(chains);
  const double bulk = detail::basic_rhat(detail::rank_normalize(split));

  std::vector<double> pooled;
  for (const auto& c : split) pooled.insert(pooled.end(), c.begin(), c.end());
  const double med = quantile(pooled, 0.5);
  ChainSet folded = split;
  for (auto& c : folded)
    for (double& v : c) v = std::abs(v - med);
  const double tail = detail::basic_rhat(detail::rank_normalize(folded));
  if (std::isnan(bulk)) return tail;
  if (std::isnan(tail)) return bulk;
  return std::max(bulk, tail);
}

/**
 * Effective sample size from the multi-chain autocorrelation estimate,
 * truncated by Geyer's initial positive sequence and made monotone.
 * Autocovariances are computed lag by lag only as far as needed.
 */
inline double ess(const ChainSet& chains) {
  if (chains.empty()) throw ConfigError("ess needs at least one chain");
  const std::size_t m = chains.size();
  const std::size_t n = detail::common_length(chains);
  if (n < 4) throw ConfigError("ess needs at least four draws per chain");
  const double nn = static_cast<double>(n);

  std::vector<double> means(m);
  for (std::size_t c = 0; c < m; ++c) means[c] = mean(std::span<const double>(chains[c].data(), n));

  auto mean_acov = [&](std::size_t lag) {
    double total = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
      double s = 0.0;
      for (std::size_t i = 0; i + lag < n; ++i) s += (chains[c][i] - means[c]) * (chains[c][i + lag] - means[c]);
      total += s / nn;
    }
    return total / static_cast<double>(m);
  };

  const double acov0 = mean_acov(0);
  const double mean_var = acov0 * nn / (nn - 1.0);
  double var_plus = mean_var * (nn - 1.0) / nn;
  if (m > 1) var_plus += variance(means);
  if (!(var_plus > 0.0)) return std::numeric_limits<double>::quiet_NaN();

  std::vector<double> rho(n + 2, 0.0);
  rho[0] = 1.0;
  double rho_even = 1.0;
  double rho_odd = 1.0 - (mean_var - mean_acov(1)) / var_plus;
  rho[1] = rho_odd;
  std::size_t s = 1;
  while (s < n - 4 && rho_even + rho_odd > 0.0) {
    rho_even = 1.0 - (mean_var - mean_acov(s + 1)) / var_plus;
    rho_odd = 1.0 - (mean_var - mean_acov(s + 2)) / var_plus;
    if (rho_even + rho_odd >= 0.0) {
      rho[s + 1] = rho_even;
      rho[s + 2] = rho_odd;
    }
    s += 2;
  }
  const std::size_t max_s = s;
  if (rho_even > 0.0) rho[max_s + 1] = rho_even;

  for (std::size_t k = 1; k + 3 <= max_s; k += 2) {
    if (rho[k + 1] + rho[k + 2] > rho[k - 1] + rho[k]) {
      rho[k + 1] = 0.5 * (rho[k - 1] + rho[k]);
      rho[k + 2] = rho[k + 1];
    }
  }
  const double total = static_cast<double>(m) * nn;
  double tau = -1.0 + 2.0 * std::accumulate(rho.begin(), rho.begin() + static_cast<std::ptrdiff_t>(max_s), 0.0) +
               rho[max_s + 1];
  tau = std::max(tau, 1.0 / std::log10(total));
  return total / tau;
}

inline double rhat(const PosteriorDraws& draws, const std::string& name) { return rhat(draws.chains(name)); }
inline double ess(const PosteriorDraws& draws, const std::string& name) { return ess(draws.chains(name)); }

/// Monte Carlo standard error of the posterior mean.
inline double mcse_mean(const ChainSet& chains) {
  std::vector<double> pooled;
  for (const auto& c : chains) pooled.insert(pooled.end(), c.begin(), c.end());
  return std::sqrt(variance(pooled) / ess(chains));
}

struct ParameterDiagnostics {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
  double rhat = 0.0;
  double ess = 0.0;
};

/// Per-parameter summary for the first `count` columns (all when 0).
inline std::vector<ParameterDiagnostics> summarize(const PosteriorDraws& draws, std::size_t count = 0) {
  if (count == 0 || count > draws.dim()) count = draws.dim();
  std::vector<ParameterDiagnostics> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const ChainSet chains = draws.chains(k);
    const std::vector<double> col = draws.column(k);
    ParameterDiagnostics p;
    p.name = draws.names[k];
    p.mean = mean(col);
    p.sd = std::sqrt(variance(col));
    p.rhat = chains.size() >= 2 ? rhat(chains) : std::numeric_limits<double>::quiet_NaN();
    p.ess = ess(chains);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace progdisp
