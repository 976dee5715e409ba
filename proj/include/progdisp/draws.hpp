#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "errors.hpp"

namespace progdisp {

/// Post-warmup sampler output. `values` is row-major, one row per draw, in
/// the order of `names`. Rows of one chain are contiguous.
struct PosteriorDraws {
  std::vector<std::string> names;
  std::vector<double> values;
  std::vector<int> chain_ids;
  std::vector<double> accept_stats;
  std::vector<std::uint8_t> divergent;
  std::vector<int> n_leapfrog;
  std::vector<double> step_sizes;  ///< adapted step size per chain
  std::vector<std::string> warnings;

  std::size_t n_draws() const { return chain_ids.size(); }
  std::size_t dim() const { return names.size(); }

  int n_chains() const {
    int m = 0;
    for (int c : chain_ids) m = std::max(m, c + 1);
    return m;
  }

  double at(std::size_t draw, std::size_t k) const { return values[draw * dim() + k]; }

  std::size_t index(const std::string& name) const {
    if (index_.size() != names.size()) {
      index_.clear();
      for (std::size_t k = 0; k < names.size(); ++k) index_.emplace(names[k], k);
    }
    auto it = index_.find(name);
    if (it == index_.end()) throw LookupError("no parameter named '" + name + "' in the draws");
    return it->second;
  }

  bool has(const std::string& name) const {
    for (const auto& n : names)
      if (n == name) return true;
    return false;
  }

  std::vector<double> column(std::size_t k) const {
    std::vector<double> out(n_draws());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = at(i, k);
    return out;
  }
  std::vector<double> column(const std::string& name) const { return column(index(name)); }

  /// Draws of one parameter split by chain.
  std::vector<std::vector<double>> chains(std::size_t k) const {
    std::vector<std::vector<double>> out(static_cast<std::size_t>(n_chains()));
    for (std::size_t i = 0; i < n_draws(); ++i)
      out[static_cast<std::size_t>(chain_ids[i])].push_back(at(i, k));
    return out;
  }
  std::vector<std::vector<double>> chains(const std::string& name) const { return chains(index(name)); }

  double posterior_mean(std::size_t k) const {
    double s = 0.0;
    for (std::size_t i = 0; i < n_draws(); ++i) s += at(i, k);
    return s / static_cast<double>(n_draws());
  }
  double posterior_mean(const std::string& name) const { return posterior_mean(index(name)); }

  std::size_t n_divergent() const {
    std::size_t n = 0;
    for (auto v : divergent) n += v;
    return n;
  }

 private:
  mutable std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace progdisp
