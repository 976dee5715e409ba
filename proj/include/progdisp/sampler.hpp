#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "draws.hpp"
#include "errors.hpp"
#include "rng.hpp"
#include "stats.hpp"

namespace progdisp {

/// Log density and gradient in one call; returns the log density and writes
/// the gradient. A return of -inf (or NaN) marks an inadmissible point.
using LogDensityGradient = std::function<double(std::span<const double>, std::span<double>)>;

struct SamplerConfig {
  int chains = 4;
  int warmup = 500;
  int draws = 1000;
  double target_accept = 0.8;
  int max_leapfrog = 1024;
  std::uint64_t seed = 0;
  int threads = 1;
  double init_radius = 2.0;  ///< uniform(-r, r) init when nothing else is given
  /// Number of leading coordinates that share a dense inverse metric block;
  /// the rest stay diagonal. 0 gives a purely diagonal metric.
  int dense_block = 0;

  void validate() const {
    if (chains < 1 || warmup < 1 || draws < 1 || max_leapfrog < 1 || threads < 1)
      throw ConfigError("sampler: chains, warmup, draws, max_leapfrog and threads must be positive");
    if (dense_block < 0) throw ConfigError("sampler: dense_block must be non-negative");
    if (!(target_accept > 0.0 && target_accept < 1.0))
      throw ConfigError("sampler: target_accept must lie in (0, 1)");
  }

  int max_depth() const {
    int depth = 0;
    while ((2 << depth) <= max_leapfrog) ++depth;
    return std::max(depth, 1);
  }
};

/// Per-chain initial point. Called with the chain's init stream.
using InitFunction = std::function<std::vector<double>(Rng&, int chain)>;

namespace detail {

/// Dual averaging of log step size toward a target acceptance statistic.
class StepSizeAdapter {
 public:
  explicit StepSizeAdapter(double target) : delta_(target) {}

  void set_mu(double mu) { mu_ = mu; }
  void restart() {
    counter_ = 0;
    s_bar_ = 0.0;
    x_bar_ = 0.0;
  }

  double learn(double adapt_stat) {
    ++counter_;
    adapt_stat = std::min(1.0, adapt_stat);
    const double n = static_cast<double>(counter_);
    const double eta = 1.0 / (n + kT0);
    s_bar_ = (1.0 - eta) * s_bar_ + eta * (delta_ - adapt_stat);
    const double x = mu_ - s_bar_ * std::sqrt(n) / kGamma;
    const double x_eta = std::pow(n, -kKappa);
    x_bar_ = (1.0 - x_eta) * x_bar_ + x_eta * x;
    return std::exp(x);
  }

  double final_step_size() const { return std::exp(x_bar_); }

 private:
  static constexpr double kGamma = 0.05;
  static constexpr double kT0 = 10.0;
  static constexpr double kKappa = 0.75;
  double delta_;
  double mu_ = 0.0;
  double s_bar_ = 0.0;
  double x_bar_ = 0.0;
  long counter_ = 0;
};

/// Inverse metric: a dense block over the first `block` coordinates and a
/// diagonal over the rest.
class Metric {
 public:
  Metric(std::size_t dim, std::size_t block)
      : block_(std::min(block, dim)), diag_(dim, 1.0),
        cov_(Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(block_), static_cast<Eigen::Index>(block_))),
        chol_(cov_) {}

  std::size_t dim() const { return diag_.size(); }
  std::size_t block() const { return block_; }
  const std::vector<double>& diagonal() const { return diag_; }
  const Eigen::MatrixXd& block_covariance() const { return cov_; }

  void set_diagonal(std::size_t i, double v) { diag_[i] = v; }
  void set_block(const Eigen::MatrixXd& cov) {
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) return;  // keep the previous block
    cov_ = cov;
    chol_ = llt.matrixL();
    for (std::size_t i = 0; i < block_; ++i) diag_[i] = cov(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i));
  }

  /// out = M^{-1} p.
  void sharp(const double* p, double* out) const {
    const auto b = static_cast<Eigen::Index>(block_);
    if (b > 0) Eigen::Map<Eigen::VectorXd>(out, b).noalias() = cov_ * Eigen::Map<const Eigen::VectorXd>(p, b);
    for (std::size_t i = block_; i < diag_.size(); ++i) out[i] = diag_[i] * p[i];
  }

  /// Draws p ~ N(0, M).
  void sample_momentum(Rng& rng, std::vector<double>& p) const {
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = standard_normal(rng);
    const auto b = static_cast<Eigen::Index>(block_);
    if (b > 0) {
      // With M^{-1} = L L^T, p = L^{-T} z has covariance M.
      auto head = Eigen::Map<Eigen::VectorXd>(p.data(), b);
      chol_.transpose().triangularView<Eigen::Upper>().solveInPlace(head);
    }
    for (std::size_t i = block_; i < p.size(); ++i) p[i] /= std::sqrt(diag_[i]);
  }

 private:
  std::size_t block_;
  std::vector<double> diag_;
  Eigen::MatrixXd cov_;
  Eigen::MatrixXd chol_;
};

/// Windowed estimation of the inverse metric: an initial fast buffer,
/// doubling slow windows, and a terminal fast buffer. Each window's
/// estimate is shrunk toward 1e-3 times the identity.
class VarianceAdapter {
 public:
  VarianceAdapter(std::size_t dim, int num_warmup, std::size_t block = 0)
      : num_warmup_(num_warmup), moments_(dim), block_(std::min(block, dim)) {
    reset_block();
    init_buffer_ = static_cast<int>(0.15 * num_warmup);
    term_buffer_ = static_cast<int>(0.1 * num_warmup);
    base_window_ = std::min(25, num_warmup - init_buffer_ - term_buffer_);
    if (num_warmup < 20 || base_window_ < 1) {
      enabled_ = false;
      return;
    }
    window_size_ = base_window_;
    next_window_ = init_buffer_ + window_size_ - 1;
  }

  /// Feeds one warmup position; returns true when `metric` was updated.
  bool learn(Metric& metric, std::span<const double> q) {
    if (!enabled_) return false;
    if (in_window()) {
      moments_.add(q);
      add_block(q);
    }
    if (end_of_window()) {
      compute_next_window();
      const std::vector<double> var = moments_.variance();
      const double n = static_cast<double>(moments_.count());
      const double w = n / (n + 5.0), ridge = 1e-3 * (5.0 / (n + 5.0));
      for (std::size_t i = block_; i < var.size(); ++i) metric.set_diagonal(i, w * var[i] + ridge);
      if (block_ > 0) {
        Eigen::MatrixXd cov = (w / (n - 1.0)) * block_m2_;
        cov.diagonal().array() += ridge;
        metric.set_block(cov);
      }
      moments_.restart();
      reset_block();
      ++counter_;
      return true;
    }
    ++counter_;
    return false;
  }

 private:
  void reset_block() {
    const auto b = static_cast<Eigen::Index>(block_);
    block_n_ = 0;
    block_mean_ = Eigen::VectorXd::Zero(b);
    block_m2_ = Eigen::MatrixXd::Zero(b, b);
  }

  // Welford update of the block's covariance.
  void add_block(std::span<const double> q) {
    if (block_ == 0) return;
    ++block_n_;
    const Eigen::Map<const Eigen::VectorXd> x(q.data(), static_cast<Eigen::Index>(block_));
    const Eigen::VectorXd d0 = x - block_mean_;
    block_mean_ += d0 / static_cast<double>(block_n_);
    block_m2_.noalias() += d0 * (x - block_mean_).transpose();
  }

  bool in_window() const {
    return counter_ >= init_buffer_ && counter_ < num_warmup_ - term_buffer_ && counter_ != num_warmup_;
  }
  bool end_of_window() const { return counter_ == next_window_ && counter_ != num_warmup_; }

  void compute_next_window() {
    const int last = num_warmup_ - term_buffer_ - 1;
    if (next_window_ == last) return;
    window_size_ *= 2;
    next_window_ = counter_ + window_size_;
    if (next_window_ != last && next_window_ + 2 * window_size_ >= num_warmup_ - term_buffer_)
      next_window_ = last;
  }

  int num_warmup_;
  int init_buffer_ = 0, term_buffer_ = 0, base_window_ = 0;
  int window_size_ = 0, next_window_ = 0;
  int counter_ = 0;
  bool enabled_ = true;
  RunningMoments moments_;
  std::size_t block_;
  long block_n_ = 0;
  Eigen::VectorXd block_mean_;
  Eigen::MatrixXd block_m2_;
};

struct PhasePoint {
  std::vector<double> q, p, g;
  double logp = 0.0;
};

struct TransitionInfo {
  double accept_stat = 0.0;
  int n_leapfrog = 0;
  bool divergent = false;
};

/// One NUTS chain with multinomial sampling and a diagonal Euclidean metric.
class NutsChain {
 public:
  NutsChain(const LogDensityGradient& f, std::size_t dim, int max_depth, Rng rng, std::size_t dense_block = 0)
      : f_(f), dim_(dim), max_depth_(max_depth), rng_(std::move(rng)), metric_(dim, dense_block), scratch_(dim) {
    z_.q.assign(dim, 0.0);
    z_.p.assign(dim, 0.0);
    z_.g.assign(dim, 0.0);
  }

  void set_position(std::span<const double> q) {
    z_.q.assign(q.begin(), q.end());
    z_.logp = f_(z_.q, z_.g);
    if (!std::isfinite(z_.logp)) throw InvalidParameter("sampler: log density is not finite at the initial point");
    for (double v : z_.g)
      if (!std::isfinite(v)) throw InvalidParameter("sampler: gradient is not finite at the initial point");
  }

  const std::vector<double>& position() const { return z_.q; }
  Metric& metric() { return metric_; }
  double step_size() const { return eps_; }
  void set_step_size(double e) { eps_ = e; }
  Rng& rng() { return rng_; }

  /// Step-size heuristic: double or halve until the one-step acceptance
  /// crosses 0.8.
  void init_step_size() {
    const PhasePoint saved = z_;
    const double threshold = std::log(0.8);
    auto trial = [&]() {
      z_ = saved;
      sample_momentum(z_);
      const double h0 = hamiltonian(z_);
      leapfrog(z_, eps_);
      double h = hamiltonian(z_);
      if (std::isnan(h)) h = std::numeric_limits<double>::infinity();
      return h0 - h;
    };
    double delta_h = trial();
    const int direction = delta_h > threshold ? 1 : -1;
    while (true) {
      z_ = saved;
      delta_h = trial();
      if (direction == 1 && !(delta_h > threshold)) break;
      if (direction == -1 && !(delta_h < threshold)) break;
      eps_ = direction == 1 ? 2.0 * eps_ : 0.5 * eps_;
      if (eps_ > 1e7) throw std::runtime_error("sampler: step size diverged during initialization");
      if (eps_ == 0.0) throw std::runtime_error("sampler: step size collapsed to zero; check the gradient");
    }
    z_ = saved;
  }

  TransitionInfo transition() {
    sample_momentum(z_);
    const double h0 = hamiltonian(z_);

    PhasePoint z_fwd = z_, z_bck = z_;
    PhasePoint z_sample = z_, z_propose = z_;

    std::vector<double> p_sharp = sharp(z_.p);
    std::vector<double> p_fwd_fwd = z_.p, p_sharp_fwd_fwd = p_sharp;
    std::vector<double> p_fwd_bck = z_.p, p_sharp_fwd_bck = p_sharp;
    std::vector<double> p_bck_fwd = z_.p, p_sharp_bck_fwd = p_sharp;
    std::vector<double> p_bck_bck = z_.p, p_sharp_bck_bck = p_sharp;
    std::vector<double> rho = z_.p;

    double log_sum_weight = 0.0;
    int depth = 0;
    TransitionInfo info;
    double sum_metro_prob = 0.0;
    divergent_ = false;

    while (depth < max_depth_) {
      std::vector<double> rho_fwd(dim_, 0.0), rho_bck(dim_, 0.0);
      bool valid_subtree;
      double log_sum_weight_subtree = kNegInfinity;

      if (uniform01(rng_) > 0.5) {
        z_ = z_fwd;
        rho_bck = rho;
        p_bck_fwd = p_fwd_bck;
        p_sharp_bck_fwd = p_sharp_fwd_bck;
        valid_subtree = build_tree(depth, z_propose, p_sharp_fwd_bck, p_sharp_fwd_fwd, rho_fwd, p_fwd_bck,
                                   p_fwd_fwd, h0, 1.0, info.n_leapfrog, log_sum_weight_subtree,
                                   sum_metro_prob);
        z_fwd = z_;
      } else {
        z_ = z_bck;
        rho_fwd = rho;
        p_fwd_bck = p_bck_fwd;
        p_sharp_fwd_bck = p_sharp_bck_fwd;
        valid_subtree = build_tree(depth, z_propose, p_sharp_bck_fwd, p_sharp_bck_bck, rho_bck, p_bck_fwd,
                                   p_bck_bck, h0, -1.0, info.n_leapfrog, log_sum_weight_subtree,
                                   sum_metro_prob);
        z_bck = z_;
      }
      if (!valid_subtree) break;
      ++depth;

      if (log_sum_weight_subtree > log_sum_weight) {
        z_sample = z_propose;
      } else if (uniform01(rng_) < std::exp(log_sum_weight_subtree - log_sum_weight)) {
        z_sample = z_propose;
      }
      log_sum_weight = log_sum_exp(log_sum_weight, log_sum_weight_subtree);

      for (std::size_t i = 0; i < dim_; ++i) rho[i] = rho_bck[i] + rho_fwd[i];
      bool persist = criterion(p_sharp_bck_bck, p_sharp_fwd_fwd, rho);
      std::vector<double> rho_ext(dim_);
      for (std::size_t i = 0; i < dim_; ++i) rho_ext[i] = rho_bck[i] + p_fwd_bck[i];
      persist = persist && criterion(p_sharp_bck_bck, p_sharp_fwd_bck, rho_ext);
      for (std::size_t i = 0; i < dim_; ++i) rho_ext[i] = rho_fwd[i] + p_bck_fwd[i];
      persist = persist && criterion(p_sharp_bck_fwd, p_sharp_fwd_fwd, rho_ext);
      if (!persist) break;
    }

    z_ = std::move(z_sample);
    info.accept_stat = info.n_leapfrog > 0 ? sum_metro_prob / static_cast<double>(info.n_leapfrog) : 0.0;
    info.divergent = divergent_;
    return info;
  }

  /// Hamiltonian error of a single fixed-length trajectory; exposed for
  /// integrator tests.
  double max_energy_error(std::span<const double> p0, double eps, int steps) {
    z_.p.assign(p0.begin(), p0.end());
    const double h0 = hamiltonian(z_);
    double worst = 0.0;
    for (int s = 0; s < steps; ++s) {
      leapfrog(z_, eps);
      worst = std::max(worst, std::abs(hamiltonian(z_) - h0));
    }
    return worst;
  }

 private:
  static constexpr double kNegInfinity = -std::numeric_limits<double>::infinity();
  static constexpr double kMaxDeltaH = 1000.0;

  std::vector<double> sharp(const std::vector<double>& p) const {
    std::vector<double> out(dim_);
    metric_.sharp(p.data(), out.data());
    return out;
  }

  static bool criterion(const std::vector<double>& p_sharp_minus, const std::vector<double>& p_sharp_plus,
                        const std::vector<double>& rho) {
    double a = 0.0, b = 0.0;
    for (std::size_t i = 0; i < rho.size(); ++i) {
      a += p_sharp_plus[i] * rho[i];
      b += p_sharp_minus[i] * rho[i];
    }
    return a > 0.0 && b > 0.0;
  }

  void sample_momentum(PhasePoint& z) {
    metric_.sample_momentum(rng_, z.p);
  }

  double hamiltonian(const PhasePoint& z) {
    metric_.sharp(z.p.data(), scratch_.data());
    double k = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) k += scratch_[i] * z.p[i];
    return -z.logp + 0.5 * k;
  }

  void leapfrog(PhasePoint& z, double eps) {
    for (std::size_t i = 0; i < dim_; ++i) z.p[i] += 0.5 * eps * z.g[i];
    metric_.sharp(z.p.data(), scratch_.data());
    for (std::size_t i = 0; i < dim_; ++i) z.q[i] += eps * scratch_[i];
    z.logp = f_(z.q, z.g);
    if (!std::isfinite(z.logp)) {
      z.logp = kNegInfinity;
      return;
    }
    for (std::size_t i = 0; i < dim_; ++i) z.p[i] += 0.5 * eps * z.g[i];
  }

  bool build_tree(int depth, PhasePoint& z_propose, std::vector<double>& p_sharp_beg,
                  std::vector<double>& p_sharp_end, std::vector<double>& rho, std::vector<double>& p_beg,
                  std::vector<double>& p_end, double h0, double sign, int& n_leapfrog,
                  double& log_sum_weight, double& sum_metro_prob) {
    if (depth == 0) {
      leapfrog(z_, sign * eps_);
      ++n_leapfrog;
      double h = hamiltonian(z_);
      if (std::isnan(h)) h = std::numeric_limits<double>::infinity();
      if (h - h0 > kMaxDeltaH) divergent_ = true;
      log_sum_weight = log_sum_exp(log_sum_weight, h0 - h);
      sum_metro_prob += h0 - h > 0.0 ? 1.0 : std::exp(h0 - h);
      z_propose = z_;
      p_sharp_beg = sharp(z_.p);
      p_sharp_end = p_sharp_beg;
      for (std::size_t i = 0; i < dim_; ++i) rho[i] += z_.p[i];
      p_beg = z_.p;
      p_end = p_beg;
      return !divergent_;
    }

    // Build the initial subtree.
    std::vector<double> p_init_end(dim_), p_sharp_init_end(dim_), rho_init(dim_, 0.0);
    double log_sum_weight_init = kNegInfinity;
    const bool valid_init = build_tree(depth - 1, z_propose, p_sharp_beg, p_sharp_init_end, rho_init, p_beg,
                                       p_init_end, h0, sign, n_leapfrog, log_sum_weight_init, sum_metro_prob);
    if (!valid_init) return false;

    // Build the final subtree.
    PhasePoint z_propose_final = z_;
    std::vector<double> p_final_beg(dim_), p_sharp_final_beg(dim_), rho_final(dim_, 0.0);
    double log_sum_weight_final = kNegInfinity;
    const bool valid_final =
        build_tree(depth - 1, z_propose_final, p_sharp_final_beg, p_sharp_end, rho_final, p_final_beg, p_end,
                   h0, sign, n_leapfrog, log_sum_weight_final, sum_metro_prob);
    if (!valid_final) return false;

    // Multinomial sample from the right subtree.
    const double log_sum_weight_subtree = log_sum_exp(log_sum_weight_init, log_sum_weight_final);
    log_sum_weight = log_sum_exp(log_sum_weight, log_sum_weight_subtree);
    if (log_sum_weight_final > log_sum_weight_subtree) {
      z_propose = std::move(z_propose_final);
    } else if (uniform01(rng_) < std::exp(log_sum_weight_final - log_sum_weight_subtree)) {
      z_propose = std::move(z_propose_final);
    }

    std::vector<double> rho_subtree(dim_);
    for (std::size_t i = 0; i < dim_; ++i) {
      rho_subtree[i] = rho_init[i] + rho_final[i];
      rho[i] += rho_subtree[i];
    }
    bool persist = criterion(p_sharp_beg, p_sharp_end, rho_subtree);
    std::vector<double> rho_ext(dim_);
    for (std::size_t i = 0; i < dim_; ++i) rho_ext[i] = rho_init[i] + p_final_beg[i];
    persist = persist && criterion(p_sharp_beg, p_sharp_final_beg, rho_ext);
    for (std::size_t i = 0; i < dim_; ++i) rho_ext[i] = rho_final[i] + p_init_end[i];
    persist = persist && criterion(p_sharp_init_end, p_sharp_end, rho_ext);
    return persist;
  }

  const LogDensityGradient& f_;
  std::size_t dim_;
  int max_depth_;
  Rng rng_;
  Metric metric_;
  std::vector<double> scratch_;
  double eps_ = 1.0;
  PhasePoint z_;
  bool divergent_ = false;
};

struct ChainResult {
  std::vector<double> positions;  ///< draws x dim, row-major
  std::vector<double> accept;
  std::vector<std::uint8_t> divergent;
  std::vector<int> n_leapfrog;
  double step_size = 0.0;
  std::vector<double> inv_metric;
  std::string error;
};

inline ChainResult run_chain(const LogDensityGradient& f, std::size_t dim, const SamplerConfig& config,
                             int chain, std::span<const double> init) {
  ChainResult out;
  const auto block = static_cast<std::size_t>(config.dense_block);
  NutsChain nuts(f, dim, config.max_depth(),
                 make_stream(config.seed, streams::kChains, static_cast<std::uint64_t>(chain)), block);
  nuts.set_position(init);
  nuts.init_step_size();

  StepSizeAdapter step(config.target_accept);
  step.set_mu(std::log(10.0 * nuts.step_size()));
  step.restart();
  VarianceAdapter var(dim, config.warmup, block);

  for (int it = 0; it < config.warmup; ++it) {
    const TransitionInfo info = nuts.transition();
    nuts.set_step_size(step.learn(info.accept_stat));
    if (var.learn(nuts.metric(), nuts.position())) {
      nuts.init_step_size();
      step.set_mu(std::log(10.0 * nuts.step_size()));
      step.restart();
    }
  }
  nuts.set_step_size(step.final_step_size());
  out.step_size = nuts.step_size();
  out.inv_metric = nuts.metric().diagonal();

  const auto n = static_cast<std::size_t>(config.draws);
  out.positions.reserve(n * dim);
  out.accept.reserve(n);
  for (int it = 0; it < config.draws; ++it) {
    const TransitionInfo info = nuts.transition();
    out.positions.insert(out.positions.end(), nuts.position().begin(), nuts.position().end());
    out.accept.push_back(info.accept_stat);
    out.divergent.push_back(info.divergent ? 1 : 0);
    out.n_leapfrog.push_back(info.n_leapfrog);
  }
  return out;
}

}  // namespace detail

struct SampleOptions {
  std::optional<std::vector<double>> init;  ///< used for every chain as-is
  InitFunction init_fn;                     ///< per-chain init when `init` is empty
  std::vector<std::string> names;           ///< defaults to x[0], x[1], ...
};

/**
 * Runs `config.chains` NUTS chains. Each chain owns an RNG stream derived
 * from (seed, chain), so output does not depend on thread scheduling.
 * Returned values are the raw sampled coordinates.
 */
inline PosteriorDraws sample(const LogDensityGradient& f, std::size_t dim, const SamplerConfig& config,
                             const SampleOptions& options = {}) {
  config.validate();
  if (dim < 1) throw ConfigError("sampler: dimension must be at least 1");

  std::vector<std::vector<double>> inits(static_cast<std::size_t>(config.chains));
  for (int c = 0; c < config.chains; ++c) {
    auto& x = inits[static_cast<std::size_t>(c)];
    if (options.init) {
      x = *options.init;
    } else {
      Rng rng = make_stream(config.seed, streams::kInit, static_cast<std::uint64_t>(c));
      if (options.init_fn) {
        x = options.init_fn(rng, c);
      } else {
        x.resize(dim);
        for (double& v : x) v = config.init_radius * (2.0 * uniform01(rng) - 1.0);
      }
    }
    if (x.size() != dim) throw InvalidParameter("sampler: init vector has the wrong length");
    for (double v : x)
      if (!std::isfinite(v)) throw InvalidParameter("sampler: init vector is not finite");
  }

  std::vector<detail::ChainResult> results(static_cast<std::size_t>(config.chains));
  auto work = [&](int c) {
    auto& r = results[static_cast<std::size_t>(c)];
    try {
      r = detail::run_chain(f, dim, config, c, inits[static_cast<std::size_t>(c)]);
    } catch (const std::exception& e) {
      r.error = e.what();
      if (r.error.empty()) r.error = "unknown error";
    }
  };
  const int n_threads = std::min(config.threads, config.chains);
  if (n_threads <= 1) {
    for (int c = 0; c < config.chains; ++c) work(c);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t)
      pool.emplace_back([&, t] {
        for (int c = t; c < config.chains; c += n_threads) work(c);
      });
    for (auto& th : pool) th.join();
  }
  for (std::size_t c = 0; c < results.size(); ++c)
    if (!results[c].error.empty())
      throw InvalidParameter("sampler: chain " + std::to_string(c) + ": " + results[c].error);

  PosteriorDraws out;
  if (!options.names.empty()) {
    if (options.names.size() != dim) throw ConfigError("sampler: names do not match the dimension");
    out.names = options.names;
  } else {
    for (std::size_t k = 0; k < dim; ++k) out.names.push_back("x[" + std::to_string(k) + "]");
  }
  for (int c = 0; c < config.chains; ++c) {
    auto& r = results[static_cast<std::size_t>(c)];
    out.values.insert(out.values.end(), r.positions.begin(), r.positions.end());
    out.accept_stats.insert(out.accept_stats.end(), r.accept.begin(), r.accept.end());
    out.divergent.insert(out.divergent.end(), r.divergent.begin(), r.divergent.end());
    out.n_leapfrog.insert(out.n_leapfrog.end(), r.n_leapfrog.begin(), r.n_leapfrog.end());
    out.chain_ids.insert(out.chain_ids.end(), r.accept.size(), c);
    out.step_sizes.push_back(r.step_size);
  }
  const double frac = static_cast<double>(out.n_divergent()) / static_cast<double>(out.n_draws());
  if (frac > 0.2)
    out.warnings.push_back("divergent transitions after warmup: " + std::to_string(out.n_divergent()) + " of " +
                           std::to_string(out.n_draws()));
  return out;
}

/// Convenience form with separate density and gradient handles.
inline PosteriorDraws sample(const std::function<double(std::span<const double>)>& logp,
                             const std::function<void(std::span<const double>, std::span<double>)>& grad,
                             std::size_t dim, const SamplerConfig& config, const SampleOptions& options = {}) {
  LogDensityGradient f = [&](std::span<const double> q, std::span<double> g) {
    const double v = logp(q);
    if (std::isfinite(v)) grad(q, g);
    return v;
  };
  return sample(f, dim, config, options);
}

}  // namespace progdisp
