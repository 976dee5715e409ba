#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "errors.hpp"
#include "model.hpp"

namespace progdisp {

enum class Field : std::uint8_t { F, b, psi, beta0, betaZ, muZ0, sigmaZ0, muR, sigmaR, betaA, z0, r };

/// One sampled coordinate. `index` is a feature, a group (-1 for a rate pair
/// shared by every group) or a patient, depending on `field`.
struct Coordinate {
  Field field;
  int index;
  double lower;  ///< -inf when unbounded
  std::string name;

  bool bounded() const { return std::isfinite(lower); }
  bool is_latent() const { return field == Field::z0 || field == Field::r; }
};

/// Same shapes as `params`, all zeros. Used as a gradient accumulator.
inline ModelParams zeros_like(const ModelParams& params) {
  ModelParams g;
  g.shared.F.assign(params.shared.F.size(), 0.0);
  g.shared.b.assign(params.shared.b.size(), 0.0);
  g.shared.psi.assign(params.shared.psi.size(), 0.0);
  g.groups.assign(params.groups.size(), GroupParams{0.0, 0.0, 0.0, 0.0, 0.0});
  g.latents.assign(params.latents.size(), PatientLatents{});
  return g;
}

/**
 * Canonical flattening of the free parameters of a model configuration.
 *
 * Order: F[0..d), b[0..d), psi[0..d), beta0, betaZ; then the group block
 * (a shared muR, sigmaR pair first when rates are not group-specific, then per
 * group in index order: muZ0[g], sigmaZ0[g], muR[g], sigmaR[g], betaA[g],
 * skipping whatever is pinned or shared); then per patient in dataset order:
 * z0[id], r[id].
 *
 * Unconstrained coordinates: x = lower + exp(u) for bounded quantities,
 * x = u otherwise; latents map identically. With `scaled_latents` they are
 * stored in the units of feature 0 instead: u = F[0] * z0 + b[0] (the
 * expected baseline value of that feature) and u = F[0] * r for centered
 * rates, with Jacobian 1 / F[0] each. Rescaling or shifting every
 * latent against the loadings and offsets is then a move in a handful of
 * global coordinates rather than in all latents at once, which is what a
 * diagonal metric can follow. With `noncentered_rate`, the unconstrained image of r is
 * eta = (r - muR) / sigmaR of the patient's group. The density then scores
 * eta as a standard normal instead of scoring r against its group (the two
 * differ by log sigmaR per patient, exactly the Jacobian), so no Jacobian
 * is added for r. Scoring r itself would lose eta to rounding once sigmaR
 * is tiny.
 */
class ParameterLayout {
 public:
  ParameterLayout(const ModelConfig& config, const PriorSpec& priors,
                  std::vector<std::string> patient_ids, std::vector<int> patient_groups)
      : config_(config), patient_ids_(std::move(patient_ids)), patient_groups_(std::move(patient_groups)) {
    if (config_.d < 1 || static_cast<std::size_t>(config_.d) != priors.d())
      throw ConfigError("layout: prior dimension does not match d");
    if (config_.n_groups < 1 || config_.pinned_group < 0 || config_.pinned_group >= config_.n_groups)
      throw ConfigError("layout: invalid group configuration");
    if (patient_ids_.size() != patient_groups_.size())
      throw ConfigError("layout: patient id/group length mismatch");
    build(priors);
  }

  ParameterLayout(const ModelConfig& config, const PriorSpec& priors, const Dataset& data)
      : ParameterLayout(config, priors, ids_of(data), groups_of(data)) {}

  const ModelConfig& config() const { return config_; }
  std::size_t dim() const { return coords_.size(); }
  std::size_t n_global() const { return n_global_; }
  std::size_t n_patients() const { return patient_ids_.size(); }
  const std::vector<Coordinate>& coordinates() const { return coords_; }
  const std::vector<std::string>& patient_ids() const { return patient_ids_; }
  const std::vector<int>& patient_groups() const { return patient_groups_; }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(coords_.size());
    for (const auto& c : coords_) out.push_back(c.name);
    return out;
  }

  /// Map an unconstrained vector to parameters; adds log |Jacobian| of the
  /// inverse transform to *log_jacobian when given.
  ModelParams constrain(std::span<const double> u, double* log_jacobian = nullptr) const {
    check_size(u.size());
    ModelParams p = skeleton();
    double log_j = 0.0;
    for (std::size_t k = 0; k < n_global_; ++k) {
      const Coordinate& c = coords_[k];
      double x = u[k];
      if (c.bounded()) {
        x = c.lower + std::exp(u[k]);
        log_j += u[k];
      }
      assign(p, c, x);
    }
    const bool scaled = config_.scaled_latents;
    const double scale = scaled ? p.shared.F[0] : 1.0, shift = scaled ? p.shared.b[0] : 0.0;
    const double log_scale = std::log(scale);
    for (std::size_t i = 0; i < patient_ids_.size(); ++i) {
      const std::size_t k = n_global_ + 2 * i;
      const GroupParams& gp = p.groups[static_cast<std::size_t>(patient_groups_[i])];
      p.latents[i].z0 = (u[k] - shift) / scale;
      log_j -= log_scale;
      if (config_.noncentered_rate) {
        // No Jacobian term: the density scores eta directly as N(0, 1).
        p.latents[i].r = gp.muR + gp.sigmaR * u[k + 1];
      } else {
        p.latents[i].r = u[k + 1] / scale;
        log_j -= log_scale;
      }
    }
    if (log_jacobian) *log_jacobian += log_j;
    return p;
  }

  /// Inverse of `constrain`. Throws InvalidParameter on non-finite values or
  /// values outside a coordinate's support.
  std::vector<double> unconstrain(const ModelParams& p) const {
    std::vector<double> u(dim());
    for (std::size_t k = 0; k < coords_.size(); ++k) {
      const Coordinate& c = coords_[k];
      const double x = read(p, c);
      if (!std::isfinite(x)) throw InvalidParameter("unconstrain: " + c.name + " is not finite");
      if (c.field == Field::r && config_.noncentered_rate) {
        const GroupParams& gp = p.groups[static_cast<std::size_t>(patient_groups_[static_cast<std::size_t>(c.index)])];
        u[k] = (x - gp.muR) / gp.sigmaR;
      } else if (c.field == Field::z0 && config_.scaled_latents) {
        u[k] = p.shared.F[0] * x + p.shared.b[0];
      } else if (c.field == Field::r && config_.scaled_latents) {
        u[k] = p.shared.F[0] * x;
      } else if (c.bounded()) {
        if (!(x > c.lower))
          throw InvalidParameter("unconstrain: " + c.name + " must exceed " + std::to_string(c.lower));
        u[k] = std::log(x - c.lower);
      } else {
        u[k] = x;
      }
    }
    return u;
  }

  /// Constrained values in canonical order.
  std::vector<double> flatten(const ModelParams& p) const {
    std::vector<double> x(dim());
    for (std::size_t k = 0; k < coords_.size(); ++k) x[k] = read(p, coords_[k]);
    return x;
  }

  /// Inverse of `flatten`: rebuild parameters (pins and ties applied) from
  /// constrained values in canonical order.
  ModelParams unflatten(std::span<const double> x) const {
    check_size(x.size());
    ModelParams p = skeleton();
    for (std::size_t k = 0; k < coords_.size(); ++k) assign(p, coords_[k], x[k]);
    return p;
  }

  /// Chain a constrained-space gradient `g` through the transforms, adding
  /// the log-Jacobian gradient. `g` is consumed.
  void chain_gradient(const ModelParams& p, std::span<const double> u, ModelParams g,
                      std::span<double> grad_u) const {
    check_size(grad_u.size());
    const double scale = p.shared.F[0];
    double g_scale = 0.0, g_shift = 0.0;
    for (std::size_t i = 0; i < (config_.scaled_latents ? patient_ids_.size() : 0); ++i) {
      g_scale -= (g.latents[i].z0 * p.latents[i].z0 + 1.0) / scale;
      g_shift -= g.latents[i].z0 / scale;
      g.latents[i].z0 /= scale;
      if (!config_.noncentered_rate) {
        g_scale -= (g.latents[i].r * p.latents[i].r + 1.0) / scale;
        g.latents[i].r /= scale;
      }
    }
    g.shared.F[0] += g_scale;
    g.shared.b[0] += g_shift;
    if (config_.noncentered_rate) {
      for (std::size_t i = 0; i < patient_ids_.size(); ++i) {
        auto& gg = g.groups[static_cast<std::size_t>(patient_groups_[i])];
        const auto& gp = p.groups[static_cast<std::size_t>(patient_groups_[i])];
        const double eta = u[n_global_ + 2 * i + 1];
        const double gr = g.latents[i].r;
        gg.muR += gr;
        gg.sigmaR += gr * eta;
        g.latents[i].r = gr * gp.sigmaR;
      }
    }
    for (std::size_t k = 0; k < coords_.size(); ++k) {
      const Coordinate& c = coords_[k];
      const double gx = gather(g, c);
      grad_u[k] = c.bounded() ? gx * std::exp(u[k]) + 1.0 : gx;
    }
  }

  /// Index of a named coordinate, or npos.
  std::size_t find(const std::string& name) const {
    for (std::size_t k = 0; k < coords_.size(); ++k)
      if (coords_[k].name == name) return k;
    return npos;
  }

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

 private:
  static std::vector<std::string> ids_of(const Dataset& data) {
    std::vector<std::string> ids;
    for (const auto& p : data.patients) ids.push_back(p.patient_id);
    return ids;
  }
  static std::vector<int> groups_of(const Dataset& data) {
    std::vector<int> gs;
    for (const auto& p : data.patients) gs.push_back(p.group.index);
    return gs;
  }

  void check_size(std::size_t n) const {
    if (n != dim()) throw InvalidParameter("parameter vector has length " + std::to_string(n) +
                                           ", expected " + std::to_string(dim()));
  }

  void add(Field f, int index, double lower, std::string name) {
    coords_.push_back({f, index, lower, std::move(name)});
  }

  void build(const PriorSpec& priors) {
    const int d = config_.d;
    auto sub = [](const char* base, int i) { return std::string(base) + "[" + std::to_string(i) + "]"; };
    for (int j = 0; j < d; ++j) {
      double lower = priors.F[static_cast<std::size_t>(j)].lower;
      if (j == 0) lower = std::max(lower, config_.f0_lower);
      add(Field::F, j, lower, sub("F", j));
    }
    for (int j = 0; j < d; ++j) add(Field::b, j, priors.b[static_cast<std::size_t>(j)].lower, sub("b", j));
    for (int j = 0; j < d; ++j)
      add(Field::psi, j, std::max(0.0, priors.psi[static_cast<std::size_t>(j)].lower), sub("psi", j));
    add(Field::beta0, -1, priors.beta0.lower, "beta0");
    add(Field::betaZ, -1, priors.betaZ.lower, "betaZ");
    if (!config_.rate_disparity) {
      add(Field::muR, -1, priors.muR.lower, "muR");
      add(Field::sigmaR, -1, std::max(0.0, priors.sigmaR.lower), "sigmaR");
    }
    for (int g = 0; g < config_.n_groups; ++g) {
      const bool pinned = config_.group_is_pinned(g);
      if (config_.initial_disparity && !pinned) {
        add(Field::muZ0, g, priors.muZ0.lower, sub("muZ0", g));
        add(Field::sigmaZ0, g, std::max(0.0, priors.sigmaZ0.lower), sub("sigmaZ0", g));
      }
      if (config_.rate_disparity) {
        add(Field::muR, g, priors.muR.lower, sub("muR", g));
        add(Field::sigmaR, g, std::max(0.0, priors.sigmaR.lower), sub("sigmaR", g));
      }
      if (config_.visit_disparity && !pinned) add(Field::betaA, g, priors.betaA.lower, sub("betaA", g));
    }
    n_global_ = coords_.size();
    for (std::size_t i = 0; i < patient_ids_.size(); ++i) {
      const int g = patient_groups_[i];
      if (g < 0 || g >= config_.n_groups) throw ConfigError("layout: patient group out of range");
      add(Field::z0, static_cast<int>(i), kNegInf, "z0[" + patient_ids_[i] + "]");
      add(Field::r, static_cast<int>(i), kNegInf, "r[" + patient_ids_[i] + "]");
    }
  }

  ModelParams skeleton() const {
    ModelParams p;
    const auto d = static_cast<std::size_t>(config_.d);
    p.shared.F.assign(d, 0.0);
    p.shared.b.assign(d, 0.0);
    p.shared.psi.assign(d, 1.0);
    p.groups.assign(static_cast<std::size_t>(config_.n_groups), GroupParams{});
    p.latents.assign(patient_ids_.size(), PatientLatents{});
    return p;
  }

  void assign(ModelParams& p, const Coordinate& c, double x) const {
    const auto j = static_cast<std::size_t>(c.index);
    switch (c.field) {
      case Field::F: p.shared.F[j] = x; break;
      case Field::b: p.shared.b[j] = x; break;
      case Field::psi: p.shared.psi[j] = x; break;
      case Field::beta0: p.shared.beta0 = x; break;
      case Field::betaZ: p.shared.betaZ = x; break;
      case Field::muZ0: p.groups[j].muZ0 = x; break;
      case Field::sigmaZ0: p.groups[j].sigmaZ0 = x; break;
      case Field::muR:
        if (c.index < 0)
          for (auto& g : p.groups) g.muR = x;
        else
          p.groups[j].muR = x;
        break;
      case Field::sigmaR:
        if (c.index < 0)
          for (auto& g : p.groups) g.sigmaR = x;
        else
          p.groups[j].sigmaR = x;
        break;
      case Field::betaA: p.groups[j].betaA = x; break;
      case Field::z0: p.latents[j].z0 = x; break;
      case Field::r: p.latents[j].r = x; break;
    }
  }

  double read(const ModelParams& p, const Coordinate& c) const {
    const auto j = static_cast<std::size_t>(c.index < 0 ? config_.pinned_group : c.index);
    switch (c.field) {
      case Field::F: return p.shared.F[j];
      case Field::b: return p.shared.b[j];
      case Field::psi: return p.shared.psi[j];
      case Field::beta0: return p.shared.beta0;
      case Field::betaZ: return p.shared.betaZ;
      case Field::muZ0: return p.groups[j].muZ0;
      case Field::sigmaZ0: return p.groups[j].sigmaZ0;
      case Field::muR: return p.groups[j].muR;
      case Field::sigmaR: return p.groups[j].sigmaR;
      case Field::betaA: return p.groups[j].betaA;
      case Field::z0: return p.latents[j].z0;
      case Field::r: return p.latents[j].r;
    }
    return 0.0;
  }

  // Sums over every constrained slot a coordinate feeds (tied rate pairs).
  double gather(const ModelParams& g, const Coordinate& c) const {
    if (c.index < 0 && (c.field == Field::muR || c.field == Field::sigmaR)) {
      double s = 0.0;
      for (const auto& gg : g.groups) s += (c.field == Field::muR ? gg.muR : gg.sigmaR);
      return s;
    }
    return read(g, c);
  }

  ModelConfig config_;
  std::vector<std::string> patient_ids_;
  std::vector<int> patient_groups_;
  std::vector<Coordinate> coords_;
  std::size_t n_global_ = 0;
};

}  // namespace progdisp
