#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_set>
#include <vector>

#include "errors.hpp"
#include "model.hpp"

namespace progdisp {

/// One patient's observations on the discrete time grid. Bin 0 is the first
/// visit; `horizon()` counts bins including bin 0.
struct PatientRecord {
  std::string patient_id;
  GroupId group;
  std::vector<std::uint8_t> visits;    ///< D[t], size horizon()
  std::vector<double> features;        ///< row-major horizon() x d
  std::vector<std::uint8_t> observed;  ///< same shape as features

  PatientRecord() = default;
  PatientRecord(std::string id, GroupId g, std::size_t horizon, std::size_t d)
      : patient_id(std::move(id)),
        group(g),
        visits(horizon, 0),
        features(horizon * d, 0.0),
        observed(horizon * d, 0) {}

  std::size_t horizon() const { return visits.size(); }
  std::size_t d() const { return horizon() == 0 ? 0 : features.size() / horizon(); }

  bool visit(std::size_t t) const { return visits[t] != 0; }
  bool is_observed(std::size_t t, std::size_t j) const { return observed[t * d() + j] != 0; }
  double x(std::size_t t, std::size_t j) const { return features[t * d() + j]; }

  void set(std::size_t t, std::size_t j, double value) {
    const std::size_t k = t * d() + j;
    features[k] = value;
    observed[k] = 1;
  }

  std::size_t n_visits() const {
    std::size_t n = 0;
    for (auto v : visits) n += v;
    return n;
  }
};

/// A cohort on a shared time grid of bin width `delta` (normalized time).
struct Dataset {
  std::vector<PatientRecord> patients;
  int n_groups = 2;
  int d = 4;
  double delta = 0.02;

  std::size_t size() const { return patients.size(); }

  /// Checks every structural invariant; throws DataError on the first failure.
  void validate() const {
    if (n_groups < 1) throw DataError("dataset: n_groups must be positive");
    if (d < 1) throw DataError("dataset: d must be positive");
    if (!(delta > 0.0) || !std::isfinite(delta)) throw DataError("dataset: delta must be positive");
    std::unordered_set<std::string> seen;
    int pinned_seen = -1;
    for (const auto& p : patients) {
      const std::string where = "patient '" + p.patient_id + "': ";
      if (!seen.insert(p.patient_id).second) throw DataError(where + "duplicate patient id");
      if (p.group.index < 0 || p.group.index >= n_groups) throw DataError(where + "group out of range");
      if (p.group.is_pinned) {
        if (pinned_seen >= 0 && pinned_seen != p.group.index)
          throw DataError(where + "more than one pinned group");
        pinned_seen = p.group.index;
      }
      if (p.horizon() == 0) throw DataError(where + "empty record");
      if (p.features.size() != p.horizon() * static_cast<std::size_t>(d) ||
          p.observed.size() != p.features.size())
        throw DataError(where + "feature matrix has the wrong shape");
      if (!p.visit(0)) throw DataError(where + "D[0] must be 1");
      for (std::size_t t = 0; t < p.horizon(); ++t) {
        bool any = false;
        for (std::size_t j = 0; j < static_cast<std::size_t>(d); ++j) {
          if (!p.is_observed(t, j)) continue;
          if (!p.visit(t)) throw DataError(where + "feature observed at a non-visit bin");
          if (!std::isfinite(p.x(t, j))) throw DataError(where + "non-finite feature value");
          any = true;
        }
        if (p.visit(t) && !any)
          throw DataError(where + "visit at bin " + std::to_string(t) + " has no observed feature");
      }
    }
  }

  std::size_t find(const std::string& patient_id) const {
    for (std::size_t i = 0; i < patients.size(); ++i)
      if (patients[i].patient_id == patient_id) return i;
    throw LookupError("unknown patient '" + patient_id + "'");
  }

  std::size_t max_bin() const {
    std::size_t m = 0;
    for (const auto& p : patients) m = std::max(m, p.horizon() - 1);
    return m;
  }
};

/// Sets each record's GroupId.is_pinned from the reference group index.
inline void mark_pinned_group(Dataset& data, int pinned_group) {
  for (auto& p : data.patients) p.group.is_pinned = (p.group.index == pinned_group);
}

/// Keeps only bins with normalized time strictly below `window` (the
/// training part of a forecasting split).
inline Dataset truncate_dataset(const Dataset& data, double window) {
  if (!(window > 0.0)) throw ConfigError("training window must be positive");
  Dataset out = data;
  for (auto& p : out.patients) {
    std::size_t keep = 0;
    while (keep < p.horizon() && static_cast<double>(keep) * data.delta < window) ++keep;
    keep = std::max<std::size_t>(keep, 1);
    const std::size_t dd = static_cast<std::size_t>(data.d);
    p.visits.resize(keep);
    p.features.resize(keep * dd);
    p.observed.resize(keep * dd);
  }
  return out;
}

}  // namespace progdisp
