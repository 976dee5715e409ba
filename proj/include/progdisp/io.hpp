#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "dataset.hpp"
#include "diagnostics.hpp"
#include "draws.hpp"
#include "errors.hpp"
#include "layout.hpp"
#include "model.hpp"
#include "sampler.hpp"
#include "simulate.hpp"

namespace progdisp {

using Json = nlohmann::json;

// ---------------------------------------------------------------------------
// Number formatting

/// Shortest text that parses back to exactly `v`.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace detail {

inline double parse_double(std::string_view s, const std::string& where) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw DataError(where + ": cannot parse '" + std::string(s) + "' as a number");
  return v;
}

inline long long parse_int(std::string_view s, const std::string& where) {
  long long v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw DataError(where + ": cannot parse '" + std::string(s) + "' as an integer");
  return v;
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

inline std::string_view strip_cr(std::string_view s) {
  if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
  return s;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open '" + path.string() + "' for writing");
  return out;
}

inline std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return in;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Dataset table

/// One row per (patient, bin): patient_id, group, t, D, x0..x{d-1}. An empty
/// feature cell means missing.
inline void write_dataset_csv(const Dataset& data, std::ostream& out) {
  out << "patient_id,group,t,D";
  for (int j = 0; j < data.d; ++j) out << ",x" << j;
  out << '\n';
  const auto d = static_cast<std::size_t>(data.d);
  for (const auto& p : data.patients) {
    if (p.patient_id.find_first_of(",\"\r\n") != std::string::npos)
      throw DataError("patient id '" + p.patient_id + "' contains a delimiter character");
    for (std::size_t t = 0; t < p.horizon(); ++t) {
      out << p.patient_id << ',' << p.group.index << ',' << t << ',' << (p.visit(t) ? 1 : 0);
      for (std::size_t j = 0; j < d; ++j) {
        out << ',';
        if (p.is_observed(t, j)) out << format_double(p.x(t, j));
      }
      out << '\n';
    }
  }
}

struct DatasetReadOptions {
  /// Bin width in normalized time; 1 / max_bin when absent.
  std::optional<double> delta;
  int pinned_group = 0;
};

/// Parses the dataset table. Rows of one patient must be contiguous with
/// t = 0, 1, 2, ... The group count is one more than the largest label.
inline Dataset read_dataset_csv(std::istream& in, const DatasetReadOptions& options = {}) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("dataset: empty input");
  const auto header = detail::split_commas(detail::strip_cr(line));
  if (header.size() < 5 || header[0] != "patient_id" || header[1] != "group" || header[2] != "t" || header[3] != "D")
    throw DataError("dataset: header must start with patient_id,group,t,D and list at least one feature");
  const std::size_t d = header.size() - 4;
  for (std::size_t j = 0; j < d; ++j)
    if (header[4 + j] != "x" + std::to_string(j))
      throw DataError("dataset: feature column " + std::to_string(j) + " must be named x" + std::to_string(j));

  Dataset data;
  data.d = static_cast<int>(d);
  int max_group = 0;
  std::map<std::string, bool> closed;  // ids already finished
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view row = detail::strip_cr(line);
    if (row.empty()) continue;
    const std::string where = "dataset line " + std::to_string(line_no);
    const auto cells = detail::split_commas(row);
    if (cells.size() != header.size())
      throw DataError(where + ": expected " + std::to_string(header.size()) + " cells, found " +
                      std::to_string(cells.size()));
    const std::string id(cells[0]);
    if (id.empty()) throw DataError(where + ": empty patient_id");
    const long long group = detail::parse_int(cells[1], where);
    const long long t = detail::parse_int(cells[2], where);
    const long long visit = detail::parse_int(cells[3], where);
    if (group < 0 || group > 1000) throw DataError(where + ": group label out of range");
    if (visit != 0 && visit != 1) throw DataError(where + ": D must be 0 or 1");

    if (data.patients.empty() || data.patients.back().patient_id != id) {
      if (!data.patients.empty()) closed[data.patients.back().patient_id] = true;
      if (closed.count(id)) throw DataError(where + ": rows of patient '" + id + "' are not contiguous");
      if (t != 0) throw DataError(where + ": patient '" + id + "' must start at t = 0");
      PatientRecord rec(id, GroupId{static_cast<int>(group), static_cast<int>(group) == options.pinned_group}, 0, d);
      data.patients.push_back(std::move(rec));
    }
    PatientRecord& rec = data.patients.back();
    if (rec.group.index != group) throw DataError(where + ": patient '" + id + "' changes group");
    if (t != static_cast<long long>(rec.horizon())) throw DataError(where + ": bins must be consecutive");
    rec.visits.push_back(static_cast<std::uint8_t>(visit));
    for (std::size_t j = 0; j < d; ++j) {
      const std::string_view cell = cells[4 + j];
      if (cell.empty()) {
        rec.features.push_back(0.0);
        rec.observed.push_back(0);
      } else {
        rec.features.push_back(detail::parse_double(cell, where));
        rec.observed.push_back(1);
      }
    }
    max_group = std::max(max_group, static_cast<int>(group));
  }
  if (data.patients.empty()) throw DataError("dataset: no rows");
  data.n_groups = std::max(max_group, options.pinned_group) + 1;
  if (options.delta) {
    data.delta = *options.delta;
  } else {
    const std::size_t m = data.max_bin();
    if (m == 0) throw DataError("dataset: every record has one bin; pass delta explicitly");
    data.delta = 1.0 / static_cast<double>(m);
  }
  data.validate();
  return data;
}

inline void save_dataset(const Dataset& data, const std::filesystem::path& path) {
  auto out = detail::open_out(path);
  write_dataset_csv(data, out);
}

inline Dataset load_dataset(const std::filesystem::path& path, const DatasetReadOptions& options = {}) {
  auto in = detail::open_in(path);
  return read_dataset_csv(in, options);
}

// ---------------------------------------------------------------------------
// Truth sidecar

/// Every generating value keyed by canonical name. Group blocks are listed
/// for every group, pinned values included, so any fitted variant's names
/// can be looked up.
inline std::map<std::string, double> truth_values(const ModelParams& p, const Dataset& data) {
  std::map<std::string, double> out;
  auto sub = [](const char* base, std::size_t i) { return std::string(base) + "[" + std::to_string(i) + "]"; };
  for (std::size_t j = 0; j < p.shared.F.size(); ++j) {
    out[sub("F", j)] = p.shared.F[j];
    out[sub("b", j)] = p.shared.b[j];
    out[sub("psi", j)] = p.shared.psi[j];
  }
  out["beta0"] = p.shared.beta0;
  out["betaZ"] = p.shared.betaZ;
  for (std::size_t g = 0; g < p.groups.size(); ++g) {
    out[sub("muZ0", g)] = p.groups[g].muZ0;
    out[sub("sigmaZ0", g)] = p.groups[g].sigmaZ0;
    out[sub("muR", g)] = p.groups[g].muR;
    out[sub("sigmaR", g)] = p.groups[g].sigmaR;
    out[sub("betaA", g)] = p.groups[g].betaA;
  }
  if (p.latents.size() != data.size()) throw InvalidParameter("truth: one latent pair per patient required");
  for (std::size_t i = 0; i < data.size(); ++i) {
    out["z0[" + data.patients[i].patient_id + "]"] = p.latents[i].z0;
    out["r[" + data.patients[i].patient_id + "]"] = p.latents[i].r;
  }
  return out;
}

struct Truth {
  int d = 0;
  int n_groups = 0;
  std::map<std::string, double> values;

  double at(const std::string& name) const {
    auto it = values.find(name);
    if (it == values.end()) throw LookupError("truth has no value named '" + name + "'");
    return it->second;
  }
  bool has(const std::string& name) const { return values.count(name) != 0; }

  /// Rebuilds structured parameters for the patients of `data`.
  ModelParams params(const Dataset& data) const {
    ModelParams p;
    auto sub = [](const char* base, int i) { return std::string(base) + "[" + std::to_string(i) + "]"; };
    for (int j = 0; j < d; ++j) {
      p.shared.F.push_back(at(sub("F", j)));
      p.shared.b.push_back(at(sub("b", j)));
      p.shared.psi.push_back(at(sub("psi", j)));
    }
    p.shared.beta0 = at("beta0");
    p.shared.betaZ = at("betaZ");
    for (int g = 0; g < n_groups; ++g)
      p.groups.push_back({at(sub("muZ0", g)), at(sub("sigmaZ0", g)), at(sub("muR", g)), at(sub("sigmaR", g)),
                          at(sub("betaA", g))});
    for (const auto& rec : data.patients)
      p.latents.push_back({at("z0[" + rec.patient_id + "]"), at("r[" + rec.patient_id + "]")});
    return p;
  }
};

inline Json truth_to_json(const ModelParams& p, const Dataset& data) {
  Json j;
  j["d"] = static_cast<int>(p.shared.F.size());
  j["n_groups"] = static_cast<int>(p.groups.size());
  j["values"] = truth_values(p, data);
  return j;
}

inline Truth truth_from_json(const Json& j) {
  Truth t;
  try {
    t.d = j.at("d").get<int>();
    t.n_groups = j.at("n_groups").get<int>();
    t.values = j.at("values").get<std::map<std::string, double>>();
  } catch (const Json::exception& e) {
    throw DataError(std::string("truth: ") + e.what());
  }
  return t;
}

inline void save_truth(const ModelParams& p, const Dataset& data, const std::filesystem::path& path) {
  auto out = detail::open_out(path);
  out << truth_to_json(p, data).dump(2) << '\n';
}

inline Truth load_truth(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  Json j;
  try {
    in >> j;
  } catch (const Json::exception& e) {
    throw DataError("truth '" + path.string() + "': " + e.what());
  }
  return truth_from_json(j);
}

// ---------------------------------------------------------------------------
// Draws table

inline constexpr const char* kSamplerColumns[] = {"accept_stat__", "divergent__", "n_leapfrog__"};

/// One row per draw: chain, then the sampler columns, then every parameter.
inline void write_draws_csv(const PosteriorDraws& draws, std::ostream& out) {
  out << "chain";
  for (const char* c : kSamplerColumns) out << ',' << c;
  for (const auto& n : draws.names) out << ',' << n;
  out << '\n';
  const bool has_stats = draws.accept_stats.size() == draws.n_draws();
  for (std::size_t i = 0; i < draws.n_draws(); ++i) {
    out << draws.chain_ids[i];
    if (has_stats) {
      out << ',' << format_double(draws.accept_stats[i]) << ',' << static_cast<int>(draws.divergent[i]) << ','
          << draws.n_leapfrog[i];
    } else {
      out << ",,,";
    }
    for (std::size_t k = 0; k < draws.dim(); ++k) out << ',' << format_double(draws.at(i, k));
    out << '\n';
  }
}

inline PosteriorDraws read_draws_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("draws: empty input");
  const auto header = detail::split_commas(detail::strip_cr(line));
  const std::size_t skip = 1 + std::size(kSamplerColumns);
  if (header.size() < skip || header[0] != "chain") throw DataError("draws: header must start with chain");
  for (std::size_t c = 0; c < std::size(kSamplerColumns); ++c)
    if (header[1 + c] != kSamplerColumns[c]) throw DataError("draws: missing sampler column " + std::string(kSamplerColumns[c]));
  PosteriorDraws d;
  for (std::size_t k = skip; k < header.size(); ++k) d.names.emplace_back(header[k]);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view row = detail::strip_cr(line);
    if (row.empty()) continue;
    const std::string where = "draws line " + std::to_string(line_no);
    const auto cells = detail::split_commas(row);
    if (cells.size() != header.size()) throw DataError(where + ": wrong number of cells");
    d.chain_ids.push_back(static_cast<int>(detail::parse_int(cells[0], where)));
    if (!cells[1].empty()) {
      d.accept_stats.push_back(detail::parse_double(cells[1], where));
      d.divergent.push_back(static_cast<std::uint8_t>(detail::parse_int(cells[2], where)));
      d.n_leapfrog.push_back(static_cast<int>(detail::parse_int(cells[3], where)));
    }
    for (std::size_t k = skip; k < cells.size(); ++k) d.values.push_back(detail::parse_double(cells[k], where));
  }
  return d;
}

inline void save_draws(const PosteriorDraws& draws, const std::filesystem::path& path) {
  auto out = detail::open_out(path);
  write_draws_csv(draws, out);
}

inline PosteriorDraws load_draws(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  return read_draws_csv(in);
}

// ---------------------------------------------------------------------------
// Diagnostics document

inline Json diagnostics_to_json(const PosteriorDraws& draws, const std::vector<ParameterDiagnostics>& diags,
                                double rhat_threshold) {
  Json j;
  j["n_draws"] = draws.n_draws();
  j["n_chains"] = draws.n_chains();
  j["n_divergent"] = draws.n_divergent();
  j["step_sizes"] = draws.step_sizes;
  j["warnings"] = draws.warnings;
  Json params = Json::array();
  double max_rhat = 0.0;
  for (const auto& p : diags) {
    Json row;
    row["name"] = p.name;
    row["mean"] = p.mean;
    row["sd"] = p.sd;
    row["rhat"] = std::isfinite(p.rhat) ? Json(p.rhat) : Json(nullptr);
    row["ess"] = std::isfinite(p.ess) ? Json(p.ess) : Json(nullptr);
    if (std::isfinite(p.rhat)) max_rhat = std::max(max_rhat, p.rhat);
    params.push_back(std::move(row));
  }
  j["parameters"] = std::move(params);
  j["max_rhat"] = max_rhat;
  j["rhat_threshold"] = rhat_threshold;
  j["converged"] = draws.n_chains() < 2 || max_rhat <= rhat_threshold;
  return j;
}

// ---------------------------------------------------------------------------
// Config files: flat JSON objects whose keys are the field names.

namespace detail {

inline void reject_unknown(const Json& j, std::initializer_list<const char*> known, const char* what) {
  if (!j.is_object()) throw ConfigError(std::string(what) + ": config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw ConfigError(std::string(what) + ": unknown key '" + it.key() + "'");
  }
}

template <class T>
void read_key(const Json& j, const char* key, T& field, const char* what) {
  if (!j.contains(key)) return;
  try {
    field = j.at(key).get<T>();
  } catch (const Json::exception&) {
    throw ConfigError(std::string(what) + ": key '" + key + "' has the wrong type");
  }
}

inline Prior prior_from_json(const Json& j, const std::string& key) {
  if (!j.is_array() || j.size() < 2 || j.size() > 3)
    throw ConfigError("prior '" + key + "' must be [mean, sd] or [mean, sd, lower]");
  const double m = j[0].get<double>(), s = j[1].get<double>();
  return j.size() == 3 ? Prior::truncated(m, s, j[2].get<double>()) : Prior::normal(m, s);
}

inline Json prior_to_json(const Prior& p) {
  Json a = Json::array({p.mu, p.sigma});
  if (p.is_truncated()) a.push_back(p.lower);
  return a;
}

}  // namespace detail

/// Overrides applied to the default priors for a given d. Scalar keys set
/// one prior; F, b, psi take either one prior for every feature or a list.
inline PriorSpec priors_from_json(const Json& j, PriorSpec base) {
  detail::reject_unknown(j, {"F", "b", "psi", "beta0", "betaZ", "muZ0", "sigmaZ0", "muR", "sigmaR", "betaA"},
                         "prior_overrides");
  auto vec = [&](const char* key, std::vector<Prior>& dst) {
    if (!j.contains(key)) return;
    const Json& v = j.at(key);
    if (v.is_array() && !v.empty() && v[0].is_array()) {
      if (v.size() != dst.size()) throw ConfigError(std::string("prior_overrides: ") + key + " needs one entry per feature");
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = detail::prior_from_json(v[i], key);
    } else {
      for (auto& p : dst) p = detail::prior_from_json(v, key);
    }
  };
  vec("F", base.F);
  vec("b", base.b);
  vec("psi", base.psi);
  auto one = [&](const char* key, Prior& dst) {
    if (j.contains(key)) dst = detail::prior_from_json(j.at(key), key);
  };
  one("beta0", base.beta0);
  one("betaZ", base.betaZ);
  one("muZ0", base.muZ0);
  one("sigmaZ0", base.sigmaZ0);
  one("muR", base.muR);
  one("sigmaR", base.sigmaR);
  one("betaA", base.betaA);
  base.validate();
  return base;
}

inline Json priors_to_json(const PriorSpec& p) {
  Json j;
  auto vec = [](const std::vector<Prior>& v) {
    Json a = Json::array();
    for (const auto& x : v) a.push_back(detail::prior_to_json(x));
    return a;
  };
  j["F"] = vec(p.F);
  j["b"] = vec(p.b);
  j["psi"] = vec(p.psi);
  j["beta0"] = detail::prior_to_json(p.beta0);
  j["betaZ"] = detail::prior_to_json(p.betaZ);
  j["muZ0"] = detail::prior_to_json(p.muZ0);
  j["sigmaZ0"] = detail::prior_to_json(p.sigmaZ0);
  j["muR"] = detail::prior_to_json(p.muR);
  j["sigmaR"] = detail::prior_to_json(p.sigmaR);
  j["betaA"] = detail::prior_to_json(p.betaA);
  return j;
}

inline SimConfig sim_config_from_json(const Json& j) {
  detail::reject_unknown(j,
                         {"n_patients", "group_probability", "d", "n_bins", "delta", "seed", "prior_overrides",
                          "initial_disparity", "rate_disparity", "visit_disparity"},
                         "simulation config");
  SimConfig c;
  const char* what = "simulation config";
  detail::read_key(j, "n_patients", c.n_patients, what);
  detail::read_key(j, "group_probability", c.group_probability, what);
  detail::read_key(j, "d", c.d, what);
  detail::read_key(j, "n_bins", c.n_bins, what);
  detail::read_key(j, "delta", c.delta, what);
  detail::read_key(j, "seed", c.seed, what);
  detail::read_key(j, "initial_disparity", c.initial_disparity, what);
  detail::read_key(j, "rate_disparity", c.rate_disparity, what);
  detail::read_key(j, "visit_disparity", c.visit_disparity, what);
  if (j.contains("prior_overrides")) c.prior_overrides = priors_from_json(j.at("prior_overrides"), PriorSpec::simulation(c.d));
  c.validate();
  return c;
}

inline Json sim_config_to_json(const SimConfig& c) {
  Json j;
  j["n_patients"] = c.n_patients;
  j["group_probability"] = c.group_probability;
  j["d"] = c.d;
  j["n_bins"] = c.n_bins;
  j["delta"] = c.delta;
  j["seed"] = c.seed;
  j["initial_disparity"] = c.initial_disparity;
  j["rate_disparity"] = c.rate_disparity;
  j["visit_disparity"] = c.visit_disparity;
  if (c.prior_overrides) j["prior_overrides"] = priors_to_json(*c.prior_overrides);
  return j;
}

inline SamplerConfig sampler_config_from_json(const Json& j, SamplerConfig c = {}) {
  detail::reject_unknown(j,
                         {"chains", "warmup", "draws", "target_accept", "max_leapfrog", "seed", "threads",
                          "init_radius", "dense_block"},
                         "sampler config");
  const char* what = "sampler config";
  detail::read_key(j, "chains", c.chains, what);
  detail::read_key(j, "warmup", c.warmup, what);
  detail::read_key(j, "draws", c.draws, what);
  detail::read_key(j, "target_accept", c.target_accept, what);
  detail::read_key(j, "max_leapfrog", c.max_leapfrog, what);
  detail::read_key(j, "seed", c.seed, what);
  detail::read_key(j, "threads", c.threads, what);
  detail::read_key(j, "init_radius", c.init_radius, what);
  detail::read_key(j, "dense_block", c.dense_block, what);
  c.validate();
  return c;
}

inline Json sampler_config_to_json(const SamplerConfig& c) {
  Json j;
  j["chains"] = c.chains;
  j["warmup"] = c.warmup;
  j["draws"] = c.draws;
  j["target_accept"] = c.target_accept;
  j["max_leapfrog"] = c.max_leapfrog;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["init_radius"] = c.init_radius;
  j["dense_block"] = c.dense_block;
  return j;
}

inline Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw ConfigError("config '" + path.string() + "': " + e.what());
  }
}

inline void write_json_file(const Json& j, const std::filesystem::path& path) {
  auto out = detail::open_out(path);
  out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Manifests

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return s;
}

/// Hash of a config's canonical text (sorted keys, compact).
inline std::string config_hash(const Json& config) { return hex64(fnv1a(config.dump())); }

inline std::string file_hash(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return hex64(fnv1a(ss.str()));
}

#ifndef PROGDISP_VERSION
#define PROGDISP_VERSION "0.0.0"
#endif

/// Everything needed to re-run a command; deliberately free of timestamps.
inline Json make_manifest(const std::string& command, const Json& config, std::uint64_t seed,
                          const std::vector<std::string>& argv = {}) {
  Json j;
  j["tool"] = "progdisp";
  j["version"] = PROGDISP_VERSION;
  j["command"] = command;
  j["seed"] = seed;
  j["config"] = config;
  j["config_hash"] = config_hash(config);
  j["argv"] = argv;
  return j;
}

}  // namespace progdisp
