#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "baselines.hpp"
#include "biaslab.hpp"
#include "dataset.hpp"
#include "diagnostics.hpp"
#include "errors.hpp"
#include "fit.hpp"
#include "inference.hpp"
#include "io.hpp"
#include "model.hpp"
#include "sampler.hpp"
#include "simulate.hpp"
#include "svg.hpp"

namespace progdisp::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kConvergence = 3, kOracle = 4 };

/// A run that finished and wrote its outputs but must report failure.
class CommandFailure : public std::runtime_error {
 public:
  CommandFailure(int code, const std::string& what) : std::runtime_error(what), code_(code) {}
  int code() const { return code_; }

 private:
  int code_;
};

struct GlobalOptions {
  std::optional<std::uint64_t> seed;
  int threads = 1;
  std::string out = "out";
};

namespace detail {

inline std::string num(double v) { return format_double(v); }
inline std::string num(const std::optional<double>& v) { return v ? format_double(*v) : "NA"; }
inline Json opt_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

inline void write_text(const fs::path& path, const std::string& text) {
  auto out = progdisp::detail::open_out(path);
  out << text;
}

inline Json manifest_for(const std::string& command, const Json& config, std::uint64_t seed,
                         const std::vector<std::string>& argv, const std::map<std::string, fs::path>& outputs) {
  Json m = make_manifest(command, config, seed, argv);
  Json files = Json::object();
  for (const auto& [name, path] : outputs) files[name] = file_hash(path);
  m["outputs"] = files;
  return m;
}

inline std::vector<std::size_t> parse_features(const std::string& list, int d) {
  std::vector<std::size_t> out;
  if (list.empty()) return out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    int j = -1;
    try {
      j = std::stoi(item);
    } catch (const std::exception&) {
      throw ConfigError("features: '" + item + "' is not an index");
    }
    if (j < 0 || j >= d) throw ConfigError("features: index " + item + " out of range");
    out.push_back(static_cast<std::size_t>(j));
  }
  return out;
}

/// Everything `fit` leaves behind, loaded back.
struct FitDir {
  fs::path dir;
  Json info;
  PosteriorDraws draws;
  Dataset data;
  ModelVariant variant = ModelVariant::Full;
  std::size_t n_global = 0;
  int pinned_group = 0;
};

inline FitDir load_fit_dir(const fs::path& dir) {
  FitDir f;
  f.dir = dir;
  auto in = progdisp::detail::open_in(dir / "fit.json");
  try {
    f.info = Json::parse(in);
    f.variant = parse_variant(f.info.at("variant").get<std::string>());
    f.n_global = f.info.at("n_global").get<std::size_t>();
    f.pinned_group = f.info.at("pinned_group").get<int>();
    DatasetReadOptions ro;
    ro.delta = f.info.at("delta").get<double>();
    ro.pinned_group = f.pinned_group;
    f.data = load_dataset(f.info.at("data").get<std::string>(), ro);
  } catch (const Json::exception& e) {
    throw DataError("fit directory '" + dir.string() + "': " + e.what());
  }
  f.draws = load_draws(dir / "draws.csv");
  return f;
}

inline std::vector<ScatterPoint> thin_points(std::vector<ScatterPoint> pts, std::size_t cap = 4000) {
  if (pts.size() <= cap) return pts;
  std::vector<ScatterPoint> out;
  const double stride = static_cast<double>(pts.size()) / static_cast<double>(cap);
  for (std::size_t k = 0; k < cap; ++k) out.push_back(pts[static_cast<std::size_t>(static_cast<double>(k) * stride)]);
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// simulate

struct SimulateOptions {
  std::string config;
  std::optional<int> n_patients;
  std::optional<int> n_bins;
  std::optional<int> d;
};

inline int cmd_simulate(const GlobalOptions& g, const SimulateOptions& o, const std::vector<std::string>& argv,
                        std::ostream& log) {
  SimConfig cfg;
  if (!o.config.empty()) cfg = sim_config_from_json(read_json_file(o.config));
  if (o.n_patients) cfg.n_patients = *o.n_patients;
  if (o.n_bins) cfg.n_bins = *o.n_bins;
  if (o.d) {
    if (cfg.prior_overrides && cfg.prior_overrides->d() != static_cast<std::size_t>(*o.d))
      throw ConfigError("--d conflicts with the prior overrides in the config");
    cfg.d = *o.d;
  }
  if (g.seed) cfg.seed = *g.seed;
  cfg.validate();

  const SimulatedCohort cohort = simulate(cfg);
  const fs::path out = g.out;
  save_dataset(cohort.data, out / "dataset.csv");
  save_truth(cohort.truth, cohort.data, out / "truth.json");
  const Json config = sim_config_to_json(cfg);
  write_json_file(detail::manifest_for("simulate", config, cfg.seed, argv,
                                       {{"dataset.csv", out / "dataset.csv"}, {"truth.json", out / "truth.json"}}),
                  out / "manifest.json");
  log << "simulated " << cohort.data.size() << " patients (" << cfg.n_bins + 1 << " bins each) into " << out.string()
      << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// fit

struct FitCommandOptions {
  std::string data;
  std::string variant = "Full";
  std::optional<double> delta;
  int pinned_group = 0;
  std::string sampler_config;
  std::optional<int> chains, warmup, draws, max_leapfrog;
  std::optional<double> target_accept;
  std::string priors = "synthetic";
  std::string prior_overrides;
  std::string init = "data";
  double rhat_threshold = 1.1;
  bool allow_nonconverged = false;
};

inline int cmd_fit(const GlobalOptions& g, const FitCommandOptions& o, const std::vector<std::string>& argv,
                   std::ostream& log) {
  const ModelVariant variant = parse_variant(o.variant);
  SamplerConfig sc;
  if (!o.sampler_config.empty()) sc = sampler_config_from_json(read_json_file(o.sampler_config));
  if (o.chains) sc.chains = *o.chains;
  if (o.warmup) sc.warmup = *o.warmup;
  if (o.draws) sc.draws = *o.draws;
  if (o.max_leapfrog) sc.max_leapfrog = *o.max_leapfrog;
  if (o.target_accept) sc.target_accept = *o.target_accept;
  if (g.seed) sc.seed = *g.seed;
  sc.threads = g.threads;
  sc.validate();
  if (o.init != "data" && o.init != "prior") throw ConfigError("--init must be 'data' or 'prior'");

  DatasetReadOptions ro;
  ro.delta = o.delta;
  ro.pinned_group = o.pinned_group;
  const fs::path data_path = fs::absolute(o.data).lexically_normal();
  const Dataset data = load_dataset(data_path, ro);

  PriorSpec priors;
  if (o.priors == "synthetic") priors = PriorSpec::synthetic_fit(data.d);
  else if (o.priors == "simulation") priors = PriorSpec::simulation(data.d);
  else throw ConfigError("--priors must be 'synthetic' or 'simulation'");
  if (!o.prior_overrides.empty()) priors = priors_from_json(read_json_file(o.prior_overrides), priors);

  ModelConfig base;
  base.n_groups = data.n_groups;
  base.d = data.d;
  base.pinned_group = o.pinned_group;
  const ModelConfig model = build_variant(variant, base);
  FitOptions fo;
  fo.rhat_threshold = o.rhat_threshold;
  fo.init_strategy = o.init == "prior" ? InitStrategy::Prior : InitStrategy::DataInformed;
  const FitResult fit = fit_model(data, model, priors, sc, fo);

  const fs::path out = g.out;
  save_draws(fit.draws, out / "draws.csv");
  write_json_file(diagnostics_to_json(fit.draws, fit.diagnostics, o.rhat_threshold), out / "diagnostics.json");

  Json config;
  config["data"] = data_path.string();
  config["data_hash"] = file_hash(data_path);
  config["variant"] = to_string(variant);
  config["delta"] = data.delta;
  config["pinned_group"] = o.pinned_group;
  config["n_groups"] = data.n_groups;
  config["d"] = data.d;
  config["sampler"] = sampler_config_to_json(sc);
  config["priors"] = priors_to_json(priors);
  config["init"] = o.init;
  config["rhat_threshold"] = o.rhat_threshold;
  Json info = config;
  info["n_global"] = fit.n_global;
  info["converged"] = fit.converged;
  info["max_rhat"] = fit.max_rhat;
  write_json_file(info, out / "fit.json");
  write_json_file(detail::manifest_for("fit", config, sc.seed, argv,
                                       {{"draws.csv", out / "draws.csv"},
                                        {"diagnostics.json", out / "diagnostics.json"},
                                        {"fit.json", out / "fit.json"}}),
                  out / "manifest.json");
  log << "fit " << to_string(variant) << ": " << fit.draws.n_draws() << " draws, max R-hat "
      << detail::num(fit.max_rhat) << ", " << fit.draws.n_divergent() << " divergent\n";
  if (!fit.converged && !o.allow_nonconverged)
    throw CommandFailure(kConvergence, "fit did not converge (max R-hat " + detail::num(fit.max_rhat) +
                                           "); rerun with more draws or pass --allow-nonconverged");
  return kOk;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateOptions {
  std::string mode;
  std::vector<std::string> fits;
  std::vector<std::string> truths;
  std::string data;
  std::optional<double> delta;
  double train_window = 0.5;
  std::string features;
  double years_per_unit = 0.0;
  double quantile = 0.25;
  int bootstrap = 0;
};

inline int evaluate_recovery(const GlobalOptions& g, const EvaluateOptions& o, const std::vector<std::string>& argv,
                             std::ostream& log) {
  if (o.truths.empty()) throw ConfigError("recovery mode needs --truth for every --fit");
  if (o.truths.size() != o.fits.size()) throw ConfigError("recovery mode needs exactly one --truth per --fit");
  if (o.fits.size() < 2) throw ConfigError("recovery mode needs at least two fits");
  std::vector<RecoveryTrial> trials;
  for (std::size_t k = 0; k < o.fits.size(); ++k) {
    const detail::FitDir f = detail::load_fit_dir(o.fits[k]);
    trials.push_back(recovery_trial(f.draws, f.n_global, load_truth(o.truths[k]), f.data, f.pinned_group));
  }
  const RecoveryReport r = recovery_report(trials);
  const fs::path out = g.out;

  std::ostringstream tsv;
  tsv << "parameter\tn_trials\tpearson_r\tslope\n";
  for (const auto& p : r.parameters)
    tsv << p.name << '\t' << p.n_trials << '\t' << detail::num(p.pearson) << '\t' << detail::num(p.slope) << '\n';
  detail::write_text(out / "recovery.tsv", tsv.str());
  std::ostringstream sev;
  sev << "group\tn_visits\tpearson_r\tslope\tmean_error\n";
  for (const auto& gs : r.groups)
    sev << gs.group << '\t' << gs.n << '\t' << detail::num(gs.pearson) << '\t' << detail::num(gs.slope) << '\t'
        << detail::num(gs.mean_error) << '\n';
  detail::write_text(out / "severity.tsv", sev.str());

  std::vector<ScatterPoint> params, severity;
  for (const auto& t : trials) {
    for (const auto& [name, v] : t.estimate) params.push_back({t.truth.at(name), v, 0});
    for (const auto& s : t.severity) severity.push_back({s.truth, s.estimate, s.group});
  }
  ScatterOptions po;
  po.title = "Global parameters: true vs posterior mean";
  detail::write_text(out / "parameters.svg", render_scatter_svg(params, po));
  ScatterOptions so;
  so.title = "Severity at visits: true vs posterior mean";
  for (const auto& gs : r.groups) so.series_names.push_back("group " + std::to_string(gs.group));
  detail::write_text(out / "severity.svg", render_scatter_svg(detail::thin_points(severity), so));

  Json summary;
  summary["mode"] = "recovery";
  summary["n_trials"] = trials.size();
  summary["mean_pearson_r"] = detail::opt_json(r.mean_pearson);
  summary["median_pearson_r"] = detail::opt_json(r.median_pearson);
  summary["mean_slope"] = detail::opt_json(r.mean_slope);
  summary["n_undefined"] = r.n_undefined;
  write_json_file(summary, out / "summary.json");
  Json config;
  config["mode"] = "recovery";
  config["fits"] = o.fits;
  config["truths"] = o.truths;
  write_json_file(detail::manifest_for("evaluate", config, g.seed.value_or(0), argv,
                                       {{"recovery.tsv", out / "recovery.tsv"}, {"severity.tsv", out / "severity.tsv"}}),
                  out / "manifest.json");
  log << "recovery over " << trials.size() << " trials: mean r " << detail::num(r.mean_pearson) << ", mean slope "
      << detail::num(r.mean_slope) << "\n";
  return kOk;
}

inline int evaluate_bias(const GlobalOptions& g, const EvaluateOptions& o, const std::vector<std::string>& argv,
                         std::ostream& log) {
  if (o.truths.size() != 1) throw ConfigError("bias mode needs exactly one --truth for the shared dataset");
  if (o.fits.empty()) throw ConfigError("bias mode needs at least one --fit");
  std::vector<detail::FitDir> fits;
  for (const auto& f : o.fits) fits.push_back(detail::load_fit_dir(f));
  for (const auto& f : fits)
    if (f.info.at("data_hash") != fits.front().info.at("data_hash"))
      throw DataError("bias mode: every fit must use the same dataset");
  const Dataset& data = fits.front().data;
  const ModelParams truth = load_truth(o.truths.front()).params(data);

  std::vector<BiasReport> reports;
  std::vector<HighRiskProfile> risk;
  for (const auto& f : fits) {
    const std::vector<PatientLatents> est = latent_means(f.draws, f.data);
    BiasReport r = bias_report(f.variant, data, truth, f.draws);
    r.max_rhat = f.info.value("max_rhat", 0.0);
    r.flagged = !f.info.value("converged", true);
    reports.push_back(r);
    risk.push_back(high_risk_profile(visit_severities(data, est), o.quantile));
  }
  const fs::path out = g.out;
  auto table = [&](bool aligned) {
    std::ostringstream tsv;
    tsv << "metric\tgroup";
    for (const auto& r : reports) tsv << '\t' << to_string(r.variant);
    tsv << '\n';
    for (const char* metric : {"bias", "correlation"})
      for (int grp = 0; grp < data.n_groups; ++grp) {
        tsv << metric << '\t' << grp;
        for (const auto& r : reports) {
          const GroupBias& b = aligned ? r.aligned.at(static_cast<std::size_t>(grp)) : r.group(grp);
          tsv << '\t' << (std::string(metric) == "bias" ? detail::num(b.mean_error) : detail::num(b.pearson));
        }
        tsv << '\n';
      }
    return tsv.str();
  };
  detail::write_text(out / "bias.tsv", table(false));
  detail::write_text(out / "bias_aligned.tsv", table(true));

  std::ostringstream hr;
  hr << "variant\tgroup\tn_visits\tn_flagged\tflagged_fraction\tshare\n";
  for (std::size_t k = 0; k < reports.size(); ++k)
    for (const auto& grp : risk[k].groups)
      hr << to_string(reports[k].variant) << '\t' << grp.group << '\t' << grp.n_visits << '\t' << grp.n_flagged << '\t'
         << detail::num(grp.flagged_fraction) << '\t' << detail::num(grp.share) << '\n';
  detail::write_text(out / "high_risk.tsv", hr.str());

  Json summary;
  summary["mode"] = "bias";
  summary["quantile"] = o.quantile;
  summary["variants"] = Json::array();
  for (std::size_t k = 0; k < reports.size(); ++k) {
    Json v;
    v["variant"] = to_string(reports[k].variant);
    v["underserved_group"] = reports[k].underserved;
    v["flagged_nonconverged"] = reports[k].flagged;
    v["max_rhat"] = reports[k].max_rhat;
    v["alignment_slope"] = reports[k].alignment.slope;
    v["alignment_offset"] = reports[k].alignment.offset;
    v["high_risk_degenerate"] = risk[k].degenerate;
    summary["variants"].push_back(v);
  }
  write_json_file(summary, out / "summary.json");
  Json config;
  config["mode"] = "bias";
  config["fits"] = o.fits;
  config["truth"] = o.truths.front();
  config["quantile"] = o.quantile;
  write_json_file(detail::manifest_for("evaluate", config, g.seed.value_or(0), argv,
                                       {{"bias.tsv", out / "bias.tsv"},
                                        {"bias_aligned.tsv", out / "bias_aligned.tsv"},
                                        {"high_risk.tsv", out / "high_risk.tsv"}}),
                  out / "manifest.json");
  log << "bias table for " << reports.size() << " variants written to " << (out / "bias.tsv").string() << "\n";
  return kOk;
}

inline int evaluate_baselines(const GlobalOptions& g, const EvaluateOptions& o, const std::vector<std::string>& argv,
                              std::ostream& log) {
  if (o.data.empty()) throw ConfigError("baselines mode needs --data");
  DatasetReadOptions ro;
  ro.delta = o.delta;
  const Dataset data = load_dataset(o.data, ro);
  const std::vector<std::size_t> informative = detail::parse_features(o.features, data.d);

  struct Row {
    std::string method;
    MapeResult info, all;
  };
  std::vector<Row> rows;
  auto add_matrix = [&](const std::string& name, const Eigen::MatrixXd& pred, const Eigen::MatrixXd& X, int d) {
    std::vector<std::size_t> cols;  // informative features repeat once per stacked visit
    for (Eigen::Index c = 0; c < X.cols(); ++c)
      if (informative.empty() ||
          std::find(informative.begin(), informative.end(), static_cast<std::size_t>(c % d)) != informative.end())
        cols.push_back(static_cast<std::size_t>(c));
    rows.push_back({name, mape(pred, X, cols), mape(pred, X)});
  };
  const Eigen::MatrixXd V = visit_matrix(data, std::numeric_limits<std::size_t>::max());
  add_matrix("pca_visit", pca_reconstruct(pca_fit(V, 1), V), V, data.d);
  add_matrix("fa_visit", fa_reconstruct(fa_fit(V, 1), V), V, data.d);
  const Eigen::MatrixXd P = patient_matrix(data);
  if (P.rows() >= 2) {
    add_matrix("pca_patient", pca_reconstruct(pca_fit(P, 2), P), P, data.d);
    add_matrix("fa_patient", fa_reconstruct(fa_fit(P, 2), P), P, data.d);
  }
  for (TrajectoryMethod m : {TrajectoryMethod::Linear, TrajectoryMethod::Quadratic, TrajectoryMethod::Latest}) {
    const auto cells = trajectory_baselines(data, o.train_window, m);
    rows.push_back({std::string("forecast_") + to_string(m), mape(cells, informative), mape(cells)});
  }

  const fs::path out = g.out;
  std::ostringstream tsv;
  tsv << "method\tmape_informative\tmape_all\n";
  for (const auto& r : rows) tsv << r.method << '\t' << detail::num(r.info.value) << '\t' << detail::num(r.all.value) << '\n';
  detail::write_text(out / "baselines.tsv", tsv.str());
  Json summary;
  summary["mode"] = "baselines";
  summary["train_window"] = o.train_window;
  summary["informative_features"] = informative;
  for (const auto& r : rows) summary["mape_all"][r.method] = detail::opt_json(r.all.value);
  write_json_file(summary, out / "summary.json");
  Json config;
  config["mode"] = "baselines";
  config["data"] = o.data;
  config["train_window"] = o.train_window;
  config["features"] = o.features;
  write_json_file(detail::manifest_for("evaluate", config, g.seed.value_or(0), argv,
                                       {{"baselines.tsv", out / "baselines.tsv"}}),
                  out / "manifest.json");
  log << "baseline comparison for " << rows.size() << " methods written\n";
  return kOk;
}

inline int evaluate_oracles(const GlobalOptions& g, const std::vector<std::string>& argv, std::ostream& log) {
  std::ostringstream tsv;
  tsv << "theorem\tshift\tnoise\tdirection\tobserved\tt\tvisit\te_pop\te_group\terror_bound\tstatus\n";
  int failures = 0, total = 0;
  for (Theorem th : {Theorem::InitialSeverity, Theorem::Rate, Theorem::VisitFrequency}) {
    for (const OracleScenario& s : oracle_grid(th)) {
      ++total;
      tsv << to_string(th) << '\t' << detail::num(s.shift) << '\t' << detail::num(s.noise) << '\t'
          << (s.reversed ? "advantaged" : "disadvantaged") << '\t' << detail::num(s.x) << '\t' << detail::num(s.t)
          << '\t' << s.visit << '\t';
      try {
        const OracleResult r = mlrp_bias_oracle(s);
        tsv << detail::num(r.e_pop) << '\t' << detail::num(r.e_group) << '\t' << detail::num(r.error_bound) << '\t'
            << (r.holds ? "pass" : "fail") << '\n';
        failures += !r.holds;
      } catch (const PrecisionError& e) {
        tsv << "NA\tNA\tNA\tprecision_error\n";
        ++failures;
      }
    }
  }
  const fs::path out = g.out;
  detail::write_text(out / "oracles.tsv", tsv.str());
  Json summary;
  summary["mode"] = "oracles";
  summary["scenarios"] = total;
  summary["failures"] = failures;
  summary["note"] = "visit-frequency scenarios use a constant shift alpha";
  write_json_file(summary, out / "summary.json");
  Json config;
  config["mode"] = "oracles";
  write_json_file(detail::manifest_for("evaluate", config, g.seed.value_or(0), argv, {{"oracles.tsv", out / "oracles.tsv"}}),
                  out / "manifest.json");
  log << total - failures << " of " << total << " oracle scenarios passed\n";
  if (failures > 0) throw CommandFailure(kOracle, std::to_string(failures) + " oracle scenario(s) failed");
  return kOk;
}

inline int evaluate_disparity(const GlobalOptions& g, const EvaluateOptions& o, const std::vector<std::string>& argv,
                              std::ostream& log) {
  if (o.fits.size() != 1) throw ConfigError("disparity mode needs exactly one --fit");
  if (!(o.years_per_unit > 0.0)) throw ConfigError("disparity mode needs --years-per-unit (no default)");
  const detail::FitDir f = detail::load_fit_dir(o.fits.front());
  const DisparitySummary s = disparity_summary(f.draws, f.data.n_groups, f.pinned_group, o.years_per_unit);

  const std::vector<PatientLatents> est = latent_means(f.draws, f.data);
  std::vector<std::optional<BootstrapResult>> boot(static_cast<std::size_t>(f.data.n_groups));
  if (o.bootstrap > 0) {
    // Interval for each group's share of high-risk visits, resampling patients.
    for (int grp = 0; grp < f.data.n_groups; ++grp) {
      auto stat = [&](std::span<const std::size_t> idx) -> std::optional<double> {
        std::vector<VisitSeverity> v;
        for (std::size_t i : idx) {
          const auto& rec = f.data.patients[i];
          for (std::size_t t = 0; t < rec.horizon(); ++t)
            if (rec.visit(t)) v.push_back({rec.group.index, est[i].severity(static_cast<double>(t) * f.data.delta)});
        }
        const HighRiskProfile p = high_risk_profile(v, o.quantile);
        if (p.degenerate) return std::nullopt;
        for (const auto& gr : p.groups)
          if (gr.group == grp) return gr.flagged_fraction;
        return std::nullopt;
      };
      boot[static_cast<std::size_t>(grp)] =
          cluster_bootstrap(stat, f.data.size(), o.bootstrap, g.seed.value_or(0) + static_cast<std::uint64_t>(grp));
    }
  }

  const fs::path out = g.out;
  std::ostringstream tsv;
  tsv << "group\tdelta_muZ0\tdelta_muZ0_lo\tdelta_muZ0_hi\tdelay_units\tdelay_years\tbetaA\trate_ratio\trate_ratio_lo"
         "\trate_ratio_hi\thigh_risk_fraction_lo\thigh_risk_fraction_hi\n";
  for (const auto& gd : s.groups) {
    auto iv = [](const std::optional<Interval>& i, double Interval::*m) {
      return i ? detail::num(i.value().*m) : std::string("NA");
    };
    const auto& b = boot[static_cast<std::size_t>(gd.group)];
    tsv << gd.group << '\t' << iv(gd.delta_muZ0, &Interval::mean) << '\t' << iv(gd.delta_muZ0, &Interval::lower)
        << '\t' << iv(gd.delta_muZ0, &Interval::upper) << '\t' << detail::num(gd.delay_units) << '\t'
        << detail::num(gd.delay_years) << '\t' << iv(gd.betaA, &Interval::mean) << '\t' << detail::num(gd.rate_ratio)
        << '\t' << iv(gd.rate_ratio_draws, &Interval::lower) << '\t' << iv(gd.rate_ratio_draws, &Interval::upper)
        << '\t' << (b ? detail::num(b->lower) : "NA") << '\t' << (b ? detail::num(b->upper) : "NA") << '\n';
  }
  detail::write_text(out / "disparity.tsv", tsv.str());
  Json summary;
  summary["mode"] = "disparity";
  summary["mean_rate"] = s.mean_rate;
  summary["delay_defined"] = s.delay_defined;
  summary["years_per_unit"] = s.years_per_unit;
  write_json_file(summary, out / "summary.json");
  Json config;
  config["mode"] = "disparity";
  config["fit"] = o.fits.front();
  config["years_per_unit"] = o.years_per_unit;
  config["quantile"] = o.quantile;
  config["bootstrap"] = o.bootstrap;
  write_json_file(detail::manifest_for("evaluate", config, g.seed.value_or(0), argv,
                                       {{"disparity.tsv", out / "disparity.tsv"}}),
                  out / "manifest.json");
  log << "disparity summary written (mean rate " << detail::num(s.mean_rate) << ")\n";
  return kOk;
}

inline int cmd_evaluate(const GlobalOptions& g, const EvaluateOptions& o, const std::vector<std::string>& argv,
                        std::ostream& log) {
  if (o.mode == "recovery") return evaluate_recovery(g, o, argv, log);
  if (o.mode == "bias") return evaluate_bias(g, o, argv, log);
  if (o.mode == "baselines") return evaluate_baselines(g, o, argv, log);
  if (o.mode == "oracles") return evaluate_oracles(g, argv, log);
  if (o.mode == "disparity") return evaluate_disparity(g, o, argv, log);
  throw ConfigError("unknown evaluate mode '" + o.mode + "'");
}

// ---------------------------------------------------------------------------
// report

/// Gathers the summaries, diagnostics and tables of earlier runs into one
/// plain-text report.
inline int cmd_report(const GlobalOptions& g, const std::vector<std::string>& inputs, std::ostream& log) {
  if (inputs.empty()) throw ConfigError("report needs at least one --in directory");
  std::ostringstream md;
  md << "# progdisp report\n";
  for (const auto& in : inputs) {
    const fs::path dir = in;
    if (!fs::is_directory(dir)) throw DataError("report: '" + in + "' is not a directory");
    md << "\n## " << dir.filename().string() << "\n";
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& p : files) {
      const std::string name = p.filename().string();
      if (name == "summary.json" || name == "diagnostics.json" || name == "fit.json") {
        Json j = read_json_file(p);
        if (name == "diagnostics.json") j.erase("parameters");
        if (name == "fit.json") j.erase("priors");
        md << "\n### " << name << "\n\n```json\n" << j.dump(2) << "\n```\n";
      } else if (p.extension() == ".tsv") {
        auto s = progdisp::detail::open_in(p);
        md << "\n### " << name << "\n\n```\n" << s.rdbuf() << "```\n";
      }
    }
  }
  const fs::path out = fs::path(g.out) / "report.md";
  detail::write_text(out, md.str());
  log << "report written to " << out.string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// Entry point

/// Parses `args` (without the program name), runs the command and returns
/// the process exit code. Messages go to `log`, errors to `err`.
inline int run_cli(const std::vector<std::string>& args, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Disease progression with disparities: simulate, fit and evaluate"};
  app.require_subcommand(1);
  GlobalOptions g;
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Master random seed")->trigger_on_parse();
  app.add_option("--threads", g.threads, "Worker threads for sampling chains")->check(CLI::PositiveNumber);
  app.add_option("--out", g.out, "Output directory");
  (void)seed_opt;

  SimulateOptions so;
  auto* sim = app.add_subcommand("simulate", "Simulate a synthetic cohort with ground truth");
  sim->add_option("--config", so.config, "Simulation config (JSON)");
  sim->add_option("--n-patients", so.n_patients);
  sim->add_option("--n-bins", so.n_bins);
  sim->add_option("--d", so.d, "Number of features");

  FitCommandOptions fo;
  auto* fit = app.add_subcommand("fit", "Fit a model variant with NUTS");
  fit->add_option("--data", fo.data, "Dataset CSV")->required();
  fit->add_option("--variant", fo.variant, "Full, NoInitialSeverityDisparity, NoRateDisparity, NoVisitDisparity or NoDisparities");
  fit->add_option("--delta", fo.delta, "Bin width in normalized time (default 1 / last bin)");
  fit->add_option("--pinned-group", fo.pinned_group, "Reference group");
  fit->add_option("--sampler-config", fo.sampler_config, "Sampler config (JSON)");
  fit->add_option("--chains", fo.chains);
  fit->add_option("--warmup", fo.warmup);
  fit->add_option("--draws", fo.draws);
  fit->add_option("--target-accept", fo.target_accept);
  fit->add_option("--max-leapfrog", fo.max_leapfrog);
  fit->add_option("--priors", fo.priors, "synthetic or simulation");
  fit->add_option("--prior-overrides", fo.prior_overrides, "Prior overrides (JSON)");
  fit->add_option("--init", fo.init, "data or prior");
  fit->add_option("--rhat-threshold", fo.rhat_threshold);
  fit->add_flag("--allow-nonconverged", fo.allow_nonconverged, "Exit 0 even when R-hat is above the threshold");

  EvaluateOptions eo;
  auto* ev = app.add_subcommand("evaluate", "Score fits: recovery, bias, baselines, oracles or disparity");
  ev->add_option("--mode", eo.mode)->required()->check(CLI::IsMember({"recovery", "bias", "baselines", "oracles", "disparity"}));
  ev->add_option("--fit", eo.fits, "Fit output directory (repeatable)");
  ev->add_option("--truth", eo.truths, "Truth sidecar (repeatable)");
  ev->add_option("--data", eo.data, "Dataset CSV (baselines mode)");
  ev->add_option("--delta", eo.delta);
  ev->add_option("--train-window", eo.train_window, "Forecast training window in normalized time");
  ev->add_option("--features", eo.features, "Informative feature indices, comma separated");
  ev->add_option("--years-per-unit", eo.years_per_unit, "Calendar years per unit of normalized time");
  ev->add_option("--quantile", eo.quantile, "High-risk share q");
  ev->add_option("--bootstrap", eo.bootstrap, "Cluster-bootstrap replicates (0 to skip, else >= 100)");

  std::vector<std::string> report_inputs;
  auto* rep = app.add_subcommand("report", "Collect run outputs into one report");
  rep->add_option("--in", report_inputs, "Run directory (repeatable)")->required();

  for (auto* sub : {sim, fit, ev, rep}) sub->fallthrough();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, log, err);
    return code == 0 ? kOk : kUsage;
  }
  if (app.count("--seed") > 0) g.seed = seed;

  std::vector<std::string> argv{"progdisp"};
  argv.insert(argv.end(), args.begin(), args.end());
  try {
    if (*sim) return cmd_simulate(g, so, argv, log);
    if (*fit) return cmd_fit(g, fo, argv, log);
    if (*ev) return cmd_evaluate(g, eo, argv, log);
    if (*rep) return cmd_report(g, report_inputs, log);
  } catch (const CommandFailure& e) {
    err << "error: " << e.what() << "\n";
    return e.code();
  } catch (const PrecisionError& e) {
    err << "precision error: " << e.what() << "\n";
    return kOracle;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kData;
  } catch (const LookupError& e) {
    err << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}

}  // namespace progdisp::cli
