// Turns per-episode probabilities back into real-world per-mile rates,
// compares them against human-driver baselines, and renders the run report
// (JSON + text summary + plot CSVs).
//
// Report JSON is deterministic: ordered keys, no timestamps outside the
// "timing" block, and non-finite values serialized as the strings
// "inf" / "-inf" / "nan" so the file round-trips losslessly.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "estimator.hpp"
#include "numeric.hpp"
#include "rng.hpp"
#include "threat_model.hpp"

namespace accel_eval {

using ordered_json = nlohmann::ordered_json;

// Per-mile frequency of the scenario's initiating event in everyday
// driving; the bridge between per-episode probabilities and mileage.
struct ExposureModel {
  double events_per_mile = 1.0;
  std::string source_tag = "synthetic-default";
};

inline void validate(const ExposureModel& x) {
  if (!(x.events_per_mile > 0.0) || !std::isfinite(x.events_per_mile)) {
    throw ConfigError("ExposureModel: events_per_mile must be finite, > 0");
  }
}

inline ExposureModel default_exposure(ScenarioTag scenario) {
  switch (scenario) {
    case ScenarioTag::car_following:
      return ExposureModel{1.0, "synthetic-default"};
    case ScenarioTag::cut_in:
      return ExposureModel{0.2, "synthetic-default"};
  }
  throw DomainError("default_exposure: unknown scenario");
}

struct HumanBaseline {
  double police_reported_crash_rate = 1.0 / 530000.0;  // per mile
  double fatal_rate = 1e-8;                            // per mile
  double incident_data_rate = 1e-5;                    // per mile
};

inline void validate(const HumanBaseline& b) {
  if (!(b.police_reported_crash_rate > 0.0) || !(b.fatal_rate > 0.0) ||
      !(b.incident_data_rate > 0.0)) {
    throw ConfigError("HumanBaseline: all rates must be > 0");
  }
  if (b.fatal_rate > b.police_reported_crash_rate) {
    throw ConfigError(
        "HumanBaseline: fatal_rate must not exceed police_reported_crash_rate");
  }
}

// Which human-driver rate a metric is judged against: crashes against
// police-reported crashes, injury-weighted crashes against fatalities,
// conflicts against incident-data events.
inline double baseline_for_metric(const HumanBaseline& b, Metric m) {
  switch (m) {
    case Metric::crash: return b.police_reported_crash_rate;
    case Metric::injury: return b.fatal_rate;
    case Metric::conflict: return b.incident_data_rate;
  }
  throw DomainError("baseline_for_metric: unknown metric");
}

struct PerMileRate {
  double rate = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  double miles_per_event = kInf;
};

// Pure scaling: rate = p_event * events_per_mile, interval scaled the same
// way, no rounding anywhere.
inline PerMileRate per_event_to_per_mile(const Estimate& e,
                                         const ExposureModel& exposure) {
  validate(exposure);
  PerMileRate r;
  r.rate = e.p_hat * exposure.events_per_mile;
  r.ci_lo = e.ci_lo * exposure.events_per_mile;
  r.ci_hi = e.ci_hi * exposure.events_per_mile;
  r.miles_per_event = r.rate > 0.0 ? 1.0 / r.rate : kInf;
  return r;
}

inline constexpr const char* kVerdictSafer = "SAFER_AT_CONFIDENCE";
inline constexpr const char* kVerdictNotEstablished = "NOT_ESTABLISHED";

struct SafetyComparison {
  std::string verdict;
  double point_improvement = 0.0;  // 1 - rate/baseline
  double required_improvement = 0.9;
  double baseline_per_mile = 0.0;
  double threshold_per_mile = 0.0;  // (1 - required) * baseline
};

// Conservative test: the whole interval, not just the point estimate, must
// sit at or below the allowed residual rate.
inline SafetyComparison safety_comparison(const PerMileRate& av,
                                          double baseline_per_mile,
                                          double required_improvement = 0.9) {
  if (!(baseline_per_mile > 0.0)) {
    throw DomainError("safety_comparison: baseline must be > 0");
  }
  if (!(required_improvement > 0.0 && required_improvement < 1.0)) {
    throw DomainError("safety_comparison: required_improvement must be in (0,1)");
  }
  SafetyComparison c;
  c.required_improvement = required_improvement;
  c.baseline_per_mile = baseline_per_mile;
  c.threshold_per_mile = (1.0 - required_improvement) * baseline_per_mile;
  c.point_improvement = 1.0 - av.rate / baseline_per_mile;
  c.verdict = av.ci_hi <= c.threshold_per_mile ? kVerdictSafer
                                               : kVerdictNotEstablished;
  return c;
}

inline constexpr const char* kRequiredMilesFormula =
    "miles = z_one_sided(confidence)^2 / ((1 - required_improvement)^2 * "
    "baseline_rate_per_mile)";

// Naturalistic mileage needed before a one-sided normal test at the given
// confidence can resolve the certified residual rate
// (1 - required_improvement) * baseline out of baseline-rate noise:
// z * sqrt(lambda * M) <= (1 - improvement) * lambda * M.
inline double required_naturalistic_miles(double baseline_rate,
                                          double required_improvement,
                                          double confidence) {
  if (!(baseline_rate > 0.0)) {
    throw DomainError("required_naturalistic_miles: baseline must be > 0");
  }
  if (!(required_improvement > 0.0 && required_improvement < 1.0)) {
    throw DomainError(
        "required_naturalistic_miles: required_improvement must be in (0,1)");
  }
  if (!(confidence > 0.0 && confidence < 1.0)) {
    throw DomainError("required_naturalistic_miles: confidence must be in (0,1)");
  }
  const double z = normal_quantile(confidence);  // one-sided
  const double resid = 1.0 - required_improvement;
  return z * z / (resid * resid * baseline_rate);
}

// Mileage a plain on-road program would need to match this run's precision:
// exposure miles represented by the episodes, scaled by the variance-ratio
// speed-up.
inline double equivalent_miles(double n_episodes, const ExposureModel& exposure,
                               double acceleration_factor) {
  validate(exposure);
  if (!(n_episodes > 0.0)) {
    throw DomainError("equivalent_miles: episode count must be > 0");
  }
  if (!(acceleration_factor >= 0.0)) {
    throw DomainError("equivalent_miles: factor must be >= 0");
  }
  return n_episodes / exposure.events_per_mile * acceleration_factor;
}

// ---- JSON helpers -------------------------------------------------------

// Doubles go into JSON as numbers except non-finite values, which become
// sentinel strings (plain JSON has no spelling for them).
inline ordered_json json_number(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0.0 ? "inf" : "-inf";
}

inline double number_from_json(const ordered_json& j, const char* what) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "inf") return kInf;
    if (s == "-inf") return -kInf;
    if (s == "nan") return std::nan("");
    throw DataError(std::string("report field ") + what +
                    ": unrecognized numeric sentinel '" + s + "'");
  }
  throw DataError(std::string("report field ") + what + ": expected a number");
}

inline ordered_json estimate_to_json(const Estimate& e) {
  ordered_json j;
  j["metric"] = metric_name(e.metric);
  j["method"] = method_name(e.method);
  j["p_hat"] = json_number(e.p_hat);
  j["variance"] = json_number(e.variance);
  j["ci"] = ordered_json{{"lo", json_number(e.ci_lo)},
                         {"hi", json_number(e.ci_hi)},
                         {"confidence", e.confidence}};
  j["n"] = e.n;
  j["ess"] = json_number(e.ess);
  j["invalid_count"] = e.invalid_count;
  j["seed"] = e.seed;
  j["all_zero_weights"] = e.all_zero_weights;
  j["crude_variance_estimate"] = json_number(e.crude_variance_estimate);
  return j;
}

inline Estimate estimate_from_json(const ordered_json& j) {
  Estimate e;
  try {
    e.metric = metric_from_name(j.at("metric").get<std::string>());
    e.method = j.at("method").get<std::string>() == "crude" ? Method::crude
                                                            : Method::importance;
    e.p_hat = number_from_json(j.at("p_hat"), "p_hat");
    e.variance = number_from_json(j.at("variance"), "variance");
    e.ci_lo = number_from_json(j.at("ci").at("lo"), "ci.lo");
    e.ci_hi = number_from_json(j.at("ci").at("hi"), "ci.hi");
    e.confidence = j.at("ci").at("confidence").get<double>();
    e.n = j.at("n").get<std::uint64_t>();
    e.ess = number_from_json(j.at("ess"), "ess");
    e.invalid_count = j.at("invalid_count").get<std::uint64_t>();
    e.seed = j.at("seed").get<std::uint64_t>();
    e.all_zero_weights = j.at("all_zero_weights").get<bool>();
    e.crude_variance_estimate =
        number_from_json(j.at("crude_variance_estimate"),
                         "crude_variance_estimate");
  } catch (const nlohmann::json::exception& ex) {
    throw DataError(std::string("malformed estimate JSON: ") + ex.what());
  }
  return e;
}

// ---- Report assembly ----------------------------------------------------

struct RunMetadata {
  std::string run_id;
  std::uint64_t seed = 0;
  ScenarioTag scenario = ScenarioTag::car_following;
  std::string policy_id;
  std::string method;  // crude | is | is_ce
  bool non_converged = false;
  double wall_s = 0.0;
};

struct ReportInputs {
  RunMetadata meta;
  std::vector<Estimate> estimates;  // one per metric, crash first
  ExposureModel exposure;
  HumanBaseline baseline;
  double acceleration_factor = 1.0;
  double required_improvement = 0.9;
  std::uint64_t episodes_drawn = 0;  // including invalid ones
  std::vector<TraceRow> convergence;
  std::vector<double> weights;       // per-episode likelihood ratios
  ordered_json proposal;             // threat model actually sampled, or null
  std::string notes;
};

// Fixed-width log10 histogram of the positive weights. Zero weights carry
// no histogram mass (their count is visible via ess / all_zero_weights).
inline std::vector<std::array<double, 3>> weight_histogram(
    std::span<const double> weights, double bin_width = 0.5) {
  std::vector<std::array<double, 3>> rows;
  double lo_edge = kInf, hi_edge = -kInf;
  for (double w : weights) {
    if (w > 0.0) {
      const double l = std::log10(w);
      lo_edge = std::min(lo_edge, l);
      hi_edge = std::max(hi_edge, l);
    }
  }
  if (!(lo_edge <= hi_edge)) return rows;
  const long long first = static_cast<long long>(std::floor(lo_edge / bin_width));
  const long long last = static_cast<long long>(std::floor(hi_edge / bin_width));
  rows.assign(static_cast<std::size_t>(last - first + 1), {});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i][0] = static_cast<double>(first + static_cast<long long>(i)) * bin_width;
    rows[i][1] = rows[i][0] + bin_width;
    rows[i][2] = 0.0;
  }
  for (double w : weights) {
    if (w > 0.0) {
      long long b = static_cast<long long>(std::floor(std::log10(w) / bin_width));
      b = std::min(std::max(b, first), last);  // top edge lands in last bin
      rows[static_cast<std::size_t>(b - first)][2] += 1.0;
    }
  }
  return rows;
}

inline ordered_json build_report(const ReportInputs& in) {
  if (in.estimates.empty()) {
    throw ConfigError("report: need at least one estimate");
  }
  validate(in.exposure);
  validate(in.baseline);

  ordered_json j;
  j["run_id"] = in.meta.run_id;
  j["seed"] = in.meta.seed;
  j["scenario"] = scenario_name(in.meta.scenario);
  j["policy_id"] = in.meta.policy_id;
  j["method"] = in.meta.method;

  std::string headline_verdict = kVerdictNotEstablished;
  ordered_json ests = ordered_json::array();
  for (const Estimate& e : in.estimates) {
    const PerMileRate pm = per_event_to_per_mile(e, in.exposure);
    const double base = baseline_for_metric(in.baseline, e.metric);
    const SafetyComparison cmp =
        safety_comparison(pm, base, in.required_improvement);
    ordered_json ej = estimate_to_json(e);
    ej["per_mile_rate"] = json_number(pm.rate);
    ej["per_mile_ci"] = ordered_json{{"lo", json_number(pm.ci_lo)},
                                     {"hi", json_number(pm.ci_hi)}};
    ej["miles_per_event"] = json_number(pm.miles_per_event);
    ej["baseline_per_mile"] = json_number(base);
    ej["point_improvement"] = json_number(cmp.point_improvement);
    ej["verdict"] = cmp.verdict;
    ej["required_naturalistic_miles"] = json_number(required_naturalistic_miles(
        base, in.required_improvement, e.confidence));
    ests.push_back(std::move(ej));
    if (e.metric == Metric::crash) headline_verdict = cmp.verdict;
  }
  j["estimates"] = std::move(ests);

  j["exposure"] = ordered_json{{"events_per_mile", in.exposure.events_per_mile},
                               {"source_tag", in.exposure.source_tag}};
  j["baseline"] = ordered_json{
      {"police_reported_crash_rate", in.baseline.police_reported_crash_rate},
      {"fatal_rate", in.baseline.fatal_rate},
      {"incident_data_rate", in.baseline.incident_data_rate}};
  j["acceleration_factor"] = json_number(in.acceleration_factor);
  if (in.episodes_drawn > 0) {
    j["equivalent_miles"] = json_number(
        equivalent_miles(static_cast<double>(in.episodes_drawn), in.exposure,
                         in.acceleration_factor));
  } else {
    j["equivalent_miles"] = json_number(0.0);
  }
  j["verdict"] = headline_verdict;
  j["non_converged"] = in.meta.non_converged;
  j["required_improvement"] = in.required_improvement;
  j["required_miles_formula"] = kRequiredMilesFormula;
  j["episodes_drawn"] = in.episodes_drawn;
  // Equivalent-miles mileage counts episode exposure (episodes divided by
  // events-per-mile), not odometer distance.
  j["equivalent_miles_definition"] = "episode-exposure miles x acceleration_factor";
  j["proposal"] = in.proposal.is_null() ? ordered_json(nullptr) : in.proposal;
  ordered_json conv = ordered_json::array();
  for (const TraceRow& r : in.convergence) {
    conv.push_back(ordered_json::array(
        {r.n, json_number(r.p_hat), json_number(r.ci_lo), json_number(r.ci_hi)}));
  }
  j["convergence"] = std::move(conv);
  ordered_json hist = ordered_json::array();
  for (const auto& row : weight_histogram(in.weights)) {
    hist.push_back(ordered_json::array(
        {json_number(row[0]), json_number(row[1]),
         static_cast<std::uint64_t>(row[2])}));
  }
  j["weights_hist"] = std::move(hist);
  if (!in.notes.empty()) j["notes"] = in.notes;
  j["timing"] = ordered_json{{"wall_s", in.meta.wall_s}};
  return j;
}

// ---- File rendering -----------------------------------------------------

namespace detail {

inline void write_text_file(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << body;
  out.flush();
  if (!out) throw IoError("write failed: " + path);
}

inline std::string fmt_g17(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string fmt_sig(double v, int digits = 4) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.*g", digits, v);
  return buf;
}

}  // namespace detail

inline std::string render_convergence_csv(const ordered_json& report) {
  std::string out = "n,p_hat,ci_lo,ci_hi\n";
  for (const auto& row : report.at("convergence")) {
    out += std::to_string(row.at(0).get<std::uint64_t>());
    for (int c = 1; c < 4; ++c) {
      out += ',';
      out += detail::fmt_g17(number_from_json(row.at(c), "convergence"));
    }
    out += '\n';
  }
  return out;
}

inline std::string render_weights_csv(const ordered_json& report) {
  std::string out = "log10_bin_lo,log10_bin_hi,count\n";
  for (const auto& row : report.at("weights_hist")) {
    out += detail::fmt_g17(number_from_json(row.at(0), "weights_hist"));
    out += ',';
    out += detail::fmt_g17(number_from_json(row.at(1), "weights_hist"));
    out += ',';
    out += std::to_string(row.at(2).get<std::uint64_t>());
    out += '\n';
  }
  return out;
}

// Text summary for humans. Deliberately timing-free so it stays
// byte-identical for identical runs.
inline std::string render_summary_text(const ordered_json& r) {
  using detail::fmt_sig;
  std::string s;
  s += "accelerated-evaluation report\n";
  s += "run_id:   " + r.at("run_id").get<std::string>() + "\n";
  s += "scenario: " + r.at("scenario").get<std::string>() + "\n";
  s += "policy:   " + r.at("policy_id").get<std::string>() + "\n";
  s += "method:   " + r.at("method").get<std::string>() + "\n";
  s += "seed:     " + std::to_string(r.at("seed").get<std::uint64_t>()) + "\n";
  s += "\n";
  for (const auto& e : r.at("estimates")) {
    const double conf = e.at("ci").at("confidence").get<double>();
    s += e.at("metric").get<std::string>() + ":\n";
    s += "  p_event:        " + fmt_sig(number_from_json(e.at("p_hat"), "p_hat"));
    s += "  (" + fmt_sig(100.0 * conf, 3) + "% CI " +
         fmt_sig(number_from_json(e.at("ci").at("lo"), "ci.lo")) + " .. " +
         fmt_sig(number_from_json(e.at("ci").at("hi"), "ci.hi")) + ")\n";
    s += "  per mile:       " +
         fmt_sig(number_from_json(e.at("per_mile_rate"), "per_mile_rate")) +
         "  (one per " +
         fmt_sig(number_from_json(e.at("miles_per_event"), "miles_per_event")) +
         " miles)\n";
    s += "  baseline:       " +
         fmt_sig(number_from_json(e.at("baseline_per_mile"), "baseline")) +
         " per mile\n";
    s += "  improvement:    " +
         fmt_sig(number_from_json(e.at("point_improvement"), "improvement")) +
         "\n";
    s += "  verdict:        " + e.at("verdict").get<std::string>() + "\n";
    s += "  n: " + std::to_string(e.at("n").get<std::uint64_t>());
    s += "  ess: " + fmt_sig(number_from_json(e.at("ess"), "ess"));
    s += "  invalid: " +
         std::to_string(e.at("invalid_count").get<std::uint64_t>()) + "\n";
  }
  s += "\n";
  s += "acceleration_factor: " +
       fmt_sig(number_from_json(r.at("acceleration_factor"), "factor")) + "\n";
  s += "equivalent_miles:    " +
       fmt_sig(number_from_json(r.at("equivalent_miles"), "equivalent_miles")) +
       "  (" + r.at("equivalent_miles_definition").get<std::string>() + ")\n";
  s += "verdict:             " + r.at("verdict").get<std::string>() + "\n";
  s += "non_converged:       ";
  s += r.at("non_converged").get<bool>() ? "true" : "false";
  s += "\n";
  s += "required-miles formula: " +
       r.at("required_miles_formula").get<std::string>() + "\n";
  return s;
}

// Writes report.json, summary.txt, convergence.csv, weights.csv into dir.
inline void write_report_files(const std::string& dir,
                               const ordered_json& report) {
  const std::string base = dir.empty() ? std::string(".") : dir;
  detail::write_text_file(base + "/report.json", report.dump(2) + "\n");
  detail::write_text_file(base + "/summary.txt", render_summary_text(report));
  detail::write_text_file(base + "/convergence.csv",
                          render_convergence_csv(report));
  detail::write_text_file(base + "/weights.csv", render_weights_csv(report));
}

// Deterministic run identifier derived from the run's identifying inputs.
inline std::string make_run_id(std::uint64_t seed, const std::string& scenario,
                               const std::string& policy_id,
                               const std::string& method, std::uint64_t n_or_cap) {
  std::uint64_t h = combine64(seed, n_or_cap);
  for (const std::string* s : {&scenario, &policy_id, &method}) {
    for (unsigned char c : *s) h = combine64(h, c);
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---- Report-vs-report comparison ---------------------------------------

struct ComparisonResult {
  double z = 0.0;                    // difference over combined SE
  bool agree = true;                 // |z| <= 3
  double acceleration_factor = 1.0;  // per-sample variance ratio a/b
  Estimate a, b;
};

inline ComparisonResult compare_estimates(const Estimate& a, const Estimate& b) {
  ComparisonResult c;
  c.a = a;
  c.b = b;
  const double se = std::sqrt(a.variance + b.variance);
  const double diff = a.p_hat - b.p_hat;
  c.z = diff == 0.0 ? 0.0 : (se > 0.0 ? diff / se : kInf);
  c.agree = std::abs(c.z) <= 3.0;
  c.acceleration_factor = acceleration_factor(a, b);
  return c;
}

}  // namespace accel_eval
