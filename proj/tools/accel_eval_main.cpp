// Command-line front end.
//
// Subcommands:
//   fit      drive logs -> extracted events -> fitted threat model JSON
//   run      execute a configured estimation run, write report + plot CSVs
//   compare  two report JSONs -> z-score agreement + acceleration factor
//   report   re-render summary/CSVs from an existing report JSON
//
// Exit codes: 0 ok, 2 config error, 3 data error, 4 non-converged,
// 5 policy fault, 6 comparison disagreement.

#include <CLI11.hpp>

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <accel_eval/estimator.hpp>
#include <accel_eval/ingest.hpp>
#include <accel_eval/plugin_policy.hpp>
#include <accel_eval/reporting.hpp>

namespace ae = accel_eval;
namespace fs = std::filesystem;
using ae::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNonConverged = 4;
constexpr int kExitPolicyFault = 5;
constexpr int kExitDisagreement = 6;

ordered_json load_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ae::IoError("cannot open: " + path);
  try {
    return ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ae::DataError(path + ": " + e.what());
  }
}

void write_file(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ae::IoError("cannot open for writing: " + path);
  out << body;
  out.flush();
  if (!out) throw ae::IoError("write failed: " + path);
}

// ---- fit ----------------------------------------------------------------

std::map<std::string, ae::Family> parse_family_spec(const std::string& spec) {
  std::map<std::string, ae::Family> out;
  if (spec.empty()) return out;
  std::size_t start = 0;
  while (start <= spec.size()) {
    std::size_t end = spec.find(',', start);
    if (end == std::string::npos) end = spec.size();
    const std::string item = spec.substr(start, end - start);
    const std::size_t eq = item.find('=');
    if (eq == std::string::npos) {
      throw ae::ConfigError("--families entries must look like name=family: '" +
                            item + "'");
    }
    out[item.substr(0, eq)] = ae::family_from_name(item.substr(eq + 1));
    start = end + 1;
    if (end == spec.size()) break;
  }
  return out;
}

int cmd_fit(const std::string& logs_dir, const std::string& scenario_str,
            const std::string& families_str, const std::string& out_path) {
  const ae::ScenarioTag scenario = ae::scenario_from_name(scenario_str);
  const auto families = parse_family_spec(families_str);

  std::vector<std::string> paths;
  if (!fs::is_directory(logs_dir)) {
    throw ae::ConfigError("--logs must be a directory: " + logs_dir);
  }
  for (const auto& entry : fs::directory_iterator(logs_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".csv") {
      paths.push_back(entry.path().string());
    }
  }
  std::sort(paths.begin(), paths.end());

  std::vector<ae::ExtractedEvent> events;
  for (const std::string& p : paths) {
    const ae::DriveLog log = ae::read_drive_log(p, fs::path(p).stem().string());
    auto ev = ae::extract_events(log);
    events.insert(events.end(), ev.begin(), ev.end());
  }
  if (events.empty()) {
    throw ae::DataError("no events extracted from " + logs_dir);
  }

  const ae::FittedThreatModel fitted =
      ae::build_threat_model(events, scenario, families);
  ordered_json model_json = ae::threat_model_to_json(fitted.model);
  ordered_json meta;
  meta["event_count"] = fitted.event_count;
  for (const auto& [name, count] : fitted.samples_per_variable) {
    meta["samples_per_variable"][name] = count;
  }
  model_json["meta"] = meta;
  write_file(out_path, model_json.dump(2) + "\n");

  std::printf("fitted %s model from %zu events (%zu logs)\n",
              ae::scenario_name(scenario).c_str(), fitted.event_count,
              paths.size());
  for (const auto& [name, count] : fitted.samples_per_variable) {
    std::printf("  %s: %zu samples\n", name.c_str(), count);
  }
  std::printf("wrote %s\n", out_path.c_str());
  return kExitOk;
}

// ---- run ----------------------------------------------------------------

struct PolicyBundle {
  std::shared_ptr<ae::EgoPolicy> policy;
  bool external = false;
};

PolicyBundle build_policy(const ordered_json& pj) {
  const std::string kind = pj.at("kind").get<std::string>();
  const ordered_json params = pj.value("params", ordered_json::object());
  const auto idm_from = [&](const ordered_json& p) {
    ae::IdmParams ip;
    ip.desired_speed = p.value("desired_speed", ip.desired_speed);
    ip.time_headway = p.value("time_headway", ip.time_headway);
    ip.min_gap = p.value("min_gap", ip.min_gap);
    ip.max_accel = p.value("max_accel", ip.max_accel);
    ip.comfortable_decel = p.value("comfortable_decel", ip.comfortable_decel);
    return ip;
  };
  if (kind == "idm") {
    return {ae::idm_policy(idm_from(params)), false};
  }
  if (kind == "idm_aeb") {
    auto base = ae::idm_policy(idm_from(params));
    return {ae::aeb_overlay(base, params.value("trigger_ttc", 4.0),
                            params.value("brake", 8.0)),
            false};
  }
  if (kind == "plugin") {
    if (!params.contains("command") || !params.at("command").is_array() ||
        params.at("command").empty()) {
      throw ae::ConfigError(
          "plugin policy needs params.command as a non-empty array");
    }
    std::vector<std::string> argv;
    for (const auto& a : params.at("command")) {
      argv.push_back(a.get<std::string>());
    }
    const std::string id = params.value("id", std::string("plugin:") + argv[0]);
    return {ae::plugin_policy(argv, id, params.value("timeout_s", 0.1)), true};
  }
  throw ae::ConfigError("unknown policy kind: " + kind +
                        " (expected idm | idm_aeb | plugin)");
}

ae::ThreatModel load_model(const ordered_json& cfg, const std::string& inline_key,
                           const std::string& file_key) {
  const bool has_inline = cfg.contains(inline_key);
  const bool has_file = cfg.contains(file_key);
  if (has_inline == has_file) {
    throw ae::ConfigError("config needs exactly one of " + inline_key + " / " +
                          file_key);
  }
  if (has_inline) return ae::threat_model_from_json(cfg.at(inline_key));
  return ae::threat_model_from_json(
      load_json_file(cfg.at(file_key).get<std::string>()));
}

ae::SimConfig sim_from_json(const ordered_json& cfg) {
  ae::SimConfig sim;
  if (!cfg.contains("sim")) return sim;
  const ordered_json& sj = cfg.at("sim");
  sim.dt = sj.value("dt", sim.dt);
  sim.horizon = sj.value("horizon", sim.horizon);
  sim.max_brake = sj.value("max_brake", sim.max_brake);
  sim.max_accel = sj.value("max_accel", sim.max_accel);
  if (sj.contains("initial_gap") && !sj.at("initial_gap").is_null()) {
    sim.initial_gap = sj.at("initial_gap").get<double>();
  }
  if (sj.contains("thresholds")) {
    const ordered_json& t = sj.at("thresholds");
    sim.thresholds.conflict_ttc = t.value("conflict_ttc", sim.thresholds.conflict_ttc);
    sim.thresholds.vehicle_length =
        t.value("vehicle_length", sim.thresholds.vehicle_length);
    sim.thresholds.crash_gap = t.value("crash_gap", sim.thresholds.crash_gap);
  }
  if (sj.contains("injury")) {
    const ordered_json& i = sj.at("injury");
    sim.injury.midpoint_delta_v =
        i.value("midpoint_delta_v", sim.injury.midpoint_delta_v);
    sim.injury.slope = i.value("slope", sim.injury.slope);
  }
  return sim;
}

ae::CEConfig ce_from_json(const ordered_json& cfg) {
  ae::CEConfig ce;
  if (!cfg.contains("ce")) return ce;
  const ordered_json& cj = cfg.at("ce");
  ce.iterations = cj.value("iterations", ce.iterations);
  ce.samples_per_iter = cj.value("samples_per_iter", ce.samples_per_iter);
  ce.elite_fraction = cj.value("elite_fraction", ce.elite_fraction);
  ce.smoothing = cj.value("smoothing", ce.smoothing);
  ce.sd_floor_fraction = cj.value("sd_floor_fraction", ce.sd_floor_fraction);
  if (cj.contains("tilt_bounds")) {
    for (const auto& [name, b] : cj.at("tilt_bounds").items()) {
      ce.tilt_bounds[name] = {b.at(0).get<double>(), b.at(1).get<double>()};
    }
  }
  return ce;
}

void dump_trajectories(const ae::EgoPolicy& policy, const ae::ThreatModel& natural,
                       const ae::ThreatModel& proposal, const ae::SimConfig& sim,
                       std::uint64_t seed, std::size_t count,
                       const std::string& dir) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < count; ++i) {
    ae::RngStream rng = ae::RngStream::derive(seed, 0, i);
    ae::EpisodeParams params =
        ae::sample_episode_params(natural, proposal, rng);
    std::string csv = "t,ego_pos,ego_v,ego_a,lead_pos,lead_v,lead_a,gap,ttc\n";
    char buf[384];
    ae::StepSink sink = [&](double t, const ae::VehicleState& ego,
                            const ae::VehicleState& lead, double gap,
                            double ttc) {
      const auto num = [](double v, char* b, std::size_t n) {
        if (std::isinf(v)) {
          std::snprintf(b, n, "%s", v > 0 ? "inf" : "-inf");
        } else {
          std::snprintf(b, n, "%.17g", v);
        }
      };
      char tb[32], cells[8][32];
      num(t, tb, sizeof(tb));
      num(ego.position, cells[0], 32);
      num(ego.speed, cells[1], 32);
      num(ego.accel, cells[2], 32);
      num(lead.position, cells[3], 32);
      num(lead.speed, cells[4], 32);
      num(lead.accel, cells[5], 32);
      num(gap, cells[6], 32);
      num(ttc, cells[7], 32);
      std::snprintf(buf, sizeof(buf), "%s,%s,%s,%s,%s,%s,%s,%s,%s\n", tb,
                    cells[0], cells[1], cells[2], cells[3], cells[4], cells[5],
                    cells[6], cells[7]);
      csv += buf;
    };
    try {
      ae::run_episode(policy, params, sim, i, &sink);
    } catch (const ae::SceneError&) {
      continue;  // invalid draw: no trajectory to write
    }
    std::snprintf(buf, sizeof(buf), "%s/ep_%06zu.csv", dir.c_str(), i);
    write_file(buf, csv);
  }
}

int cmd_run(const std::string& config_path, std::optional<int> workers_flag,
            bool dump_traj, const std::string& out_dir_flag) {
  const auto wall_start = std::chrono::steady_clock::now();
  const ordered_json cfg = load_json_file(config_path);

  // exactly one of n / stopping
  const bool has_n = cfg.contains("n");
  const bool has_stopping = cfg.contains("stopping");
  if (has_n == has_stopping) {
    throw ae::ConfigError("config needs exactly one of n / stopping");
  }

  const ae::ScenarioTag scenario =
      ae::scenario_from_name(cfg.at("scenario").get<std::string>());
  PolicyBundle pb = build_policy(cfg.at("policy"));
  ae::ThreatModel natural = load_model(cfg, "threat_model", "threat_model_file");
  if (natural.scenario != scenario) {
    throw ae::ConfigError("threat model scenario does not match config scenario");
  }
  const ae::SimConfig sim = sim_from_json(cfg);
  const std::string method = cfg.at("method").get<std::string>();
  if (method != "crude" && method != "is" && method != "is_ce") {
    throw ae::ConfigError("method must be crude | is | is_ce");
  }
  const std::uint64_t seed = cfg.value("master_seed", 0ULL);

  int workers = 1;
  if (const char* env = std::getenv("ACCEL_EVAL_WORKERS")) {
    workers = std::atoi(env);
  }
  if (workers_flag) workers = *workers_flag;
  if (workers < 1) throw ae::ConfigError("workers must be >= 1");
  if (pb.external && workers > 1) {
    std::fprintf(stderr,
                 "external plugin policy: forcing a single worker (the plugin "
                 "protocol is serial)\n");
    workers = 1;
  }

  std::string out_dir = cfg.value("out_dir", std::string("out"));
  if (const char* env = std::getenv("ACCEL_EVAL_OUT")) out_dir = env;
  if (!out_dir_flag.empty()) out_dir = out_dir_flag;

  ae::ExposureModel exposure = ae::default_exposure(scenario);
  if (cfg.contains("exposure")) {
    exposure.events_per_mile = cfg.at("exposure").value(
        "events_per_mile", exposure.events_per_mile);
    exposure.source_tag =
        cfg.at("exposure").value("source_tag", exposure.source_tag);
  }
  ae::HumanBaseline baseline;
  if (cfg.contains("baseline")) {
    const ordered_json& bj = cfg.at("baseline");
    baseline.police_reported_crash_rate = bj.value(
        "police_reported_crash_rate", baseline.police_reported_crash_rate);
    baseline.fatal_rate = bj.value("fatal_rate", baseline.fatal_rate);
    baseline.incident_data_rate =
        bj.value("incident_data_rate", baseline.incident_data_rate);
  }
  const double required_improvement = cfg.value("required_improvement", 0.9);
  const ae::Metric stop_metric =
      ae::metric_from_name(cfg.value("metric", std::string("crash")));

  // Proposal selection: crude samples the natural model itself.
  ae::ThreatModel proposal = natural;
  ordered_json proposal_json(nullptr);
  ae::Method method_tag = ae::Method::crude;
  std::string ce_note;
  if (method == "is") {
    proposal = load_model(cfg, "proposal", "proposal_file");
    ae::validate_pairing(natural, proposal);
    method_tag = ae::Method::importance;
  } else if (method == "is_ce") {
    const ae::CEConfig ce = ce_from_json(cfg);
    ae::CEDiagnostics diag;
    proposal =
        ae::ce_optimize(*pb.policy, natural, ce, sim, seed, workers, &diag);
    method_tag = ae::Method::importance;
    if (!diag.note.empty()) ce_note = "proposal search: " + diag.note;
  }
  proposal_json = ae::threat_model_to_json(proposal);

  ae::StoppingRule rule;
  if (has_stopping) {
    const ordered_json& sj = cfg.at("stopping");
    rule.confidence = sj.value("confidence", rule.confidence);
    rule.max_relative_half_width =
        sj.value("max_relative_half_width", rule.max_relative_half_width);
    rule.batch = sj.value("batch", rule.batch);
    rule.max_episodes = sj.value("max_episodes", rule.max_episodes);
  }

  ae::EstimatorConfig est_cfg;
  est_cfg.workers = workers;
  est_cfg.confidence =
      has_stopping ? rule.confidence : cfg.value("confidence", 0.80);

  ae::EstimationSession session(
      ae::make_sim_episode_fn(*pb.policy, sim, scenario), natural.vars,
      proposal.vars, method_tag, stop_metric, seed, est_cfg);

  bool non_converged = false;
  std::vector<ae::TraceRow> trace;
  std::uint64_t n_or_cap = 0;
  if (has_n) {
    const std::uint64_t n = cfg.at("n").get<std::uint64_t>();
    if (n == 0) throw ae::ConfigError("n must be > 0");
    n_or_cap = n;
    session.extend_to(n);
    session.summarize(stop_metric, 1000, &trace);
  } else {
    n_or_cap = rule.max_episodes;
    const ae::ConvergenceOutcome conv = ae::run_until_converged(
        [&](std::size_t n) { return session.extend_to(n); }, rule);
    non_converged = !conv.converged;
    trace = conv.trace;
  }

  ae::ReportInputs inputs;
  inputs.meta.seed = seed;
  inputs.meta.scenario = scenario;
  inputs.meta.policy_id = pb.policy->policy_id();
  inputs.meta.method = method;
  inputs.meta.non_converged = non_converged;
  inputs.meta.run_id = ae::make_run_id(seed, ae::scenario_name(scenario),
                                       pb.policy->policy_id(), method, n_or_cap);
  for (const ae::Metric m :
       {ae::Metric::crash, ae::Metric::conflict, ae::Metric::injury}) {
    inputs.estimates.push_back(session.summarize(m));
  }
  inputs.exposure = exposure;
  inputs.baseline = baseline;
  const ae::Estimate& crash_est = inputs.estimates.front();
  inputs.acceleration_factor = ae::acceleration_factor(
      crash_est.crude_variance_estimate, ae::per_sample_variance(crash_est));
  inputs.required_improvement = required_improvement;
  inputs.episodes_drawn = session.records().size();
  inputs.convergence = trace;
  for (const ae::EpisodeRecord& r : session.records()) {
    if (r.outcome.valid) inputs.weights.push_back(r.weight);
  }
  inputs.proposal = proposal_json;
  if (pb.external) {
    inputs.notes =
        "external plugin policy: excluded from bit-determinism guarantees";
  }
  if (!ce_note.empty()) {
    inputs.notes += (inputs.notes.empty() ? "" : "; ") + ce_note;
  }
  inputs.meta.wall_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                    wall_start)
          .count();

  const ordered_json report = ae::build_report(inputs);
  fs::create_directories(out_dir);
  ae::write_report_files(out_dir, report);
  if (dump_traj) {
    dump_trajectories(*pb.policy, natural, proposal, sim, seed,
                      std::min<std::size_t>(100, session.records().size()),
                      out_dir + "/trajectories");
  }

  std::printf("%s", ae::render_summary_text(report).c_str());
  std::printf("report written to %s\n", out_dir.c_str());
  return non_converged ? kExitNonConverged : kExitOk;
}

// ---- compare ------------------------------------------------------------

ae::Estimate estimate_for_metric(const ordered_json& report,
                                 const std::string& metric) {
  for (const auto& e : report.at("estimates")) {
    if (e.at("metric").get<std::string>() == metric) {
      return ae::estimate_from_json(e);
    }
  }
  throw ae::ConfigError("report " + report.value("run_id", std::string()) +
                        " has no estimate for metric " + metric);
}

int cmd_compare(const std::string& path_a, const std::string& path_b,
                const std::string& metric, const std::string& out_path) {
  const ordered_json ra = load_json_file(path_a);
  const ordered_json rb = load_json_file(path_b);
  if (ra.at("scenario") != rb.at("scenario")) {
    throw ae::ConfigError("reports have different scenarios: " +
                          ra.at("scenario").get<std::string>() + " vs " +
                          rb.at("scenario").get<std::string>());
  }
  const ae::Estimate a = estimate_for_metric(ra, metric);
  const ae::Estimate b = estimate_for_metric(rb, metric);
  const ae::ComparisonResult cmp = ae::compare_estimates(a, b);

  ordered_json out;
  out["metric"] = metric;
  out["scenario"] = ra.at("scenario");
  out["a"] = {{"run_id", ra.at("run_id")},
              {"method", ra.at("method")},
              {"p_hat", ae::json_number(a.p_hat)},
              {"variance", ae::json_number(a.variance)},
              {"n", a.n}};
  out["b"] = {{"run_id", rb.at("run_id")},
              {"method", rb.at("method")},
              {"p_hat", ae::json_number(b.p_hat)},
              {"variance", ae::json_number(b.variance)},
              {"n", b.n}};
  out["z"] = ae::json_number(cmp.z);
  out["agree"] = cmp.agree;
  out["acceleration_factor_a_over_b"] =
      ae::json_number(cmp.acceleration_factor);
  write_file(out_path, out.dump(2) + "\n");

  std::printf("metric %s: a p=%.6g (n=%llu)  b p=%.6g (n=%llu)\n",
              metric.c_str(), a.p_hat, static_cast<unsigned long long>(a.n),
              b.p_hat, static_cast<unsigned long long>(b.n));
  std::printf("z = %.3f -> %s; acceleration factor a/b = %.4g\n", cmp.z,
              cmp.agree ? "agreement" : "DISAGREEMENT", cmp.acceleration_factor);
  std::printf("comparison written to %s\n", out_path.c_str());
  return cmp.agree ? kExitOk : kExitDisagreement;
}

// ---- report -------------------------------------------------------------

int cmd_report(const std::string& report_path, const std::string& out_dir) {
  const ordered_json report = load_json_file(report_path);
  fs::create_directories(out_dir);
  ae::write_report_files(out_dir, report);
  std::printf("%s", ae::render_summary_text(report).c_str());
  std::printf("re-rendered into %s\n", out_dir.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "accelerated safety evaluation: rare-event estimation for automated "
      "driving policies"};
  app.require_subcommand(1);

  // fit
  auto* fit = app.add_subcommand(
      "fit", "extract threat events from drive logs and fit a threat model");
  std::string logs_dir, scenario = "car_following", families, model_out =
      "model.json";
  fit->add_option("--logs", logs_dir, "directory of drive-log CSV files")
      ->required();
  fit->add_option("--scenario", scenario, "car_following | cut_in");
  fit->add_option("--families", families,
                  "per-variable families, e.g. decel=truncated_normal,...");
  fit->add_option("--out", model_out, "output threat-model JSON path");

  // run
  auto* run = app.add_subcommand("run", "execute a configured estimation run");
  std::string run_config;
  std::optional<int> workers;
  bool dump_traj = false;
  std::string out_dir_flag;
  run->add_option("--config", run_config, "run configuration JSON")->required();
  run->add_option("--workers", workers,
                  "worker threads (overrides ACCEL_EVAL_WORKERS)");
  run->add_flag("--dump-trajectories", dump_traj,
                "write per-episode trajectory CSVs (first 100 episodes)");
  run->add_option("--out-dir", out_dir_flag,
                  "output directory (overrides config and ACCEL_EVAL_OUT)");

  // compare
  auto* comp = app.add_subcommand("compare", "compare two report JSONs");
  std::string report_a, report_b, cmp_metric = "crash",
                                  cmp_out = "comparison.json";
  comp->add_option("--report-a", report_a, "first report JSON")->required();
  comp->add_option("--report-b", report_b, "second report JSON")->required();
  comp->add_option("--metric", cmp_metric, "metric to compare (default crash)");
  comp->add_option("--out", cmp_out, "comparison output JSON path");

  // report
  auto* rep = app.add_subcommand(
      "report", "re-render summary and plot CSVs from a report JSON");
  std::string report_in, rep_out_dir = ".";
  rep->add_option("--report", report_in, "existing report JSON")->required();
  rep->add_option("--out-dir", rep_out_dir, "directory for re-rendered files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (fit->parsed()) return cmd_fit(logs_dir, scenario, families, model_out);
    if (run->parsed())
      return cmd_run(run_config, workers, dump_traj, out_dir_flag);
    if (comp->parsed())
      return cmd_compare(report_a, report_b, cmp_metric, cmp_out);
    if (rep->parsed()) return cmd_report(report_in, rep_out_dir);
  } catch (const ae::PolicyFaultError& e) {
    std::fprintf(stderr, "policy fault [%s]: %s\n", e.policy_id().c_str(),
                 e.what());
    return kExitPolicyFault;
  } catch (const ae::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const ae::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const ae::IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return kExitData;
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const ae::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  }
  return kExitConfig;
}
