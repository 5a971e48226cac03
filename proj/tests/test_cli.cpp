// End-to-end checks of the command-line binary: flag parsing, exit codes,
// file outputs, and determinism. The binary path arrives via ACCEL_EVAL_BIN.
#include <catch2/catch_amalgamated.hpp>

#include <string>
#include <vector>

#include <json.hpp>

#include <accel_eval/ingest.hpp>

#include "cli_harness.hpp"

using cli_test::CliResult;
using cli_test::file_exists;
using cli_test::make_temp_dir;
using cli_test::read_file;
using cli_test::run_cli;
using cli_test::write_file;
using nlohmann::ordered_json;

namespace {

ordered_json tn(double mean, double sd, double lo, double hi) {
  return ordered_json{
      {"family", "truncated_normal"},
      {"params", {{"mean", mean}, {"sd", sd}, {"lo", lo}, {"hi", hi}}}};
}

// Aggressive braking mix so a few hundred episodes already contain crashes.
ordered_json car_following_model() {
  return ordered_json{{"scenario", "car_following"},
                      {"variables",
                       {{"lead_speed", tn(29.0, 4.0, 10.0, 36.0)},
                        {"decel", tn(6.8, 1.2, 1.0, 8.0)},
                        {"brake_duration", tn(4.5, 1.2, 0.5, 8.0)}}}};
}

ordered_json cut_in_model() {
  return ordered_json{{"scenario", "cut_in"},
                      {"variables",
                       {{"gap", tn(12.0, 3.0, 6.0, 20.0)},
                        {"closing_speed", tn(2.5, 0.8, 0.3, 4.0)},
                        {"lead_speed", tn(22.0, 3.0, 8.0, 38.0)}}}};
}

ordered_json base_run_config() {
  ordered_json cfg;
  cfg["scenario"] = "car_following";
  cfg["policy"] = {{"kind", "idm"}};
  cfg["threat_model"] = car_following_model();
  cfg["method"] = "crude";
  cfg["n"] = 300;
  cfg["master_seed"] = 7;
  return cfg;
}

std::string write_config(const std::string& dir, const ordered_json& cfg,
                         const std::string& name = "config.json") {
  const std::string path = dir + "/" + name;
  write_file(path, cfg.dump(2) + "\n");
  return path;
}

}  // namespace

TEST_CASE("cli help lists every subcommand and flag") {
  const CliResult top = run_cli({"--help"});
  CHECK(top.exit_code == 0);
  for (const char* sub : {"fit", "run", "compare", "report"}) {
    CHECK(top.output.find(sub) != std::string::npos);
  }

  const CliResult fit = run_cli({"fit", "--help"});
  CHECK(fit.exit_code == 0);
  for (const char* flag : {"--logs", "--scenario", "--families", "--out"}) {
    CHECK(fit.output.find(flag) != std::string::npos);
  }

  const CliResult run = run_cli({"run", "--help"});
  CHECK(run.exit_code == 0);
  for (const char* flag :
       {"--config", "--workers", "--dump-trajectories", "--out-dir"}) {
    CHECK(run.output.find(flag) != std::string::npos);
  }

  const CliResult cmp = run_cli({"compare", "--help"});
  CHECK(cmp.exit_code == 0);
  for (const char* flag : {"--report-a", "--report-b", "--metric", "--out"}) {
    CHECK(cmp.output.find(flag) != std::string::npos);
  }

  const CliResult rep = run_cli({"report", "--help"});
  CHECK(rep.exit_code == 0);
  for (const char* flag : {"--report", "--out-dir"}) {
    CHECK(rep.output.find(flag) != std::string::npos);
  }
}

TEST_CASE("cli rejects bad invocations with exit 2") {
  CHECK(run_cli({}).exit_code == 2);                       // missing subcommand
  CHECK(run_cli({"frobnicate"}).exit_code == 2);           // unknown subcommand
  CHECK(run_cli({"run", "--no-such-flag"}).exit_code == 2);
  CHECK(run_cli({"run"}).exit_code == 2);                  // --config required
}

TEST_CASE("cli run distinguishes config errors from data errors") {
  const std::string dir = make_temp_dir("cli_err");

  // unreadable config file is a data problem
  CHECK(run_cli({"run", "--config", dir + "/missing.json"}).exit_code == 3);

  // malformed JSON is a data problem
  write_file(dir + "/broken.json", "{ nope\n");
  CHECK(run_cli({"run", "--config", dir + "/broken.json"}).exit_code == 3);

  // n and stopping cannot both be present
  ordered_json both = base_run_config();
  both["stopping"] = {{"max_episodes", 1000}};
  const CliResult r_both =
      run_cli({"run", "--config", write_config(dir, both, "both.json")});
  CHECK(r_both.exit_code == 2);
  CHECK(r_both.output.find("exactly one") != std::string::npos);

  // unknown policy kind
  ordered_json badpol = base_run_config();
  badpol["policy"] = {{"kind", "acc"}};
  CHECK(run_cli({"run", "--config", write_config(dir, badpol, "pol.json")})
            .exit_code == 2);

  // unknown method
  ordered_json badmethod = base_run_config();
  badmethod["method"] = "mcmc";
  CHECK(run_cli({"run", "--config", write_config(dir, badmethod, "m.json")})
            .exit_code == 2);

  // threat model scenario must match the config scenario
  ordered_json mismatch = base_run_config();
  mismatch["scenario"] = "cut_in";
  const CliResult r_mm =
      run_cli({"run", "--config", write_config(dir, mismatch, "mm.json")});
  CHECK(r_mm.exit_code == 2);
  CHECK(r_mm.output.find("does not match") != std::string::npos);

  // zero workers
  CHECK(run_cli({"run", "--config", write_config(dir, base_run_config()),
                 "--workers", "0"})
            .exit_code == 2);
}

TEST_CASE("cli run produces a complete report directory") {
  const std::string dir = make_temp_dir("cli_run");
  const std::string cfg_path = write_config(dir, base_run_config());
  const CliResult r = run_cli({"run", "--config", cfg_path, "--out-dir",
                               dir + "/out", "--dump-trajectories"});
  INFO(r.output);
  REQUIRE(r.exit_code == 0);

  for (const char* f :
       {"report.json", "summary.txt", "convergence.csv", "weights.csv"}) {
    CHECK(file_exists(dir + "/out/" + f));
  }

  const ordered_json report = ordered_json::parse(read_file(dir + "/out/report.json"));
  CHECK(report.at("scenario") == "car_following");
  CHECK(report.at("method") == "crude");
  CHECK(report.at("run_id").get<std::string>().size() == 16);
  CHECK(report.at("episodes_drawn").get<std::size_t>() == 300);
  CHECK(report.at("non_converged") == false);
  REQUIRE(report.at("estimates").size() == 3);
  CHECK(report.at("estimates")[0].at("metric") == "crash");
  CHECK(report.at("estimates")[1].at("metric") == "conflict");
  CHECK(report.at("estimates")[2].at("metric") == "injury");
  // last key is the timing block so everything before it is reproducible
  CHECK(report.rbegin().key() == "timing");

  // summary echoes the run id
  const std::string summary = read_file(dir + "/out/summary.txt");
  CHECK(summary.find(report.at("run_id").get<std::string>()) !=
        std::string::npos);

  // trajectory dump: header plus at least the first episode file
  REQUIRE(file_exists(dir + "/out/trajectories/ep_000000.csv"));
  const std::string traj = read_file(dir + "/out/trajectories/ep_000000.csv");
  CHECK(traj.rfind("t,ego_pos,ego_v,ego_a,lead_pos,lead_v,lead_a,gap,ttc\n", 0) ==
        0);
}

TEST_CASE("cli runs are reproducible apart from timing") {
  const std::string dir = make_temp_dir("cli_repro");
  const std::string cfg_path = write_config(dir, base_run_config());
  REQUIRE(run_cli({"run", "--config", cfg_path, "--out-dir", dir + "/a"})
              .exit_code == 0);
  REQUIRE(run_cli({"run", "--config", cfg_path, "--out-dir", dir + "/b"})
              .exit_code == 0);

  ordered_json ra = ordered_json::parse(read_file(dir + "/a/report.json"));
  ordered_json rb = ordered_json::parse(read_file(dir + "/b/report.json"));
  CHECK(ra != rb);  // wall-clock timing differs
  ra.erase("timing");
  rb.erase("timing");
  CHECK(ra.dump(2) == rb.dump(2));
}

TEST_CASE("cli fit turns drive logs into a loadable threat model") {
  const std::string dir = make_temp_dir("cli_fit");
  const std::string logs = dir + "/logs";
  cli_test::make_dir(logs);

  accel_eval::GeneratorProfile profile;
  profile.duration_s = 2500.0;
  profile.brake_rate_per_s = 1.0 / 30.0;
  for (int i = 0; i < 2; ++i) {
    const auto gen = accel_eval::generate_synthetic_log(
        profile, 500 + static_cast<std::uint64_t>(i),
        "log_" + std::to_string(i));
    accel_eval::write_drive_log(logs + "/log_" + std::to_string(i) + ".csv",
                                gen.log);
  }

  const std::string model_path = dir + "/model.json";
  const CliResult r = run_cli({"fit", "--logs", logs, "--scenario",
                               "car_following", "--out", model_path});
  INFO(r.output);
  REQUIRE(r.exit_code == 0);
  CHECK(r.output.find("fitted car_following model") != std::string::npos);

  const ordered_json mj = ordered_json::parse(read_file(model_path));
  CHECK(mj.at("scenario") == "car_following");
  CHECK(mj.at("meta").at("event_count").get<std::size_t>() >= 10);
  // the written model loads back through the library with meta ignored
  const accel_eval::ThreatModel model = accel_eval::threat_model_from_json(mj);
  CHECK(model.vars.names ==
        std::vector<std::string>{"lead_speed", "decel", "brake_duration"});
}

TEST_CASE("cli fit reports empty or misconfigured inputs") {
  const std::string dir = make_temp_dir("cli_fit_err");
  const std::string empty = dir + "/empty";
  cli_test::make_dir(empty);

  const CliResult none = run_cli({"fit", "--logs", empty});
  CHECK(none.exit_code == 3);
  CHECK(none.output.find("no events extracted") != std::string::npos);

  CHECK(run_cli({"fit", "--logs", dir + "/nodir"}).exit_code == 2);
  CHECK(run_cli({"fit", "--logs", empty, "--families", "decel=gamma"})
            .exit_code == 2);
  CHECK(run_cli({"fit", "--logs", empty, "--families", "decel"}).exit_code == 2);
  CHECK(run_cli({"fit", "--logs", empty, "--scenario", "highway"}).exit_code ==
        2);
}

TEST_CASE("cli compare agrees with itself and rejects mixed scenarios") {
  const std::string dir = make_temp_dir("cli_cmp");
  const std::string cfg_path = write_config(dir, base_run_config());
  REQUIRE(run_cli({"run", "--config", cfg_path, "--out-dir", dir + "/cf"})
              .exit_code == 0);

  const std::string cmp_out = dir + "/comparison.json";
  const CliResult same =
      run_cli({"compare", "--report-a", dir + "/cf/report.json", "--report-b",
               dir + "/cf/report.json", "--out", cmp_out});
  INFO(same.output);
  CHECK(same.exit_code == 0);
  const ordered_json cj = ordered_json::parse(read_file(cmp_out));
  CHECK(cj.at("z").get<double>() == 0.0);
  CHECK(cj.at("agree") == true);
  CHECK(cj.at("acceleration_factor_a_over_b").get<double>() == 1.0);
  CHECK(cj.at("a").at("run_id") == cj.at("b").at("run_id"));

  // a cut-in report cannot be compared against a car-following report
  ordered_json ci_cfg;
  ci_cfg["scenario"] = "cut_in";
  ci_cfg["policy"] = {{"kind", "idm"}};
  ci_cfg["threat_model"] = cut_in_model();
  ci_cfg["method"] = "crude";
  ci_cfg["n"] = 100;
  ci_cfg["master_seed"] = 9;
  const std::string ci_path = write_config(dir, ci_cfg, "ci.json");
  REQUIRE(run_cli({"run", "--config", ci_path, "--out-dir", dir + "/ci"})
              .exit_code == 0);
  const CliResult mixed =
      run_cli({"compare", "--report-a", dir + "/cf/report.json", "--report-b",
               dir + "/ci/report.json", "--out", dir + "/cmp2.json"});
  CHECK(mixed.exit_code == 2);

  // unknown metric name
  CHECK(run_cli({"compare", "--report-a", dir + "/cf/report.json", "--report-b",
                 dir + "/cf/report.json", "--metric", "bogus", "--out",
                 dir + "/cmp3.json"})
            .exit_code == 2);
}

TEST_CASE("cli report re-renders identical summary files") {
  const std::string dir = make_temp_dir("cli_rerender");
  const std::string cfg_path = write_config(dir, base_run_config());
  REQUIRE(run_cli({"run", "--config", cfg_path, "--out-dir", dir + "/orig"})
              .exit_code == 0);

  const CliResult r = run_cli({"report", "--report", dir + "/orig/report.json",
                               "--out-dir", dir + "/again"});
  CHECK(r.exit_code == 0);
  CHECK(read_file(dir + "/again/summary.txt") ==
        read_file(dir + "/orig/summary.txt"));
  CHECK(read_file(dir + "/again/convergence.csv") ==
        read_file(dir + "/orig/convergence.csv"));
  CHECK(read_file(dir + "/again/weights.csv") ==
        read_file(dir + "/orig/weights.csv"));
}

TEST_CASE("cli run signals an unmet stopping rule with exit 4") {
  const std::string dir = make_temp_dir("cli_stop");
  ordered_json cfg = base_run_config();
  cfg.erase("n");
  cfg["stopping"] = {{"confidence", 0.9},
                     {"max_relative_half_width", 0.001},
                     {"batch", 100},
                     {"max_episodes", 300}};
  const CliResult r = run_cli(
      {"run", "--config", write_config(dir, cfg), "--out-dir", dir + "/out"});
  INFO(r.output);
  CHECK(r.exit_code == 4);
  // the report is still written for inspection
  REQUIRE(file_exists(dir + "/out/report.json"));
  const ordered_json report =
      ordered_json::parse(read_file(dir + "/out/report.json"));
  CHECK(report.at("non_converged") == true);
  CHECK(report.at("episodes_drawn").get<std::size_t>() == 300);
}
