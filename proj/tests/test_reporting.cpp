#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <vector>

#include <accel_eval/reporting.hpp>

using namespace accel_eval;

namespace {

bool same_bits(double a, double b) {
  return std::memcmp(&a, &b, sizeof(double)) == 0;
}

Estimate sample_estimate() {
  Estimate e;
  e.metric = Metric::crash;
  e.method = Method::importance;
  e.p_hat = 1.0168056388734830e-6;
  e.variance = 2.5e-15;
  e.ci_lo = 9.5e-7;
  e.ci_hi = 1.08e-6;
  e.confidence = 0.80;
  e.n = 20000;
  e.ess = 512.25;
  e.invalid_count = 3;
  e.seed = 42;
  e.crude_variance_estimate = 1.0e-6;
  return e;
}

ReportInputs sample_inputs() {
  ReportInputs in;
  in.meta.run_id = "abc123";
  in.meta.seed = 42;
  in.meta.scenario = ScenarioTag::car_following;
  in.meta.policy_id = "idm(test)";
  in.meta.method = "is";
  in.meta.wall_s = 1.25;
  in.estimates = {sample_estimate()};
  Estimate conflict = sample_estimate();
  conflict.metric = Metric::conflict;
  conflict.p_hat = 4.0e-4;
  Estimate injury = sample_estimate();
  injury.metric = Metric::injury;
  injury.p_hat = 2.0e-7;
  in.estimates.push_back(conflict);
  in.estimates.push_back(injury);
  in.exposure = ExposureModel{0.5, "test-exposure"};
  in.acceleration_factor = 321.5;
  in.episodes_drawn = 20003;
  in.convergence = {{1000, 1.1e-6, 9e-7, 1.3e-6}, {2000, 1.0e-6, 9.2e-7, 1.1e-6}};
  in.weights = {0.001, 1.0, 10.0, 12.0};
  in.proposal = ordered_json(nullptr);
  return in;
}

}  // namespace

TEST_CASE("per-mile scaling is exact multiplication") {
  Estimate e = sample_estimate();
  const ExposureModel x{0.5, "t"};
  const PerMileRate r = per_event_to_per_mile(e, x);
  CHECK(same_bits(r.rate, e.p_hat * 0.5));
  CHECK(same_bits(r.ci_lo, e.ci_lo * 0.5));
  CHECK(same_bits(r.ci_hi, e.ci_hi * 0.5));
  CHECK(same_bits(r.miles_per_event, 1.0 / r.rate));

  // the worked example: 1e-4 per event at 0.5 events/mile
  Estimate simple;
  simple.p_hat = 1e-4;
  const PerMileRate s = per_event_to_per_mile(simple, x);
  CHECK(s.rate == 5e-5);
  CHECK(s.miles_per_event == 20000.0);

  // zero estimate: infinite miles between events
  Estimate zero;
  const PerMileRate z = per_event_to_per_mile(zero, x);
  CHECK(std::isinf(z.miles_per_event));
}

TEST_CASE("baseline mapping per metric") {
  HumanBaseline b;
  CHECK(baseline_for_metric(b, Metric::crash) == b.police_reported_crash_rate);
  CHECK(baseline_for_metric(b, Metric::injury) == b.fatal_rate);
  CHECK(baseline_for_metric(b, Metric::conflict) == b.incident_data_rate);
  CHECK(b.police_reported_crash_rate == Catch::Approx(1.0 / 530000.0));
  CHECK(b.fatal_rate == 1e-8);
  CHECK(b.incident_data_rate == 1e-5);

  HumanBaseline bad = b;
  bad.fatal_rate = b.police_reported_crash_rate * 2.0;
  CHECK_THROWS_AS(validate(bad), ConfigError);
}

TEST_CASE("verdict boundary is inclusive at the threshold") {
  const double baseline = 1e-5;
  const double threshold = (1.0 - 0.9) * baseline;
  PerMileRate at;
  at.rate = threshold * 0.5;
  at.ci_hi = threshold;  // exactly at the allowed residual rate
  CHECK(safety_comparison(at, baseline, 0.9).verdict == kVerdictSafer);

  PerMileRate over = at;
  over.ci_hi = std::nextafter(threshold, 1.0);
  CHECK(safety_comparison(over, baseline, 0.9).verdict ==
        kVerdictNotEstablished);

  // point improvement is reported either way
  const SafetyComparison c = safety_comparison(at, baseline, 0.9);
  CHECK(c.point_improvement == Catch::Approx(1.0 - at.rate / baseline));
  CHECK(c.threshold_per_mile == Catch::Approx(threshold));
}

TEST_CASE("required naturalistic miles reproduces the fatal-rate scale") {
  // z one-sided at 0.80, squared, over (0.1^2 * 1e-8)
  const double z = normal_quantile(0.80);
  const double expect = z * z / (0.01 * 1e-8);
  const double got = required_naturalistic_miles(1e-8, 0.9, 0.80);
  CHECK(got == Catch::Approx(expect).epsilon(1e-12));
  CHECK(got == Catch::Approx(7.083e9).epsilon(1e-3));
  // within one order of magnitude of 11 billion
  CHECK(got > 1.1e9);
  CHECK(got < 1.1e11);
}

TEST_CASE("required miles grows with stricter requirements") {
  const double base = required_naturalistic_miles(1e-8, 0.9, 0.80);
  CHECK(required_naturalistic_miles(1e-8, 0.95, 0.80) > base);
  CHECK(required_naturalistic_miles(1e-8, 0.9, 0.95) > base);
  CHECK(required_naturalistic_miles(1e-9, 0.9, 0.80) > base);
  CHECK(required_naturalistic_miles(1e-7, 0.9, 0.80) < base);
}

TEST_CASE("equivalent miles endpoints") {
  // 1000 episodes at 1 event/mile -> 1000 exposure miles
  const ExposureModel per_mile{1.0, "t"};
  CHECK(equivalent_miles(1000.0, per_mile, 300.0) == 300000.0);
  CHECK(equivalent_miles(1000.0, per_mile, 100000.0) == 100000000.0);
  // 0.2 events/mile -> each episode stands for 5 miles of driving
  const ExposureModel sparse{0.2, "t"};
  CHECK(equivalent_miles(1000.0, sparse, 1.0) == Catch::Approx(5000.0));
}

TEST_CASE("json numbers round-trip bit-exactly including non-finite") {
  const std::vector<double> values = {0.0,     -0.0,   0.1 + 0.2, 1e-308,
                                      6.25e-7, 1.0/3.0, 12345.6789};
  for (double v : values) {
    const ordered_json j = json_number(v);
    const std::string text = j.dump();
    const ordered_json back = ordered_json::parse(text);
    CHECK(same_bits(number_from_json(back, "t"), v));
  }
  CHECK(json_number(kInf).is_string());
  CHECK(number_from_json(json_number(kInf), "t") == kInf);
  CHECK(number_from_json(json_number(-kInf), "t") == -kInf);
  CHECK(std::isnan(number_from_json(json_number(std::nan("")), "t")));
}

TEST_CASE("estimate JSON round-trip preserves every field") {
  const Estimate e = sample_estimate();
  const Estimate back = estimate_from_json(estimate_to_json(e));
  CHECK(back.metric == e.metric);
  CHECK(back.method == e.method);
  CHECK(same_bits(back.p_hat, e.p_hat));
  CHECK(same_bits(back.variance, e.variance));
  CHECK(same_bits(back.ci_lo, e.ci_lo));
  CHECK(same_bits(back.ci_hi, e.ci_hi));
  CHECK(back.confidence == e.confidence);
  CHECK(back.n == e.n);
  CHECK(same_bits(back.ess, e.ess));
  CHECK(back.invalid_count == e.invalid_count);
  CHECK(back.seed == e.seed);
  CHECK(same_bits(back.crude_variance_estimate, e.crude_variance_estimate));
}

TEST_CASE("weight histogram uses half-decade bins") {
  // log10: -3, 0, 1, 1.079 -> contiguous edges from -3.0 up to 1.5
  const std::vector<double> ws = {0.001, 1.0, 10.0, 12.0};
  const auto bins = weight_histogram(ws);
  REQUIRE(bins.size() == 9);  // [-3,-2.5) ... [1.0,1.5), empty bins included
  CHECK(bins[0][0] == Catch::Approx(-3.0));
  CHECK(bins[0][1] == Catch::Approx(-2.5));
  CHECK(bins[0][2] == 1.0);
  CHECK(bins[6][0] == Catch::Approx(0.0));
  CHECK(bins[6][2] == 1.0);
  CHECK(bins[7][2] == 0.0);
  CHECK(bins[8][0] == Catch::Approx(1.0));
  CHECK(bins[8][2] == 2.0);
  double total = 0.0;
  for (const auto& b : bins) total += b[2];
  CHECK(total == 4.0);

  // zero and negative weights are not binned
  const auto none = weight_histogram(std::vector<double>{0.0, 0.0});
  CHECK(none.empty());
}

TEST_CASE("report JSON carries the documented top-level shape") {
  const ordered_json r = build_report(sample_inputs());
  for (const char* key :
       {"run_id", "seed", "scenario", "policy_id", "method", "estimates",
        "exposure", "baseline", "acceleration_factor", "equivalent_miles",
        "verdict", "non_converged", "convergence", "weights_hist", "timing"}) {
    INFO(key);
    CHECK(r.contains(key));
  }
  CHECK(r.at("run_id") == "abc123");
  CHECK(r.at("scenario") == "car_following");
  CHECK(r.at("method") == "is");
  CHECK(r.at("estimates").size() == 3);
  // the run-level verdict is the crash metric's
  CHECK(r.at("verdict") == r.at("estimates")[0].at("verdict"));
  // timing sits at the end so a textual diff minus the last block is stable
  CHECK(r.items().begin() != r.items().end());
  std::string last_key;
  for (const auto& [k, v] : r.items()) last_key = k;
  CHECK(last_key == "timing");

  // per-estimate enrichment
  const auto& crash = r.at("estimates")[0];
  for (const char* key :
       {"per_mile_rate", "per_mile_ci", "miles_per_event", "baseline_per_mile",
        "point_improvement", "verdict", "required_naturalistic_miles"}) {
    INFO(key);
    CHECK(crash.contains(key));
  }
}

TEST_CASE("report JSON round-trips through text unchanged") {
  const ordered_json r = build_report(sample_inputs());
  const std::string text = r.dump(2);
  const ordered_json back = ordered_json::parse(text);
  CHECK(back == r);
  CHECK(back.dump(2) == text);
}

TEST_CASE("stripping the timing block leaves a deterministic document") {
  ReportInputs a = sample_inputs();
  ReportInputs b = sample_inputs();
  b.meta.wall_s = 99.75;  // only the wall clock differs
  ordered_json ra = build_report(a);
  ordered_json rb = build_report(b);
  CHECK(ra != rb);
  ra.erase("timing");
  rb.erase("timing");
  CHECK(ra.dump(2) == rb.dump(2));
}

TEST_CASE("csv renderers match the documented headers") {
  const ordered_json r = build_report(sample_inputs());
  const std::string conv = render_convergence_csv(r);
  CHECK(conv.rfind("n,p_hat,ci_lo,ci_hi\n", 0) == 0);
  CHECK(conv.find("1000,") != std::string::npos);
  const std::string wcsv = render_weights_csv(r);
  CHECK(wcsv.rfind("log10_bin_lo,log10_bin_hi,count\n", 0) == 0);
  const std::string summary = render_summary_text(r);
  CHECK(summary.find("abc123") != std::string::npos);
  CHECK(summary.find("wall") == std::string::npos);  // summary is timing-free
}

TEST_CASE("run ids are stable and input-sensitive") {
  const std::string a = make_run_id(1, "car_following", "idm", "crude", 1000);
  CHECK(a == make_run_id(1, "car_following", "idm", "crude", 1000));
  CHECK(a.size() == 16);
  CHECK(a != make_run_id(2, "car_following", "idm", "crude", 1000));
  CHECK(a != make_run_id(1, "cut_in", "idm", "crude", 1000));
  CHECK(a != make_run_id(1, "car_following", "idm", "is", 1000));
  CHECK(a != make_run_id(1, "car_following", "idm", "crude", 2000));
}

TEST_CASE("compare_estimates z-score and agreement") {
  Estimate a = sample_estimate();
  Estimate b = sample_estimate();
  // identical estimates agree at z = 0 and factor 1
  const ComparisonResult same = compare_estimates(a, b);
  CHECK(same.z == 0.0);
  CHECK(same.agree);
  CHECK(same.acceleration_factor == Catch::Approx(1.0));

  // three-sigma boundary: diff exactly 3 * combined SE still agrees;
  // dyadic values keep z exactly -3.0 through the float arithmetic
  // (z is signed, a minus b over the combined SE)
  a.p_hat = 0.25;
  a.variance = 0.0;
  b.variance = std::pow(2.0, -20);  // combined SE is exactly 2^-10
  b.p_hat = 0.25 + 3.0 * std::pow(2.0, -10);
  CHECK(compare_estimates(a, b).z == -3.0);
  CHECK(compare_estimates(a, b).agree);
  b.p_hat = 0.25 + 3.1 * std::pow(2.0, -10);
  CHECK_FALSE(compare_estimates(a, b).agree);

  // degenerate: zero variance with a real difference
  Estimate c = a, d = a;
  c.variance = 0.0;
  d.variance = 0.0;
  d.p_hat = a.p_hat * 2.0;
  const ComparisonResult degen = compare_estimates(c, d);
  CHECK(std::isinf(degen.z));
  CHECK_FALSE(degen.agree);
}

TEST_CASE("exposure and baseline validation") {
  CHECK_THROWS_AS(validate(ExposureModel{0.0, "t"}), ConfigError);
  CHECK_THROWS_AS(validate(ExposureModel{-1.0, "t"}), ConfigError);
  CHECK_NOTHROW(validate(ExposureModel{0.2, "t"}));
  CHECK(default_exposure(ScenarioTag::car_following).events_per_mile == 1.0);
  CHECK(default_exposure(ScenarioTag::cut_in).events_per_mile == 0.2);
}
