// Naturalistic-data pipeline at synthetic scale: generate drive logs with a
// known ground truth, distill them into candidate threat events, and fit a
// threat model from the extracted events.
//
// Log CSV format: header `t,lead_speed,gap`, uniform time step (tolerance
// 1e-9 s), speeds >= 0, gaps > 0. Parse errors carry 1-based line numbers.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "distributions.hpp"
#include "errors.hpp"
#include "rng.hpp"
#include "threat_model.hpp"

namespace accel_eval {

struct LogSample {
  double t = 0.0;
  double lead_speed = 0.0;
  double gap = 0.0;
};

struct DriveLog {
  double dt = 0.1;
  std::vector<LogSample> series;
  std::string log_id;
  std::string source_note;
};

inline void validate(const DriveLog& log) {
  if (!(log.dt > 0.0)) throw DataError("drive log: dt must be > 0");
  for (std::size_t i = 0; i < log.series.size(); ++i) {
    const LogSample& s = log.series[i];
    if (!(s.lead_speed >= 0.0)) {
      throw DataError("drive log " + log.log_id + ": negative speed at sample " +
                      std::to_string(i));
    }
    if (!(s.gap > 0.0)) {
      throw DataError("drive log " + log.log_id + ": non-positive gap at sample " +
                      std::to_string(i));
    }
    if (i > 0) {
      const double step = s.t - log.series[i - 1].t;
      if (!(step > 0.0) || std::abs(step - log.dt) > 1e-9) {
        throw DataError("drive log " + log.log_id +
                        ": non-uniform time step at sample " + std::to_string(i));
      }
    }
  }
}

struct BrakeEvent {
  double v0 = 0.0;   // lead speed at onset, m/s
  double d = 0.0;    // mean deceleration over the event, m/s^2
  double tau = 0.0;  // duration, s
};

struct CutInEvent {
  double gap = 0.0;         // gap right after the lane change, m
  double closing = 0.0;     // closing speed over the first second, m/s
  double lead_speed = 0.0;  // cutting-in vehicle's speed, m/s
};

struct ExtractedEvent {
  std::variant<BrakeEvent, CutInEvent> payload;
  std::string log_id;
  double t_start = 0.0;
};

inline bool is_brake(const ExtractedEvent& e) {
  return std::holds_alternative<BrakeEvent>(e.payload);
}

// ---- Synthetic generation ----------------------------------------------

struct GeneratorProfile {
  double duration_s = 3600.0;
  double dt = 0.1;
  DistributionSpec base_speed = TruncatedNormal{25.0, 3.0, 15.0, 38.0};
  double brake_rate_per_s = 0.0;  // Poisson arrival rate
  DistributionSpec brake_decel = TruncatedNormal{3.0, 0.7, 2.2, 6.0};
  DistributionSpec brake_duration = TruncatedNormal{1.5, 0.4, 0.6, 3.0};
  double cut_in_rate_per_s = 0.0;
  DistributionSpec cut_in_gap = TruncatedNormal{12.0, 3.0, 6.0, 20.0};
  DistributionSpec cut_in_closing = TruncatedNormal{2.5, 0.8, 0.3, 4.0};
  DistributionSpec cut_in_lead_speed = TruncatedNormal{22.0, 3.0, 8.0, 38.0};
};

inline void validate(const GeneratorProfile& p) {
  if (!(p.duration_s > 0.0) || !(p.dt > 0.0)) {
    throw ConfigError("generator profile: duration and dt must be > 0");
  }
  if (p.brake_rate_per_s < 0.0 || p.cut_in_rate_per_s < 0.0) {
    throw ConfigError("generator profile: event rates must be >= 0");
  }
  for (const DistributionSpec* d :
       {&p.base_speed, &p.brake_decel, &p.brake_duration, &p.cut_in_gap,
        &p.cut_in_closing, &p.cut_in_lead_speed}) {
    validate(*d);
  }
}

struct GenerationResult {
  DriveLog log;
  std::vector<ExtractedEvent> ground_truth;
};

namespace detail {

// Cruise gap held between events; generous so embedded cut-in gaps always
// read as a sharp drop.
inline double cruise_gap(double speed) { return 2.0 * speed + 15.0; }

constexpr double kRecoverAccel = 1.5;   // m/s^2, below the brake detector
constexpr double kGapRelaxRate = 2.0;   // m/s, below the cut-in jump detector

}  // namespace detail

// Piecewise-constant-speed log with embedded brake and cut-in maneuvers
// drawn from the profile. Arrivals are Poisson; an arrival landing inside
// an ongoing maneuver is deferred until the log is quiet again, so counts
// are preserved. The returned ground truth holds exactly what was embedded.
inline GenerationResult generate_synthetic_log(const GeneratorProfile& profile,
                                               std::uint64_t seed,
                                               const std::string& log_id) {
  validate(profile);
  RngStream arrivals = RngStream::derive(seed, 11, 0);
  RngStream draws = RngStream::derive(seed, 12, 0);

  const double total_rate = profile.brake_rate_per_s + profile.cut_in_rate_per_s;
  struct Arrival {
    double t;
    bool brake;
  };
  std::vector<Arrival> queue;
  if (total_rate > 0.0) {
    double t = 0.0;
    for (;;) {
      t += sample(Exponential{total_rate}, arrivals);
      if (t >= profile.duration_s) break;
      const bool brake =
          arrivals.next_u01() * total_rate < profile.brake_rate_per_s;
      queue.push_back({t, brake});
    }
  }

  GenerationResult out;
  out.log.dt = profile.dt;
  out.log.log_id = log_id;
  out.log.source_note = "synthetic seed=" + std::to_string(seed);

  const std::size_t steps =
      static_cast<std::size_t>(std::llround(profile.duration_s / profile.dt));
  out.log.series.reserve(steps);

  enum class Phase { cruise, braking, speed_recover, cutting, gap_recover };
  Phase phase = Phase::cruise;
  double base_speed = sample(profile.base_speed, draws);
  double speed = base_speed;
  double gap = detail::cruise_gap(base_speed);
  double phase_end = 0.0;
  double brake_decel = 0.0;
  std::size_t next_arrival = 0;

  for (std::size_t i = 0; i < steps; ++i) {
    const double t = static_cast<double>(i) * profile.dt;
    out.log.series.push_back({t, speed, gap});

    // Maneuvers start only from cruise; due arrivals wait for quiet.
    if (phase == Phase::cruise && next_arrival < queue.size() &&
        queue[next_arrival].t <= t) {
      const Arrival a = queue[next_arrival++];
      if (a.brake) {
        const double d = sample(profile.brake_decel, draws);
        double tau = sample(profile.brake_duration, draws);
        // Keep the lead moving: cap the event so speed never reaches zero.
        if (d * tau > 0.9 * speed) tau = 0.9 * speed / d;
        if (t + tau < profile.duration_s) {
          out.ground_truth.push_back(
              {BrakeEvent{speed, d, tau}, log_id, t});
          phase = Phase::braking;
          brake_decel = d;
          phase_end = t + tau;
        }
      } else {
        double r = sample(profile.cut_in_gap, draws);
        double closing = sample(profile.cut_in_closing, draws);
        const double vl = sample(profile.cut_in_lead_speed, draws);
        r = std::min(r, gap - 6.0);       // must read as a sharp drop
        if (r > 1.0 && r - closing > 0.5 && t + 1.0 < profile.duration_s) {
          out.ground_truth.push_back(
              {CutInEvent{r, closing, vl}, log_id, t + profile.dt});
          phase = Phase::cutting;
          phase_end = t + 1.0 + profile.dt;
          gap = r + closing * profile.dt;  // next sample lands exactly on r
          speed = vl;
          brake_decel = closing;           // reused as the gap-closing rate
        }
      }
    }

    switch (phase) {
      case Phase::cruise:
        break;
      case Phase::braking:
        speed = std::max(0.0, speed - brake_decel * profile.dt);
        gap = std::max(1.0, gap - 0.5 * brake_decel * profile.dt);
        if (t + profile.dt >= phase_end - 1e-9) {
          phase = Phase::speed_recover;
          base_speed = sample(profile.base_speed, draws);
        }
        break;
      case Phase::speed_recover: {
        const double step = detail::kRecoverAccel * profile.dt;
        if (std::abs(base_speed - speed) <= step) {
          speed = base_speed;
          phase = Phase::gap_recover;
        } else {
          speed += speed < base_speed ? step : -step;
        }
        gap = std::max(1.0, gap);
        break;
      }
      case Phase::cutting:
        gap = std::max(0.5, gap - brake_decel * profile.dt);
        if (t + profile.dt >= phase_end - 1e-9) {
          phase = Phase::speed_recover;
          base_speed = sample(profile.base_speed, draws);
        }
        break;
      case Phase::gap_recover: {
        const double target = detail::cruise_gap(base_speed);
        const double step = detail::kGapRelaxRate * profile.dt;
        if (std::abs(target - gap) <= step) {
          gap = target;
          phase = Phase::cruise;
        } else {
          gap += gap < target ? step : -step;
        }
        break;
      }
    }
  }
  validate(out.log);
  return out;
}

// ---- Extraction ---------------------------------------------------------

struct ExtractionCriteria {
  double min_decel = 2.0;      // m/s^2
  double min_duration_s = 0.5;
  double gap_jump_m = 5.0;     // cut-in: gap drop within one step
};

inline void validate(const ExtractionCriteria& c) {
  if (!(c.min_decel > 0.0) || !(c.min_duration_s > 0.0) ||
      !(c.gap_jump_m > 0.0)) {
    throw ConfigError("extraction criteria must all be > 0");
  }
}

// Brake events: maximal runs where per-step deceleration stays at or above
// the threshold for at least the minimum duration; d is the mean decel over
// the run. Cut-ins: a gap drop of at least the jump threshold within one
// step; closing speed is measured over the following second.
inline std::vector<ExtractedEvent> extract_events(
    const DriveLog& log, const ExtractionCriteria& criteria = {}) {
  validate(log);
  validate(criteria);
  std::vector<ExtractedEvent> events;
  const auto& s = log.series;
  if (s.size() < 2) return events;

  std::size_t run_start = 0;
  bool in_run = false;
  const auto close_run = [&](std::size_t run_end) {
    // run covers decel steps [run_start, run_end): speed falls from
    // series[run_start] to series[run_end]
    const double tau = static_cast<double>(run_end - run_start) * log.dt;
    if (tau + 1e-12 >= criteria.min_duration_s) {
      const double v0 = s[run_start].lead_speed;
      const double d = (v0 - s[run_end].lead_speed) / tau;
      events.push_back({BrakeEvent{v0, d, tau}, log.log_id, s[run_start].t});
    }
  };
  for (std::size_t i = 0; i + 1 < s.size(); ++i) {
    const double decel = (s[i].lead_speed - s[i + 1].lead_speed) / log.dt;
    if (decel >= criteria.min_decel - 1e-12) {
      if (!in_run) {
        in_run = true;
        run_start = i;
      }
    } else if (in_run) {
      in_run = false;
      close_run(i);
    }
  }
  if (in_run) close_run(s.size() - 1);

  const std::size_t window = static_cast<std::size_t>(
      std::max(1.0, std::round(1.0 / log.dt)));
  for (std::size_t i = 0; i + 1 < s.size(); ++i) {
    if (s[i].gap - s[i + 1].gap >= criteria.gap_jump_m) {
      const std::size_t j0 = i + 1;
      const std::size_t j1 = std::min(j0 + window, s.size() - 1);
      double closing = 0.0;
      if (j1 > j0) {
        closing = (s[j0].gap - s[j1].gap) /
                  (static_cast<double>(j1 - j0) * log.dt);
      }
      events.push_back(
          {CutInEvent{s[j0].gap, closing, s[j0].lead_speed}, log.log_id,
           s[j0].t});
    }
  }

  std::sort(events.begin(), events.end(),
            [](const ExtractedEvent& a, const ExtractedEvent& b) {
              if (a.t_start != b.t_start) return a.t_start < b.t_start;
              return is_brake(a) && !is_brake(b);
            });
  return events;
}

// ---- Model fitting ------------------------------------------------------

struct FittedThreatModel {
  ThreatModel model;
  std::size_t event_count = 0;
  std::map<std::string, std::size_t> samples_per_variable;
};

inline constexpr std::size_t kMinEventsToFit = 10;

// Fits each schema variable of the scenario from the matching events with
// the requested family. Variables without an entry in `families` default to
// truncated_normal with data-driven bounds.
inline FittedThreatModel build_threat_model(
    const std::vector<ExtractedEvent>& events, ScenarioTag scenario,
    const std::map<std::string, Family>& families = {}) {
  const bool want_brake = scenario == ScenarioTag::car_following;
  std::vector<const ExtractedEvent*> matching;
  for (const auto& e : events) {
    if (is_brake(e) == want_brake) matching.push_back(&e);
  }
  if (matching.empty() && !events.empty()) {
    throw ConfigError("build_threat_model: no events match scenario '" +
                      scenario_name(scenario) +
                      "' (all extracted events are of the other kind)");
  }
  if (matching.size() < kMinEventsToFit) {
    throw DataError("build_threat_model: need at least " +
                    std::to_string(kMinEventsToFit) + " events, got " +
                    std::to_string(matching.size()));
  }

  const std::vector<std::string> schema = scenario_schema(scenario);
  FittedThreatModel out;
  out.model.scenario = scenario;
  out.event_count = matching.size();
  for (std::size_t v = 0; v < schema.size(); ++v) {
    std::vector<double> xs;
    xs.reserve(matching.size());
    for (const ExtractedEvent* e : matching) {
      if (want_brake) {
        const auto& b = std::get<BrakeEvent>(e->payload);
        xs.push_back(v == 0 ? b.v0 : v == 1 ? b.d : b.tau);
      } else {
        const auto& c = std::get<CutInEvent>(e->payload);
        xs.push_back(v == 0 ? c.gap : v == 1 ? c.closing : c.lead_speed);
      }
    }
    Family fam = Family::truncated_normal;
    if (auto it = families.find(schema[v]); it != families.end()) {
      fam = it->second;
    }
    FitOptions opt;
    if (fam == Family::truncated_normal) {
      // Physical quantities are non-negative; the upper bound leaves slack
      // beyond the observed range.
      const double mx = *std::max_element(xs.begin(), xs.end());
      const double mn = *std::min_element(xs.begin(), xs.end());
      opt.lo = 0.0;
      opt.hi = mx + std::max(1.0, mx - mn);
    }
    out.model.vars.names.push_back(schema[v]);
    out.model.vars.dists.push_back(fit_mle(fam, xs, opt));
    out.samples_per_variable[schema[v]] = xs.size();
  }
  validate(out.model);
  return out;
}

// ---- CSV and JSON I/O ---------------------------------------------------

namespace detail {

inline double parse_double_field(const std::string& field, std::size_t line_no,
                                 const std::string& path) {
  const char* begin = field.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0' || !std::isfinite(v)) {
    throw DataError(path + ":" + std::to_string(line_no) +
                    ": malformed numeric field '" + field + "'");
  }
  return v;
}

}  // namespace detail

inline DriveLog parse_drive_log(std::istream& in, const std::string& path,
                                const std::string& log_id) {
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) {
    throw DataError(path + ":1: empty file, expected header t,lead_speed,gap");
  }
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "t,lead_speed,gap") {
    throw DataError(path + ":1: expected header 't,lead_speed,gap', got '" +
                    line + "'");
  }
  DriveLog log;
  log.log_id = log_id;
  log.source_note = path;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::array<std::string, 3> fields;
    std::size_t field = 0, start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == ',') {
        if (field >= 3) {
          throw DataError(path + ":" + std::to_string(line_no) +
                          ": expected 3 fields");
        }
        fields[field++] = line.substr(start, i - start);
        start = i + 1;
      }
    }
    if (field != 3) {
      throw DataError(path + ":" + std::to_string(line_no) +
                      ": expected 3 fields, got " + std::to_string(field));
    }
    LogSample s;
    s.t = detail::parse_double_field(fields[0], line_no, path);
    s.lead_speed = detail::parse_double_field(fields[1], line_no, path);
    s.gap = detail::parse_double_field(fields[2], line_no, path);
    log.series.push_back(s);
  }
  if (log.series.size() < 2) {
    throw DataError(path + ": need at least 2 samples to infer dt");
  }
  log.dt = log.series[1].t - log.series[0].t;
  try {
    validate(log);
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
  return log;
}

inline DriveLog read_drive_log(const std::string& path,
                               const std::string& log_id) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open drive log: " + path);
  return parse_drive_log(in, path, log_id);
}

inline void write_drive_log(const std::string& path, const DriveLog& log) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "t,lead_speed,gap\n";
  char buf[128];
  for (const LogSample& s : log.series) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g\n", s.t, s.lead_speed,
                  s.gap);
    out << buf;
  }
  out.flush();
  if (!out) throw IoError("write failed: " + path);
}

inline nlohmann::ordered_json events_to_json(
    const std::vector<ExtractedEvent>& events) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& e : events) {
    nlohmann::ordered_json j;
    if (is_brake(e)) {
      const auto& b = std::get<BrakeEvent>(e.payload);
      j["kind"] = "brake_event";
      j["params"] = {{"v0", b.v0}, {"d", b.d}, {"tau", b.tau}};
    } else {
      const auto& c = std::get<CutInEvent>(e.payload);
      j["kind"] = "cut_in_event";
      j["params"] = {{"gap", c.gap},
                     {"closing", c.closing},
                     {"lead_speed", c.lead_speed}};
    }
    j["source"] = {{"log_id", e.log_id}, {"t_start", e.t_start}};
    arr.push_back(std::move(j));
  }
  return arr;
}

}  // namespace accel_eval
