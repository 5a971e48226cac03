// Episode engine: turns one sampled parameter vector into an initial scene,
// steps both vehicles until the horizon or first contact, and reduces the
// trajectory to an outcome record.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <tuple>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "policy.hpp"
#include "rng.hpp"
#include "threat_model.hpp"
#include "vehicle.hpp"

namespace accel_eval {

struct SimConfig {
  double dt = 0.1;        // s
  double horizon = 30.0;  // s
  // Car-following start gap; when unset, the policy's equilibrium gap at the
  // sampled speed (measured by a settling run) is used.
  std::optional<double> initial_gap;
  double max_brake = 8.0;  // m/s^2, vehicle limit, applied in the engine
  double max_accel = 3.0;  // m/s^2
  SafetyThresholds thresholds;
  InjuryCurve injury;
};

inline void validate(const SimConfig& c) {
  if (!(c.dt > 0.0) || !(c.horizon > 0.0)) {
    throw ConfigError("SimConfig: dt and horizon must be > 0");
  }
  if (c.horizon / c.dt > 2e6) {
    throw ConfigError("SimConfig: step count too large");
  }
  if (!(c.max_brake > 0.0) || !(c.max_accel > 0.0)) {
    throw ConfigError("SimConfig: max_brake and max_accel must be > 0");
  }
}

// One sampled joint draw plus the densities it was drawn under.
struct EpisodeParams {
  ScenarioTag scenario = ScenarioTag::car_following;
  std::vector<double> values;  // in scenario_schema order
  double natural_density = 1.0;
  double proposal_density = 1.0;
};

struct EpisodeResult {
  OutcomeEvent outcome;
  double injury_prob = 0.0;  // 0 unless the episode crashed
  double weight = 1.0;       // natural_density / proposal_density
  EpisodeParams params;
  std::uint64_t episode_index = 0;
  // Severity summaries over the whole trajectory (crashes included).
  double min_gap = kInf;
  double min_ttc = kInf;
};

// Lead-vehicle plan: cruise, then optionally brake at a fixed rate for a
// fixed time starting at brake_onset, then hold the resulting speed.
struct LeadManeuver {
  double brake_onset = 1.0;    // s
  double brake_decel = 0.0;    // m/s^2, magnitude
  double brake_duration = 0.0; // s

  double accel_at(double t) const {
    if (brake_duration > 0.0 && t >= brake_onset &&
        t < brake_onset + brake_duration) {
      return -brake_decel;
    }
    return 0.0;
  }
};

struct Scene {
  VehicleState ego;
  VehicleState lead;
  LeadManeuver maneuver;
};

// Gap at which the policy holds station behind a constant-speed lead,
// measured by letting the controller settle for 60 s. Memoized per
// (policy id, speed); the memo only caches a pure function, so it cannot
// change results, only skip repeated settling runs.
inline double equilibrium_gap(const EgoPolicy& policy, double speed,
                              const SimConfig& config) {
  struct Key {
    std::string id;
    std::uint64_t speed_bits;
    bool operator<(const Key& o) const {
      return id < o.id || (id == o.id && speed_bits < o.speed_bits);
    }
  };
  static std::map<Key, double> cache;
  static std::mutex cache_mutex;

  std::uint64_t bits;
  static_assert(sizeof(bits) == sizeof(speed));
  std::memcpy(&bits, &speed, sizeof(bits));
  const Key key{policy.policy_id(), bits};
  {
    std::lock_guard<std::mutex> lock(cache_mutex);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
  }

  const double L = config.thresholds.vehicle_length;
  VehicleState ego{0.0, speed, 0.0};
  VehicleState lead{config.thresholds.vehicle_length + 2.0 + 2.0 * speed, speed,
                    0.0};
  const int steps = static_cast<int>(std::llround(60.0 / config.dt));
  for (int k = 0; k < steps; ++k) {
    const double gap = lead.position - ego.position - L;
    const double cmd = std::clamp(policy.decide({ego.speed, gap, lead.speed}),
                                  -config.max_brake, config.max_accel);
    std::tie(ego, lead) = step_longitudinal(ego, lead, cmd, 0.0, config.dt);
  }
  const double gap = lead.position - ego.position - L;

  std::lock_guard<std::mutex> lock(cache_mutex);
  cache.emplace(key, gap);
  return gap;
}

// Builds the initial scene for one episode. Throws SceneError for parameter
// draws that describe an impossible setup; callers count those episodes as
// invalid rather than dropping them silently.
inline Scene build_initial_scene(const EpisodeParams& params,
                                 const SimConfig& config,
                                 const EgoPolicy& policy) {
  const double L = config.thresholds.vehicle_length;
  if (params.values.size() != 3) {
    throw SceneError("episode params must carry three values");
  }
  Scene scene;
  if (params.scenario == ScenarioTag::car_following) {
    const double v0 = params.values[0];
    const double decel = params.values[1];
    const double duration = params.values[2];
    if (!(v0 >= 0.0)) throw SceneError("negative initial speed");
    if (!(decel >= 0.0)) throw SceneError("negative braking strength");
    if (!(duration >= 0.0)) throw SceneError("negative braking duration");
    const double gap0 =
        config.initial_gap ? *config.initial_gap
                           : equilibrium_gap(policy, v0, config);
    if (!(gap0 > 0.0)) throw SceneError("non-positive initial gap");
    scene.ego = {0.0, v0, 0.0};
    scene.lead = {gap0 + L, v0, 0.0};
    scene.maneuver = {1.0, decel, duration};
  } else {
    const double gap0 = params.values[0];
    const double closing = params.values[1];
    const double lead_speed = params.values[2];
    if (!(gap0 > 0.0)) throw SceneError("cut-in gap must be > 0");
    if (!(lead_speed >= 0.0)) throw SceneError("negative lead speed");
    const double ego_speed = lead_speed + closing;
    if (!(ego_speed >= 0.0)) {
      throw SceneError("cut-in implies negative ego speed");
    }
    scene.ego = {0.0, ego_speed, 0.0};
    scene.lead = {gap0 + L, lead_speed, 0.0};
    scene.maneuver = {};  // constant-speed lead
  }
  return scene;
}

// Optional per-step observer; receives the time and both states after each
// recorded sample (the initial state included).
using StepSink = std::function<void(double t, const VehicleState& ego,
                                    const VehicleState& lead, double gap,
                                    double ttc)>;

// Runs one episode to the horizon or first contact and classifies it.
// Policy commands are clamped to the vehicle's limits; a non-finite command
// is a policy fault and aborts the run.
inline EpisodeResult run_episode(const EgoPolicy& policy,
                                 const EpisodeParams& params,
                                 const SimConfig& config,
                                 std::uint64_t episode_index = 0,
                                 const StepSink* sink = nullptr) {
  validate(config);
  const Scene scene = build_initial_scene(params, config, policy);
  const double L = config.thresholds.vehicle_length;
  const int steps = static_cast<int>(std::llround(config.horizon / config.dt));

  Trajectory traj;
  traj.dt = config.dt;
  traj.samples.reserve(static_cast<std::size_t>(steps) + 1);
  traj.samples.emplace_back(scene.ego, scene.lead);

  VehicleState ego = scene.ego;
  VehicleState lead = scene.lead;
  double min_gap = lead.position - ego.position - L;
  double min_ttc = sample_ttc(min_gap, ego.speed, lead.speed);
  if (sink) (*sink)(0.0, ego, lead, min_gap, min_ttc);

  bool contact = min_gap <= config.thresholds.crash_gap;
  for (int k = 0; k < steps && !contact; ++k) {
    const double t = static_cast<double>(k) * config.dt;
    const double gap = lead.position - ego.position - L;
    const double cmd = policy.decide({ego.speed, gap, lead.speed});
    if (!std::isfinite(cmd)) {
      throw PolicyFaultError(policy.policy_id(),
                             "non-finite acceleration command");
    }
    const double ego_accel = std::clamp(cmd, -config.max_brake, config.max_accel);
    std::tie(ego, lead) =
        step_longitudinal(ego, lead, ego_accel, scene.maneuver.accel_at(t),
                          config.dt);
    traj.samples.emplace_back(ego, lead);

    const double new_gap = lead.position - ego.position - L;
    const double new_ttc = sample_ttc(new_gap, ego.speed, lead.speed);
    min_gap = std::min(min_gap, new_gap);
    min_ttc = std::min(min_ttc, new_ttc);
    if (sink) {
      (*sink)((static_cast<double>(k) + 1.0) * config.dt, ego, lead, new_gap,
              new_ttc);
    }
    contact = new_gap <= config.thresholds.crash_gap;
  }

  EpisodeResult result;
  result.outcome = detect_outcome(traj, config.thresholds);
  if (const auto* crash = std::get_if<CrashOutcome>(&result.outcome)) {
    result.injury_prob = injury_probability(crash->delta_v, config.injury);
  }
  if (!(params.proposal_density > 0.0)) {
    throw EstimationError("episode has non-positive proposal density");
  }
  result.weight = params.natural_density / params.proposal_density;
  result.params = params;
  result.episode_index = episode_index;
  // Contact is contact: the discrete step may overshoot into overlap, but
  // the physical minimum separation never goes below zero.
  result.min_gap = std::max(0.0, min_gap);
  result.min_ttc = std::max(0.0, min_ttc);
  return result;
}

// Draws one joint parameter vector from the proposal model and records both
// densities. Natural and proposal may be the same model (weight 1).
inline EpisodeParams sample_episode_params(const ThreatModel& natural,
                                           const ThreatModel& proposal,
                                           RngStream& rng) {
  EpisodeParams params;
  params.scenario = natural.scenario;
  params.values.reserve(proposal.vars.size());
  for (const auto& dist : proposal.vars.dists) {
    params.values.push_back(sample(dist, rng));
  }
  params.natural_density = joint_density(natural.vars, params.values);
  params.proposal_density = joint_density(proposal.vars, params.values);
  return params;
}

}  // namespace accel_eval
