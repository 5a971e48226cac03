// Longitudinal two-vehicle kinematics, episode trajectories, and outcome
// classification (crash / conflict / safe) with an injury severity curve.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <utility>
#include <variant>
#include <vector>

#include "errors.hpp"
#include "numeric.hpp"

namespace accel_eval {

struct VehicleState {
  double position = 0.0;  // m, along-lane
  double speed = 0.0;     // m/s, never negative
  double accel = 0.0;     // m/s^2, the acceleration applied on the last step
};

struct SafetyThresholds {
  double conflict_ttc = 1.5;   // s
  double vehicle_length = 5.0; // m, bumper-to-bumper offset
  double crash_gap = 0.0;      // m, contact when gap falls to this
};

struct InjuryCurve {
  double midpoint_delta_v = 12.0;  // m/s at which risk is 0.5
  double slope = 0.4;              // logistic steepness per m/s
};

struct Trajectory {
  double dt = 0.1;
  std::vector<std::pair<VehicleState, VehicleState>> samples;  // (ego, lead)

  double gap_at(std::size_t i, double vehicle_length) const {
    const auto& [ego, lead] = samples[i];
    return lead.position - ego.position - vehicle_length;
  }
};

struct SafeOutcome {
  double min_ttc = kInf;
  double min_gap = kInf;
};
struct ConflictOutcome {
  double min_ttc = kInf;
  double min_gap = kInf;
};
struct CrashOutcome {
  double delta_v = 0.0;        // m/s closing speed at first contact
  double time_of_impact = 0.0; // s from episode start
};
using OutcomeEvent = std::variant<SafeOutcome, ConflictOutcome, CrashOutcome>;

inline bool is_crash(const OutcomeEvent& o) {
  return std::holds_alternative<CrashOutcome>(o);
}
inline bool is_conflict(const OutcomeEvent& o) {
  return std::holds_alternative<ConflictOutcome>(o);
}
inline bool is_safe(const OutcomeEvent& o) {
  return std::holds_alternative<SafeOutcome>(o);
}

// Semi-implicit Euler for one vehicle: the new speed feeds the position
// update, and speed is clamped at zero (no reversing). The recorded accel
// is zeroed when the clamp absorbs a braking command.
inline VehicleState advance_vehicle(const VehicleState& s, double accel_cmd,
                                    double dt) {
  if (!std::isfinite(s.position) || !std::isfinite(s.speed) ||
      !std::isfinite(accel_cmd) || !(dt > 0.0)) {
    throw InvalidStateError("advance_vehicle: non-finite state or bad dt");
  }
  VehicleState out;
  const double v = s.speed + accel_cmd * dt;
  if (v < 0.0) {
    out.speed = 0.0;
    out.accel = accel_cmd < 0.0 ? 0.0 : accel_cmd;
  } else {
    out.speed = v;
    out.accel = accel_cmd;
  }
  out.position = s.position + out.speed * dt;
  return out;
}

// Advances ego and lead together over one step.
inline std::pair<VehicleState, VehicleState> step_longitudinal(
    const VehicleState& ego, const VehicleState& lead, double ego_accel_cmd,
    double lead_accel_cmd, double dt) {
  return {advance_vehicle(ego, ego_accel_cmd, dt),
          advance_vehicle(lead, lead_accel_cmd, dt)};
}

// Time to contact at one sample; defined only while closing, +inf otherwise.
// Overlapping vehicles (gap <= 0) are at contact already: ttc 0.
inline double sample_ttc(double gap, double ego_speed, double lead_speed) {
  const double closing = ego_speed - lead_speed;
  if (closing <= 0.0) return kInf;
  return std::max(0.0, gap) / std::max(1e-9, closing);
}

// Classifies a finished trajectory. Crash takes precedence over conflict,
// conflict over safe; the scan stops at the first contact sample so the
// reported delta_v and impact time belong to the first contact.
inline OutcomeEvent detect_outcome(const Trajectory& traj,
                                   const SafetyThresholds& th) {
  if (traj.samples.empty()) {
    throw InvalidStateError("detect_outcome: empty trajectory");
  }
  if (!(traj.dt > 0.0)) {
    throw InvalidStateError("detect_outcome: non-positive dt");
  }
  double min_ttc = kInf;
  double min_gap = kInf;
  for (std::size_t i = 0; i < traj.samples.size(); ++i) {
    const auto& [ego, lead] = traj.samples[i];
    const double gap = traj.gap_at(i, th.vehicle_length);
    if (gap <= th.crash_gap) {
      return CrashOutcome{std::max(0.0, ego.speed - lead.speed),
                          static_cast<double>(i) * traj.dt};
    }
    min_gap = std::min(min_gap, gap);
    min_ttc = std::min(min_ttc, sample_ttc(gap, ego.speed, lead.speed));
  }
  if (min_ttc <= th.conflict_ttc) return ConflictOutcome{min_ttc, min_gap};
  return SafeOutcome{min_ttc, min_gap};
}

// Probability of a moderate-or-worse injury given the crash closing speed.
inline double injury_probability(double delta_v, const InjuryCurve& curve) {
  if (!(delta_v >= 0.0)) {
    throw DomainError("injury_probability: delta_v must be non-negative");
  }
  return 1.0 / (1.0 + std::exp(-curve.slope * (delta_v - curve.midpoint_delta_v)));
}

}  // namespace accel_eval
