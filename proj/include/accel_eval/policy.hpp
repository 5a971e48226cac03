// Ego controllers: the policy interface, an adaptive cruise controller of
// the intelligent-driver family, and an emergency-braking overlay that can
// wrap any base policy.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <string>

#include "errors.hpp"
#include "numeric.hpp"

namespace accel_eval {

struct Observation {
  double speed = 0.0;       // m/s, ego
  double gap = 0.0;         // m, bumper-to-bumper to the lead
  double lead_speed = 0.0;  // m/s
};

// Longitudinal controller. decide() must be deterministic, side-effect-free
// (as observed by the engine), and return a finite acceleration command;
// the engine applies the vehicle's physical clamps.
class EgoPolicy {
 public:
  virtual ~EgoPolicy() = default;
  virtual double decide(const Observation& obs) const = 0;
  virtual const std::string& policy_id() const = 0;
};

namespace detail {
inline std::string fmt_param(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}
}  // namespace detail

struct IdmParams {
  double desired_speed = 33.3;     // m/s
  double time_headway = 0.6;       // s
  double min_gap = 2.0;            // m
  double max_accel = 1.0;          // m/s^2, the model's own accel scale
  double comfortable_decel = 6.0;  // m/s^2
};

// accel = a * [1 - (v/v0)^4 - (s*/s)^2]
// s*    = s0 + max(0, v*T + v*(v - v_lead) / (2*sqrt(a*b)))
// The max() keeps the dynamic term from going negative while opening.
class IdmPolicy final : public EgoPolicy {
 public:
  explicit IdmPolicy(const IdmParams& p = {}) : p_(p) {
    if (!(p.desired_speed > 0.0) || !(p.time_headway >= 0.0) ||
        !(p.min_gap >= 0.0) || !(p.max_accel > 0.0) ||
        !(p.comfortable_decel > 0.0)) {
      throw ConfigError("IdmPolicy: parameters out of range");
    }
    id_ = "idm(v0=" + detail::fmt_param(p.desired_speed) +
          ",T=" + detail::fmt_param(p.time_headway) +
          ",s0=" + detail::fmt_param(p.min_gap) +
          ",a=" + detail::fmt_param(p.max_accel) +
          ",b=" + detail::fmt_param(p.comfortable_decel) + ")";
  }

  double decide(const Observation& obs) const override {
    if (!(obs.gap > 0.0)) return -1e9;  // already overlapping: brake hard
    const double v = std::max(0.0, obs.speed);
    const double dv = v - obs.lead_speed;
    const double dyn =
        v * p_.time_headway +
        v * dv / (2.0 * std::sqrt(p_.max_accel * p_.comfortable_decel));
    const double s_star = p_.min_gap + std::max(0.0, dyn);
    const double free = std::pow(v / p_.desired_speed, 4.0);
    const double inter = (s_star / obs.gap) * (s_star / obs.gap);
    return p_.max_accel * (1.0 - free - inter);
  }

  const std::string& policy_id() const override { return id_; }
  const IdmParams& params() const { return p_; }

 private:
  IdmParams p_;
  std::string id_;
};

// Emergency overlay: while closing with time-to-contact at or below the
// trigger, command at least the configured braking; otherwise pass the base
// command through unchanged.
class AebOverlay final : public EgoPolicy {
 public:
  AebOverlay(std::shared_ptr<const EgoPolicy> base, double trigger_ttc = 4.0,
             double brake = 8.0)
      : base_(std::move(base)), trigger_ttc_(trigger_ttc), brake_(brake) {
    if (!base_) throw ConfigError("AebOverlay: base policy required");
    if (!(trigger_ttc_ > 0.0) || !(brake_ > 0.0)) {
      throw ConfigError("AebOverlay: trigger_ttc and brake must be > 0");
    }
    id_ = base_->policy_id() + "+aeb(ttc=" + detail::fmt_param(trigger_ttc_) +
          ",brake=" + detail::fmt_param(brake_) + ")";
  }

  double decide(const Observation& obs) const override {
    const double base = base_->decide(obs);
    const double closing = obs.speed - obs.lead_speed;
    if (closing > 0.0) {
      const double ttc = std::max(0.0, obs.gap) / closing;
      if (ttc <= trigger_ttc_) return std::min(base, -brake_);
    }
    return base;
  }

  const std::string& policy_id() const override { return id_; }

 private:
  std::shared_ptr<const EgoPolicy> base_;
  double trigger_ttc_;
  double brake_;
  std::string id_;
};

inline std::shared_ptr<EgoPolicy> idm_policy(const IdmParams& params = {}) {
  return std::make_shared<IdmPolicy>(params);
}

inline std::shared_ptr<EgoPolicy> aeb_overlay(
    std::shared_ptr<const EgoPolicy> base, double trigger_ttc = 4.0,
    double brake = 8.0) {
  return std::make_shared<AebOverlay>(std::move(base), trigger_ttc, brake);
}

}  // namespace accel_eval
