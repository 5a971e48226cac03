// Threat models: the joint distribution of the human-driver parameters for
// one scenario kind, plus tilting, likelihood ratios between a natural and
// a proposal model, and JSON serialization for the on-disk model format.
#pragma once

#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "distributions.hpp"
#include "errors.hpp"
#include "rng.hpp"

namespace accel_eval {

enum class ScenarioTag { car_following, cut_in };

inline std::string scenario_name(ScenarioTag tag) {
  return tag == ScenarioTag::car_following ? "car_following" : "cut_in";
}

inline ScenarioTag scenario_from_name(const std::string& name) {
  if (name == "car_following") return ScenarioTag::car_following;
  if (name == "cut_in") return ScenarioTag::cut_in;
  throw ConfigError("unknown scenario: " + name);
}

// Variable names, in sampling order, for each scenario kind.
//   car_following: initial lead speed, braking strength, braking duration
//   cut_in:        gap at lane entry, closing speed, cutting vehicle speed
inline const std::vector<std::string>& scenario_schema(ScenarioTag tag) {
  static const std::vector<std::string> cf = {"lead_speed", "decel",
                                              "brake_duration"};
  static const std::vector<std::string> ci = {"gap", "closing_speed",
                                              "lead_speed"};
  return tag == ScenarioTag::car_following ? cf : ci;
}

// Ordered set of independent scalar variables.
struct VariableSet {
  std::vector<std::string> names;
  std::vector<DistributionSpec> dists;

  std::size_t size() const { return names.size(); }

  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (names[i] == name) return i;
    }
    throw ConfigError("unknown variable: " + name);
  }
};

struct ThreatModel {
  ScenarioTag scenario = ScenarioTag::car_following;
  VariableSet vars;
};

// Per-variable tilt coefficients; variables not named are left untouched.
struct TiltParams {
  std::map<std::string, double> theta;
};

inline void validate(const VariableSet& vars) {
  if (vars.names.size() != vars.dists.size()) {
    throw ConfigError("VariableSet: name/distribution count mismatch");
  }
  for (std::size_t i = 0; i < vars.names.size(); ++i) {
    for (std::size_t j = i + 1; j < vars.names.size(); ++j) {
      if (vars.names[i] == vars.names[j]) {
        throw ConfigError("VariableSet: duplicate variable " + vars.names[i]);
      }
    }
    validate(vars.dists[i]);
  }
}

inline void validate(const ThreatModel& model) {
  validate(model.vars);
  const auto& schema = scenario_schema(model.scenario);
  if (model.vars.names != schema) {
    std::string want;
    for (const auto& n : schema) want += (want.empty() ? "" : ", ") + n;
    throw ConfigError("ThreatModel for " + scenario_name(model.scenario) +
                      " must define exactly [" + want + "] in order");
  }
}

inline ThreatModel apply_tilt(const ThreatModel& model, const TiltParams& tilts) {
  ThreatModel out = model;
  for (const auto& [name, theta] : tilts.theta) {
    const std::size_t i = out.vars.index_of(name);
    out.vars.dists[i] = tilt(out.vars.dists[i], theta);
  }
  return out;
}

// Structural absolute-continuity check: wherever the natural model puts
// mass, the proposal must too. Interval families compare supports; discrete
// families compare point sets.
inline void validate_pairing(const VariableSet& natural,
                             const VariableSet& proposal) {
  if (natural.names != proposal.names) {
    throw AbsoluteContinuityError(
        "natural and proposal models define different variables");
  }
  for (std::size_t i = 0; i < natural.size(); ++i) {
    const auto& f = natural.dists[i];
    const auto& g = proposal.dists[i];
    const bool f_disc = family_of(f) == Family::discrete_empirical;
    const bool g_disc = family_of(g) == Family::discrete_empirical;
    if (f_disc != g_disc) {
      throw AbsoluteContinuityError(
          "variable " + natural.names[i] +
          ": discrete and continuous families cannot be paired");
    }
    if (f_disc) {
      const auto& fd = std::get<DiscreteEmpirical>(f);
      for (std::size_t k = 0; k < fd.values.size(); ++k) {
        if (fd.probs[k] > 0.0 && pdf(g, fd.values[k]) <= 0.0) {
          throw AbsoluteContinuityError(
              "variable " + natural.names[i] + ": proposal has zero mass at " +
              std::to_string(fd.values[k]));
        }
      }
    } else {
      const auto fs = support_of(f);
      const auto gs = support_of(g);
      if (gs.lo > fs.lo || gs.hi < fs.hi) {
        throw AbsoluteContinuityError("variable " + natural.names[i] +
                                      ": proposal support does not cover the "
                                      "natural support");
      }
    }
  }
}

inline void validate_pairing(const ThreatModel& natural,
                             const ThreatModel& proposal) {
  if (natural.scenario != proposal.scenario) {
    throw AbsoluteContinuityError(
        "natural and proposal models describe different scenarios");
  }
  validate_pairing(natural.vars, proposal.vars);
}

inline double joint_density(const VariableSet& vars,
                            std::span<const double> x) {
  if (x.size() != vars.size()) {
    throw DomainError("joint_density: value count mismatch");
  }
  double p = 1.0;
  for (std::size_t i = 0; i < vars.size(); ++i) p *= pdf(vars.dists[i], x[i]);
  return p;
}

// density_natural(x) / density_proposal(x) for one sampled joint point.
// Zero natural density gives ratio 0; zero proposal density at a point the
// natural model can reach is a pairing violation.
inline double likelihood_ratio(std::span<const double> x,
                               const VariableSet& natural,
                               const VariableSet& proposal) {
  double ratio = 1.0;
  for (std::size_t i = 0; i < natural.size(); ++i) {
    const double f = pdf(natural.dists[i], x[i]);
    if (f == 0.0) return 0.0;
    const double g = pdf(proposal.dists[i], x[i]);
    if (!(g > 0.0)) {
      throw AbsoluteContinuityError(
          "likelihood_ratio: proposal density vanished at a natural-support "
          "point (variable " + natural.names[i] + ")");
    }
    ratio *= f / g;
  }
  return ratio;
}

inline double likelihood_ratio(std::span<const double> x,
                               const ThreatModel& natural,
                               const ThreatModel& proposal) {
  return likelihood_ratio(x, natural.vars, proposal.vars);
}

// ---- JSON serialization -------------------------------------------------
//
// Numbers round-trip bit-exactly (shortest decimal that reparses to the
// same double). Unbounded support endpoints serialize as null.

using ordered_json = nlohmann::ordered_json;

inline ordered_json support_to_json(const SupportInterval& s) {
  ordered_json arr = ordered_json::array();
  arr.push_back(std::isfinite(s.lo) ? ordered_json(s.lo) : ordered_json(nullptr));
  arr.push_back(std::isfinite(s.hi) ? ordered_json(s.hi) : ordered_json(nullptr));
  return arr;
}

inline ordered_json dist_to_json(const DistributionSpec& dist) {
  ordered_json j;
  j["family"] = family_name(family_of(dist));
  ordered_json params;
  std::visit(
      [&params](const auto& d) {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, Exponential>) {
          params["rate"] = d.rate;
        } else if constexpr (std::is_same_v<T, TruncatedNormal>) {
          params["mean"] = d.mean;
          params["sd"] = d.sd;
          params["lo"] = d.lo;
          params["hi"] = d.hi;
        } else if constexpr (std::is_same_v<T, Pareto>) {
          params["scale"] = d.scale;
          params["shape"] = d.shape;
        } else if constexpr (std::is_same_v<T, Uniform>) {
          params["lo"] = d.lo;
          params["hi"] = d.hi;
        } else {
          params["values"] = d.values;
          params["probs"] = d.probs;
        }
      },
      dist);
  j["params"] = std::move(params);
  j["support"] = support_to_json(support_of(dist));
  return j;
}

inline DistributionSpec dist_from_json(const ordered_json& j) {
  if (!j.is_object() || !j.contains("family") || !j.contains("params")) {
    throw ConfigError("distribution JSON must carry family and params");
  }
  const Family family = family_from_name(j.at("family").get<std::string>());
  const auto& p = j.at("params");
  auto num = [&p](const char* key) -> double {
    if (!p.contains(key) || !p.at(key).is_number()) {
      throw ConfigError(std::string("distribution params missing number: ") + key);
    }
    return p.at(key).get<double>();
  };
  DistributionSpec out;
  switch (family) {
    case Family::exponential:
      out = Exponential{num("rate")};
      break;
    case Family::truncated_normal:
      out = TruncatedNormal{num("mean"), num("sd"), num("lo"), num("hi")};
      break;
    case Family::pareto:
      out = Pareto{num("scale"), num("shape")};
      break;
    case Family::uniform:
      out = Uniform{num("lo"), num("hi")};
      break;
    case Family::discrete_empirical: {
      DiscreteEmpirical d;
      if (!p.contains("values") || !p.contains("probs")) {
        throw ConfigError("discrete_empirical params need values and probs");
      }
      d.values = p.at("values").get<std::vector<double>>();
      d.probs = p.at("probs").get<std::vector<double>>();
      out = std::move(d);
      break;
    }
  }
  validate(out);
  return out;
}

inline ordered_json threat_model_to_json(const ThreatModel& model) {
  validate(model);
  ordered_json j;
  j["scenario"] = scenario_name(model.scenario);
  ordered_json vars;
  for (std::size_t i = 0; i < model.vars.size(); ++i) {
    vars[model.vars.names[i]] = dist_to_json(model.vars.dists[i]);
  }
  j["variables"] = std::move(vars);
  return j;
}

inline ThreatModel threat_model_from_json(const ordered_json& j) {
  if (!j.is_object() || !j.contains("scenario") || !j.contains("variables")) {
    throw ConfigError("threat model JSON must carry scenario and variables");
  }
  ThreatModel model;
  model.scenario = scenario_from_name(j.at("scenario").get<std::string>());
  const auto& schema = scenario_schema(model.scenario);
  const auto& vars = j.at("variables");
  for (const auto& name : schema) {
    if (!vars.contains(name)) {
      throw ConfigError("threat model is missing variable: " + name);
    }
    model.vars.names.push_back(name);
    model.vars.dists.push_back(dist_from_json(vars.at(name)));
  }
  if (vars.size() != schema.size()) {
    throw ConfigError("threat model defines variables outside its scenario");
  }
  validate(model);
  return model;
}

}  // namespace accel_eval
