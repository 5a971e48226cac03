// Error types shared across the library. Each class corresponds to one
// operator-facing failure category (the CLI maps them onto its exit codes).
#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace accel_eval {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad configuration, arguments, or schema mismatch.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Unusable input data (malformed logs, empty event sets).
class DataError : public Error {
 public:
  using Error::Error;
};

// Non-finite or malformed kinematic state.
class InvalidStateError : public Error {
 public:
  using Error::Error;
};

// Argument outside an operation's mathematical domain.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Exponential tilt requested for a family that does not stay in-family.
class UnsupportedTiltError : public Error {
 public:
  using Error::Error;
};

// Tilt coefficient that would leave the family's valid parameter region.
class InvalidTiltError : public Error {
 public:
  using Error::Error;
};

// Proposal support does not cover the natural support.
class AbsoluteContinuityError : public Error {
 public:
  using Error::Error;
};

// Maximum-likelihood fit cannot be produced from the given samples.
class FitError : public Error {
 public:
  using Error::Error;
};

// Episode parameters that describe a physically impossible scene.
class SceneError : public Error {
 public:
  using Error::Error;
};

// Estimation cannot proceed (e.g. every episode invalid).
class EstimationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// A controller produced a non-finite command, broke protocol, or timed out.
class PolicyFaultError : public Error {
 public:
  PolicyFaultError(std::string policy_id, const std::string& detail)
      : Error("policy fault [" + policy_id + "]: " + detail),
        policy_id_(std::move(policy_id)) {}
  const std::string& policy_id() const noexcept { return policy_id_; }

 private:
  std::string policy_id_;
};

}  // namespace accel_eval
