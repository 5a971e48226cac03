// Parametric distribution families for driver-behavior variables:
// sampling by inverse cdf, densities, exponential tilting, and (weighted)
// maximum-likelihood fitting.
//
// Supported families and parameters:
//   Exponential(rate)                 support [0, inf)
//   TruncatedNormal(mean, sd, lo, hi) support [lo, hi]
//   Pareto(scale, shape)              support [scale, inf)
//   Uniform(lo, hi)                   support [lo, hi]
//   DiscreteEmpirical(values, probs)  finite support
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "errors.hpp"
#include "numeric.hpp"
#include "rng.hpp"

namespace accel_eval {

enum class Family {
  exponential,
  truncated_normal,
  pareto,
  uniform,
  discrete_empirical,
};

struct Exponential {
  double rate = 1.0;
};

struct TruncatedNormal {
  double mean = 0.0;
  double sd = 1.0;
  double lo = -kInf;  // finite in every validated spec
  double hi = kInf;
};

struct Pareto {
  double scale = 1.0;
  double shape = 1.0;
};

struct Uniform {
  double lo = 0.0;
  double hi = 1.0;
};

struct DiscreteEmpirical {
  std::vector<double> values;
  std::vector<double> probs;
};

using DistributionSpec =
    std::variant<Exponential, TruncatedNormal, Pareto, Uniform, DiscreteEmpirical>;

inline Family family_of(const DistributionSpec& d) {
  return static_cast<Family>(d.index());
}

inline std::string family_name(Family f) {
  switch (f) {
    case Family::exponential: return "exponential";
    case Family::truncated_normal: return "truncated_normal";
    case Family::pareto: return "pareto";
    case Family::uniform: return "uniform";
    case Family::discrete_empirical: return "discrete_empirical";
  }
  throw DomainError("family_name: unknown family");
}

inline Family family_from_name(const std::string& name) {
  if (name == "exponential") return Family::exponential;
  if (name == "truncated_normal") return Family::truncated_normal;
  if (name == "pareto") return Family::pareto;
  if (name == "uniform") return Family::uniform;
  if (name == "discrete_empirical") return Family::discrete_empirical;
  throw ConfigError("unknown distribution family: " + name);
}

inline void validate(const DistributionSpec& dist) {
  std::visit(
      [](const auto& d) {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, Exponential>) {
          if (!(d.rate > 0.0) || !std::isfinite(d.rate)) {
            throw DomainError("Exponential: rate must be finite and > 0");
          }
        } else if constexpr (std::is_same_v<T, TruncatedNormal>) {
          if (!std::isfinite(d.mean) || !(d.sd > 0.0) || !std::isfinite(d.sd)) {
            throw DomainError("TruncatedNormal: bad mean or sd");
          }
          if (!(d.lo < d.hi) || !std::isfinite(d.lo) || !std::isfinite(d.hi)) {
            throw DomainError("TruncatedNormal: bounds must be finite, lo < hi");
          }
        } else if constexpr (std::is_same_v<T, Pareto>) {
          if (!(d.scale > 0.0) || !(d.shape > 0.0) || !std::isfinite(d.scale) ||
              !std::isfinite(d.shape)) {
            throw DomainError("Pareto: scale and shape must be finite and > 0");
          }
        } else if constexpr (std::is_same_v<T, Uniform>) {
          if (!(d.lo < d.hi) || !std::isfinite(d.lo) || !std::isfinite(d.hi)) {
            throw DomainError("Uniform: bounds must be finite, lo < hi");
          }
        } else {
          if (d.values.empty() || d.values.size() != d.probs.size()) {
            throw DomainError("DiscreteEmpirical: values/probs size mismatch");
          }
          double total = 0.0;
          for (std::size_t i = 0; i < d.values.size(); ++i) {
            if (!std::isfinite(d.values[i]) || !(d.probs[i] >= 0.0)) {
              throw DomainError("DiscreteEmpirical: bad value or negative prob");
            }
            total += d.probs[i];
          }
          if (std::fabs(total - 1.0) > 1e-9) {
            throw DomainError("DiscreteEmpirical: probs must sum to 1");
          }
        }
      },
      dist);
}

struct SupportInterval {
  double lo = -kInf;
  double hi = kInf;
};

inline SupportInterval support_of(const DistributionSpec& dist) {
  return std::visit(
      [](const auto& d) -> SupportInterval {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, Exponential>) {
          return {0.0, kInf};
        } else if constexpr (std::is_same_v<T, TruncatedNormal>) {
          return {d.lo, d.hi};
        } else if constexpr (std::is_same_v<T, Pareto>) {
          return {d.scale, kInf};
        } else if constexpr (std::is_same_v<T, Uniform>) {
          return {d.lo, d.hi};
        } else {
          const auto [mn, mx] =
              std::minmax_element(d.values.begin(), d.values.end());
          return {*mn, *mx};
        }
      },
      dist);
}

namespace detail {
// Mass of the truncation window; guarded against underflow far in a tail.
inline double tn_window_mass(const TruncatedNormal& d) {
  const double a = (d.lo - d.mean) / d.sd;
  const double b = (d.hi - d.mean) / d.sd;
  return std::max(normal_cdf(b) - normal_cdf(a), 1e-300);
}
}  // namespace detail

inline double pdf(const DistributionSpec& dist, double x) {
  return std::visit(
      [x](const auto& d) -> double {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, Exponential>) {
          if (x < 0.0) return 0.0;
          return d.rate * std::exp(-d.rate * x);
        } else if constexpr (std::is_same_v<T, TruncatedNormal>) {
          if (x < d.lo || x > d.hi) return 0.0;
          const double z = (x - d.mean) / d.sd;
          return normal_pdf(z) / (d.sd * detail::tn_window_mass(d));
        } else if constexpr (std::is_same_v<T, Pareto>) {
          if (x < d.scale) return 0.0;
          return d.shape * std::pow(d.scale, d.shape) /
                 std::pow(x, d.shape + 1.0);
        } else if constexpr (std::is_same_v<T, Uniform>) {
          if (x < d.lo || x > d.hi) return 0.0;
          return 1.0 / (d.hi - d.lo);
        } else {
          // Point mass; matches sampled values exactly (bitwise).
          for (std::size_t i = 0; i < d.values.size(); ++i) {
            if (d.values[i] == x) return d.probs[i];
          }
          return 0.0;
        }
      },
      dist);
}

// One uniform draw per sample in every family, so stream consumption is
// identical across proposal choices.
inline double sample(const DistributionSpec& dist, RngStream& rng) {
  const double u = rng.next_u01_open();
  return std::visit(
      [u](const auto& d) -> double {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, Exponential>) {
          return -std::log1p(-u) / d.rate;
        } else if constexpr (std::is_same_v<T, TruncatedNormal>) {
          const double pa = normal_cdf((d.lo - d.mean) / d.sd);
          const double pb = normal_cdf((d.hi - d.mean) / d.sd);
          const double p = pa + u * (pb - pa);
          const double x =
              d.mean + d.sd * normal_quantile(std::clamp(p, 1e-300, 1.0 - 1e-16));
          return std::clamp(x, d.lo, d.hi);
        } else if constexpr (std::is_same_v<T, Pareto>) {
          return d.scale * std::pow(1.0 - u, -1.0 / d.shape);
        } else if constexpr (std::is_same_v<T, Uniform>) {
          return d.lo + u * (d.hi - d.lo);
        } else {
          double c = 0.0;
          for (std::size_t i = 0; i < d.values.size(); ++i) {
            c += d.probs[i];
            if (u <= c) return d.values[i];
          }
          return d.values.back();
        }
      },
      dist);
}

inline double dist_mean(const DistributionSpec& dist) {
  return std::visit(
      [](const auto& d) -> double {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, Exponential>) {
          return 1.0 / d.rate;
        } else if constexpr (std::is_same_v<T, TruncatedNormal>) {
          const double a = (d.lo - d.mean) / d.sd;
          const double b = (d.hi - d.mean) / d.sd;
          const double z = detail::tn_window_mass(d);
          return d.mean + d.sd * (normal_pdf(a) - normal_pdf(b)) / z;
        } else if constexpr (std::is_same_v<T, Pareto>) {
          if (d.shape <= 1.0) return kInf;
          return d.shape * d.scale / (d.shape - 1.0);
        } else if constexpr (std::is_same_v<T, Uniform>) {
          return 0.5 * (d.lo + d.hi);
        } else {
          return std::inner_product(d.values.begin(), d.values.end(),
                                    d.probs.begin(), 0.0);
        }
      },
      dist);
}

// Exponential tilt: reweights the density by exp(theta * x) and renormalizes.
// Families closed under tilting map parameter-to-parameter; the others refuse
// (callers supply an explicit replacement proposal instead).
inline DistributionSpec tilt(const DistributionSpec& dist, double theta) {
  if (!std::isfinite(theta)) throw DomainError("tilt: non-finite theta");
  return std::visit(
      [theta](const auto& d) -> DistributionSpec {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, Exponential>) {
          if (theta >= d.rate) {
            throw InvalidTiltError(
                "tilt: Exponential requires theta < rate (got theta=" +
                std::to_string(theta) + ", rate=" + std::to_string(d.rate) + ")");
          }
          return Exponential{d.rate - theta};
        } else if constexpr (std::is_same_v<T, TruncatedNormal>) {
          // Bounded support: any finite theta stays in-family, bounds fixed.
          return TruncatedNormal{d.mean + theta * d.sd * d.sd, d.sd, d.lo, d.hi};
        } else if constexpr (std::is_same_v<T, DiscreteEmpirical>) {
          DiscreteEmpirical out = d;
          double vmax = -kInf;
          for (double v : d.values) vmax = std::max(vmax, theta * v);
          double total = 0.0;
          for (std::size_t i = 0; i < d.values.size(); ++i) {
            out.probs[i] = d.probs[i] * std::exp(theta * d.values[i] - vmax);
            total += out.probs[i];
          }
          for (double& p : out.probs) p /= total;
          return out;
        } else if constexpr (std::is_same_v<T, Pareto>) {
          throw UnsupportedTiltError(
              "tilt: Pareto is not closed under exponential tilting");
        } else {
          throw UnsupportedTiltError(
              "tilt: Uniform is not closed under exponential tilting");
        }
      },
      dist);
}

struct FitOptions {
  // TruncatedNormal requires fixed truncation bounds.
  std::optional<double> lo;
  std::optional<double> hi;
  // Pareto: fix the scale instead of taking the sample minimum.
  std::optional<double> scale;
};

namespace detail {

inline void check_fit_inputs(std::span<const double> xs,
                             std::span<const double> ws) {
  if (xs.empty()) throw FitError("fit: no samples");
  if (!ws.empty() && ws.size() != xs.size()) {
    throw FitError("fit: weight count does not match sample count");
  }
  double wsum = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!std::isfinite(xs[i])) throw FitError("fit: non-finite sample");
    if (!ws.empty()) {
      if (!(ws[i] >= 0.0) || !std::isfinite(ws[i])) {
        throw FitError("fit: weights must be finite and non-negative");
      }
      wsum += ws[i];
    }
  }
  if (!ws.empty() && !(wsum > 0.0)) throw FitError("fit: all weights zero");
}

inline double weight_at(std::span<const double> ws, std::size_t i) {
  return ws.empty() ? 1.0 : ws[i];
}

inline DistributionSpec fit_exponential(std::span<const double> xs,
                                        std::span<const double> ws) {
  double sw = 0.0, swx = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i] < 0.0) throw FitError("Exponential fit: negative sample");
    const double w = weight_at(ws, i);
    sw += w;
    swx += w * xs[i];
  }
  if (!(swx > 0.0)) {
    throw FitError("Exponential fit: weighted mean is zero");
  }
  return Exponential{sw / swx};
}

inline DistributionSpec fit_uniform(std::span<const double> xs) {
  const auto [mn, mx] = std::minmax_element(xs.begin(), xs.end());
  if (!(*mn < *mx)) {
    throw FitError("Uniform fit: samples have zero spread");
  }
  return Uniform{*mn, *mx};
}

inline DistributionSpec fit_discrete(std::span<const double> xs,
                                     std::span<const double> ws) {
  std::vector<std::pair<double, double>> mass;  // value -> weight
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double w = weight_at(ws, i);
    auto it = std::find_if(mass.begin(), mass.end(),
                           [&](const auto& p) { return p.first == xs[i]; });
    if (it == mass.end()) {
      mass.emplace_back(xs[i], w);
    } else {
      it->second += w;
    }
  }
  std::sort(mass.begin(), mass.end());
  double total = 0.0;
  for (const auto& [v, w] : mass) total += w;
  DiscreteEmpirical out;
  for (const auto& [v, w] : mass) {
    out.values.push_back(v);
    out.probs.push_back(w / total);
  }
  return out;
}

inline DistributionSpec fit_truncated_normal(std::span<const double> xs,
                                             std::span<const double> ws,
                                             const FitOptions& opt) {
  if (!opt.lo || !opt.hi) {
    throw FitError("TruncatedNormal fit: truncation bounds are required");
  }
  const double lo = *opt.lo, hi = *opt.hi;
  if (!(lo < hi)) throw FitError("TruncatedNormal fit: lo must be < hi");
  double sw = 0.0, swx = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i] < lo || xs[i] > hi) {
      throw FitError("TruncatedNormal fit: sample outside the bounds");
    }
    const double w = weight_at(ws, i);
    sw += w;
    swx += w * xs[i];
  }
  const double mean0 = swx / sw;
  double svar = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double d = xs[i] - mean0;
    svar += weight_at(ws, i) * d * d;
  }
  const double sd0 = std::sqrt(svar / sw);
  if (!(sd0 > 0.0)) {
    throw FitError("TruncatedNormal fit: samples have zero spread");
  }

  // Negative log-likelihood over (mean, log sd); the window-mass term is
  // what distinguishes this from a plain normal fit.
  auto nll = [&](std::span<const double> p) {
    const double mu = p[0];
    const double sd = std::exp(p[1]);
    const TruncatedNormal cand{mu, sd, lo, hi};
    const double log_window = std::log(tn_window_mass(cand));
    double acc = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double z = (xs[i] - mu) / sd;
      acc += weight_at(ws, i) * (p[1] + 0.5 * z * z + log_window);
    }
    return acc;
  };
  NelderMeadOptions nm;
  nm.max_iters = 600;
  nm.initial_step = 0.25;
  const auto best = nelder_mead(nll, {mean0, std::log(sd0)}, nm);
  return TruncatedNormal{best[0], std::exp(best[1]), lo, hi};
}

inline DistributionSpec fit_pareto(std::span<const double> xs,
                                   std::span<const double> ws,
                                   const FitOptions& opt) {
  double scale = opt.scale.value_or(*std::min_element(xs.begin(), xs.end()));
  if (!(scale > 0.0)) throw FitError("Pareto fit: scale must be > 0");
  double sw = 0.0, slog = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i] < scale) throw FitError("Pareto fit: sample below the scale");
    const double w = weight_at(ws, i);
    sw += w;
    slog += w * std::log(xs[i] / scale);
  }
  if (!(slog > 0.0)) {
    throw FitError("Pareto fit: samples have zero spread above the scale");
  }
  return Pareto{scale, sw / slog};
}

}  // namespace detail

// Weighted maximum likelihood within one family. Unit weights when ws is
// empty. Closed forms where they exist; TruncatedNormal maximizes its
// likelihood numerically with the bounds held fixed.
inline DistributionSpec fit_mle_weighted(Family family,
                                         std::span<const double> xs,
                                         std::span<const double> ws,
                                         const FitOptions& opt = {}) {
  detail::check_fit_inputs(xs, ws);
  switch (family) {
    case Family::exponential: return detail::fit_exponential(xs, ws);
    case Family::truncated_normal: return detail::fit_truncated_normal(xs, ws, opt);
    case Family::pareto: return detail::fit_pareto(xs, ws, opt);
    case Family::uniform: return detail::fit_uniform(xs);
    case Family::discrete_empirical: return detail::fit_discrete(xs, ws);
  }
  throw DomainError("fit_mle_weighted: unknown family");
}

inline DistributionSpec fit_mle(Family family, std::span<const double> xs,
                                const FitOptions& opt = {}) {
  return fit_mle_weighted(family, xs, {}, opt);
}

}  // namespace accel_eval
