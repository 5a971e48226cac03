// Small numeric kernel: standard-normal pdf/cdf/quantile and a
// derivative-free simplex minimizer used by the likelihood fitters.
#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "errors.hpp"

namespace accel_eval {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

inline double normal_pdf(double x) {
  static const double inv_sqrt_2pi = 0.3989422804014326779399461;
  return inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

// erfc keeps the lower tail accurate down to ~1e-300.
inline double normal_cdf(double x) {
  return 0.5 * std::erfc(-x * 0.7071067811865475244008444);
}

// Inverse standard-normal cdf, Wichura's PPND16 rational approximations.
// Absolute error below 1e-14 over (0,1); verified against a bisection
// oracle in the test suite.
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw DomainError("normal_quantile: p must lie strictly inside (0,1)");
  }
  const double q = p - 0.5;
  if (std::fabs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    const double num =
        (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r +
              6.7265770927008700853e4) *
                 r +
             4.5921953931549871457e4) *
                r +
            1.3731693765509461125e4) *
               r +
           1.9715909503065514427e3) *
              r +
          1.3314166789178437745e2) *
             r +
         3.3871328727963666080e0);
    const double den =
        (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r +
              3.9307895800092710610e4) *
                 r +
             2.1213794301586595867e4) *
                r +
            5.3941960214247511077e3) *
               r +
           6.8718700749205790830e2) *
              r +
          4.2313330701600911252e1) *
             r +
         1.0);
    return q * num / den;
  }
  double r = (q < 0.0) ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double value;
  if (r <= 5.0) {
    r -= 1.6;
    const double num =
        (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
              2.41780725177450611770e-1) *
                 r +
             1.27045825245236838258e0) *
                r +
            3.64784832476320460504e0) *
               r +
           5.76949722146069140550e0) *
              r +
          4.63033784615654529590e0) *
             r +
         1.42343711074968357734e0);
    const double den =
        (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
              1.51986665636164571966e-2) *
                 r +
             1.48103976427480074590e-1) *
                r +
            6.89767334985100004550e-1) *
               r +
           1.67638483018380384940e0) *
              r +
          2.05319162663775882187e0) *
             r +
         1.0);
    value = num / den;
  } else {
    r -= 5.0;
    const double num =
        (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
              1.24266094738807843860e-3) *
                 r +
             2.65321895265761230930e-2) *
                r +
            2.96560571828504891230e-1) *
               r +
           1.78482653991729133580e0) *
              r +
          5.46378491116411436990e0) *
             r +
         6.65790464350110377720e0);
    const double den =
        (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) *
                  r +
              1.84631831751005468180e-5) *
                 r +
             7.86869131145613259100e-4) *
                r +
            1.48753612908506148525e-2) *
               r +
           1.36929880922735805310e-1) *
              r +
          5.99832206555887937690e-1) *
             r +
         1.0);
    value = num / den;
  }
  return (q < 0.0) ? -value : value;
}

// Two-sided quantile for a central interval at the given confidence.
inline double central_interval_z(double confidence) {
  if (!(confidence > 0.0 && confidence < 1.0)) {
    throw DomainError("central_interval_z: confidence must be in (0,1)");
  }
  return normal_quantile(0.5 * (1.0 + confidence));
}

struct NelderMeadOptions {
  int max_iters = 500;
  double tolerance = 1e-12;
  double initial_step = 0.5;
};

// Nelder-Mead without restarts. Deterministic for a given start point;
// adequate for the smooth 2-parameter likelihoods it is used on.
inline std::vector<double> nelder_mead(
    const std::function<double(std::span<const double>)>& f,
    std::vector<double> x0, const NelderMeadOptions& opt = {}) {
  const size_t n = x0.size();
  std::vector<std::vector<double>> simplex(n + 1, x0);
  for (size_t i = 0; i < n; ++i) simplex[i + 1][i] += opt.initial_step;
  std::vector<double> fx(n + 1);
  for (size_t i = 0; i <= n; ++i) fx[i] = f(simplex[i]);

  auto order = [&] {
    for (size_t i = 0; i <= n; ++i) {
      for (size_t j = i + 1; j <= n; ++j) {
        if (fx[j] < fx[i]) {
          std::swap(fx[i], fx[j]);
          std::swap(simplex[i], simplex[j]);
        }
      }
    }
  };

  std::vector<double> centroid(n), trial(n);
  for (int iter = 0; iter < opt.max_iters; ++iter) {
    order();
    if (std::fabs(fx[n] - fx[0]) <=
        opt.tolerance * (std::fabs(fx[0]) + opt.tolerance)) {
      break;
    }
    for (size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (size_t i = 0; i < n; ++i) s += simplex[i][j];
      centroid[j] = s / static_cast<double>(n);
    }
    auto blend = [&](double coef) {
      for (size_t j = 0; j < n; ++j) {
        trial[j] = centroid[j] + coef * (simplex[n][j] - centroid[j]);
      }
      return f(trial);
    };
    const double fr = blend(-1.0);  // reflect
    if (fr < fx[0]) {
      const double reflected_f = fr;
      std::vector<double> reflected = trial;
      const double fe = blend(-2.0);  // expand
      if (fe < reflected_f) {
        simplex[n] = trial;
        fx[n] = fe;
      } else {
        simplex[n] = reflected;
        fx[n] = reflected_f;
      }
    } else if (fr < fx[n - 1]) {
      simplex[n] = trial;
      fx[n] = fr;
    } else {
      const double fc = blend(fr < fx[n] ? -0.5 : 0.5);  // contract
      if (fc < std::min(fr, fx[n])) {
        simplex[n] = trial;
        fx[n] = fc;
      } else {
        for (size_t i = 1; i <= n; ++i) {  // shrink toward the best vertex
          for (size_t j = 0; j < n; ++j) {
            simplex[i][j] = simplex[0][j] + 0.5 * (simplex[i][j] - simplex[0][j]);
          }
          fx[i] = f(simplex[i]);
        }
      }
    }
  }
  order();
  return simplex[0];
}

}  // namespace accel_eval
