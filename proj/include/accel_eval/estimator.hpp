// Rare-event estimators over episode functions: plain Monte Carlo,
// importance sampling with likelihood-ratio reweighting, a cross-entropy
// search for low-variance proposals, exact enumeration for fully discrete
// models, and a sequential stopping rule.
//
// Episodes are indexed; episode i draws from a stream derived from
// (master_seed, domain, i) and reduction always runs in index order, so an
// estimate is a pure function of (inputs, master_seed) regardless of worker
// count.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "numeric.hpp"
#include "rng.hpp"
#include "simulation.hpp"
#include "threat_model.hpp"

namespace accel_eval {

enum class Metric { crash, conflict, injury };
enum class Method { crude, importance };

inline std::string metric_name(Metric m) {
  switch (m) {
    case Metric::crash: return "crash";
    case Metric::conflict: return "conflict";
    case Metric::injury: return "injury";
  }
  throw DomainError("metric_name: unknown metric");
}

inline Metric metric_from_name(const std::string& name) {
  if (name == "crash") return Metric::crash;
  if (name == "conflict") return Metric::conflict;
  if (name == "injury") return Metric::injury;
  throw ConfigError("unknown metric: " + name);
}

inline std::string method_name(Method m) {
  return m == Method::crude ? "crude" : "importance";
}

// What one episode contributed, reduced to the fields the estimators need.
// min_gap / min_ttc grade near-misses so the proposal search can make
// progress before it has seen a single crash.
struct EpisodeOutcome {
  bool valid = true;
  bool crash = false;
  bool conflict = false;
  double injury_prob = 0.0;
  double min_gap = kInf;
  double min_ttc = kInf;
};

// Deterministic map from a sampled parameter vector to an outcome.
using EpisodeFn = std::function<EpisodeOutcome(std::span<const double>)>;

inline double metric_value(const EpisodeOutcome& o, Metric m) {
  switch (m) {
    case Metric::crash: return o.crash ? 1.0 : 0.0;
    case Metric::conflict: return o.conflict ? 1.0 : 0.0;
    case Metric::injury: return o.injury_prob;
  }
  throw DomainError("metric_value: unknown metric");
}

struct Estimate {
  Metric metric = Metric::crash;
  Method method = Method::crude;
  double p_hat = 0.0;
  double variance = 0.0;  // variance of the estimator (sample variance / n)
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  double confidence = 0.80;
  std::uint64_t n = 0;  // episodes used (invalid ones excluded)
  double ess = 0.0;
  std::uint64_t invalid_count = 0;
  std::uint64_t seed = 0;
  bool all_zero_weights = false;
  // What a plain sampler's per-sample variance would be for this metric,
  // estimated from the same weighted episodes. Basis for speed-up factors.
  double crude_variance_estimate = 0.0;
};

// Normal-approximation central interval, clamped into [0,1] and widened if
// needed so it always brackets p_hat.
inline std::pair<double, double> confidence_interval(double p_hat,
                                                     double variance,
                                                     double confidence) {
  if (!(variance >= 0.0)) {
    throw DomainError("confidence_interval: negative variance");
  }
  const double z = central_interval_z(confidence);
  const double half = z * std::sqrt(variance);
  double lo = std::clamp(p_hat - half, 0.0, 1.0);
  double hi = std::clamp(p_hat + half, 0.0, 1.0);
  lo = std::min(lo, p_hat);
  hi = std::max(hi, p_hat);
  return {lo, hi};
}

// (sum w)^2 / sum w^2; the number of unweighted samples that would carry
// the same information.
inline double effective_sample_size(std::span<const double> weights) {
  double sw = 0.0, sw2 = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw DomainError("effective_sample_size: weights must be finite, >= 0");
    }
    sw += w;
    sw2 += w * w;
  }
  if (!(sw2 > 0.0)) {
    throw DomainError("effective_sample_size: all weights are zero");
  }
  return sw * sw / sw2;
}

// Ratio of per-sample variances: how many plain samples one weighted sample
// is worth. Equal variances give exactly 1.
inline double acceleration_factor(double crude_per_sample_variance,
                                  double accelerated_per_sample_variance) {
  if (!(crude_per_sample_variance >= 0.0) ||
      !(accelerated_per_sample_variance >= 0.0)) {
    throw DomainError("acceleration_factor: variances must be >= 0");
  }
  if (accelerated_per_sample_variance == 0.0) {
    return crude_per_sample_variance == 0.0 ? 1.0 : kInf;
  }
  return crude_per_sample_variance / accelerated_per_sample_variance;
}

inline double per_sample_variance(const Estimate& e) {
  return e.variance * static_cast<double>(e.n);
}

inline double acceleration_factor(const Estimate& crude,
                                  const Estimate& accelerated) {
  return acceleration_factor(per_sample_variance(crude),
                             per_sample_variance(accelerated));
}

struct EpisodeRecord {
  double weight = 0.0;
  EpisodeOutcome outcome;
};

struct TraceRow {
  std::uint64_t n = 0;
  double p_hat = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
};

struct EstimatorConfig {
  double confidence = 0.80;
  int workers = 1;
  std::size_t trace_stride = 1000;  // prefix-estimate row cadence; 0 = none
};

namespace detail {

template <class Body>
void parallel_for(std::size_t n, int workers, const Body& body) {
  if (workers <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  const std::size_t nw = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
  const std::size_t chunk = (n + nw - 1) / nw;
  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(nw);
  threads.reserve(nw);
  for (std::size_t w = 0; w < nw; ++w) {
    threads.emplace_back([&, w] {
      try {
        const std::size_t lo = w * chunk;
        const std::size_t hi = std::min(n, lo + chunk);
        for (std::size_t i = lo; i < hi; ++i) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// Runs episodes [offset, offset+n) and fills records[i] in place. Optionally
// captures the sampled vectors as an n-by-k row-major matrix.
inline void run_episode_batch(const EpisodeFn& episode,
                              const VariableSet& natural,
                              const VariableSet& proposal, std::size_t n,
                              std::uint64_t master_seed, std::uint64_t domain,
                              std::uint64_t index_offset, int workers,
                              std::vector<EpisodeRecord>& records,
                              std::vector<double>* samples_out = nullptr) {
  const std::size_t k = proposal.size();
  records.resize(n);
  if (samples_out) samples_out->assign(n * k, 0.0);
  parallel_for(n, workers, [&](std::size_t i) {
    const std::uint64_t index = index_offset + i;
    RngStream rng = RngStream::derive(master_seed, domain, index);
    std::vector<double> x(k);
    double g = 1.0, f = 1.0;
    for (std::size_t j = 0; j < k; ++j) {
      x[j] = sample(proposal.dists[j], rng);
      g *= pdf(proposal.dists[j], x[j]);
      f *= pdf(natural.dists[j], x[j]);
    }
    EpisodeRecord rec;
    if (!(g > 0.0)) {
      throw EstimationError("proposal density vanished at its own sample");
    }
    rec.weight = f / g;
    rec.outcome = episode(x);
    records[i] = rec;
    if (samples_out) {
      std::copy(x.begin(), x.end(), samples_out->begin() + i * k);
    }
  });
}

struct RunningSums {
  std::uint64_t used = 0;
  std::uint64_t invalid = 0;
  double sum_y = 0.0;    // y = w * metric
  double sum_y2 = 0.0;
  double sum_w = 0.0;
  double sum_w2 = 0.0;
  double sum_wm2 = 0.0;  // w * metric^2, estimates the unweighted 2nd moment

  void add(const EpisodeRecord& rec, Metric metric) {
    if (!rec.outcome.valid) {
      ++invalid;
      return;
    }
    const double m = metric_value(rec.outcome, metric);
    const double y = rec.weight * m;
    ++used;
    sum_y += y;
    sum_y2 += y * y;
    sum_w += rec.weight;
    sum_w2 += rec.weight * rec.weight;
    sum_wm2 += rec.weight * m * m;
  }

  Estimate finish(Metric metric, Method method, double confidence,
                  std::uint64_t seed) const {
    if (used == 0) {
      throw EstimationError("estimation failed: every episode was invalid");
    }
    Estimate e;
    e.metric = metric;
    e.method = method;
    e.confidence = confidence;
    e.n = used;
    e.invalid_count = invalid;
    e.seed = seed;
    const double dn = static_cast<double>(used);
    e.p_hat = sum_y / dn;
    if (used > 1) {
      const double ss = std::max(0.0, sum_y2 - sum_y * sum_y / dn);
      e.variance = ss / (dn - 1.0) / dn;
    }
    if (sum_w2 > 0.0) {
      e.ess = sum_w * sum_w / sum_w2;
    } else {
      e.ess = 0.0;
      e.all_zero_weights = true;
    }
    std::tie(e.ci_lo, e.ci_hi) =
        confidence_interval(e.p_hat, e.variance, confidence);
    e.crude_variance_estimate =
        std::max(0.0, sum_wm2 / dn - e.p_hat * e.p_hat);
    return e;
  }
};

// Ordered reduction over records, with optional prefix-estimate trace rows
// every `stride` episodes.
inline Estimate summarize_records(std::span<const EpisodeRecord> records,
                                  Metric metric, Method method,
                                  double confidence, std::uint64_t seed,
                                  std::size_t stride = 0,
                                  std::vector<TraceRow>* trace = nullptr) {
  RunningSums sums;
  for (std::size_t i = 0; i < records.size(); ++i) {
    sums.add(records[i], metric);
    const bool at_stride = stride > 0 && ((i + 1) % stride == 0);
    const bool at_end = i + 1 == records.size();
    if (trace && (at_stride || at_end) && sums.used > 0) {
      const Estimate e = sums.finish(metric, method, confidence, seed);
      trace->push_back(TraceRow{e.n, e.p_hat, e.ci_lo, e.ci_hi});
    }
  }
  return sums.finish(metric, method, confidence, seed);
}

}  // namespace detail

// ---- Generic estimators over an episode function ------------------------

inline Estimate estimate_over_proposal(
    const EpisodeFn& episode, const VariableSet& natural,
    const VariableSet& proposal, Method method, Metric metric, std::size_t n,
    std::uint64_t master_seed, const EstimatorConfig& cfg = {},
    std::vector<TraceRow>* trace = nullptr,
    std::vector<EpisodeRecord>* records_out = nullptr) {
  if (n == 0) throw ConfigError("estimate: episode count must be > 0");
  validate(natural);
  validate(proposal);
  validate_pairing(natural, proposal);
  std::vector<EpisodeRecord> local;
  std::vector<EpisodeRecord>& records = records_out ? *records_out : local;
  detail::run_episode_batch(episode, natural, proposal, n, master_seed,
                            /*domain=*/0, /*offset=*/0, cfg.workers, records);
  return detail::summarize_records(records, metric, method, cfg.confidence,
                                   master_seed, cfg.trace_stride, trace);
}

inline Estimate crude_mc_fn(const EpisodeFn& episode,
                            const VariableSet& natural, Metric metric,
                            std::size_t n, std::uint64_t master_seed,
                            const EstimatorConfig& cfg = {},
                            std::vector<TraceRow>* trace = nullptr) {
  return estimate_over_proposal(episode, natural, natural, Method::crude,
                                metric, n, master_seed, cfg, trace);
}

inline Estimate importance_sampling_fn(const EpisodeFn& episode,
                                       const VariableSet& natural,
                                       const VariableSet& proposal,
                                       Metric metric, std::size_t n,
                                       std::uint64_t master_seed,
                                       const EstimatorConfig& cfg = {},
                                       std::vector<TraceRow>* trace = nullptr) {
  return estimate_over_proposal(episode, natural, proposal, Method::importance,
                                metric, n, master_seed, cfg, trace);
}

// Exact value of the metric's expectation when every variable is discrete.
// The joint support must stay enumerable (<= 1e6 points).
inline double enumerate_exact_fn(const EpisodeFn& episode,
                                 const VariableSet& natural, Metric metric) {
  validate(natural);
  const std::size_t k = natural.size();
  std::vector<const DiscreteEmpirical*> dists(k);
  double total_points = 1.0;
  for (std::size_t j = 0; j < k; ++j) {
    dists[j] = std::get_if<DiscreteEmpirical>(&natural.dists[j]);
    if (!dists[j]) {
      throw DomainError(
          "enumerate_exact: every variable must be discrete_empirical");
    }
    total_points *= static_cast<double>(dists[j]->values.size());
  }
  if (total_points > 1e6) {
    throw DomainError("enumerate_exact: joint support exceeds 1e6 points");
  }
  std::vector<std::size_t> idx(k, 0);
  std::vector<double> x(k);
  double acc = 0.0;
  for (;;) {
    double mass = 1.0;
    for (std::size_t j = 0; j < k; ++j) {
      x[j] = dists[j]->values[idx[j]];
      mass *= dists[j]->probs[idx[j]];
    }
    if (mass > 0.0) {
      const EpisodeOutcome out = episode(x);
      if (!out.valid) {
        throw EstimationError(
            "enumerate_exact: encountered an invalid episode point");
      }
      acc += mass * metric_value(out, metric);
    }
    std::size_t j = 0;
    for (; j < k; ++j) {
      if (++idx[j] < dists[j]->values.size()) break;
      idx[j] = 0;
    }
    if (j == k) break;
  }
  return acc;
}

// ---- Cross-entropy proposal search --------------------------------------

struct CEConfig {
  int iterations = 5;
  int samples_per_iter = 2000;
  double elite_fraction = 0.1;
  double smoothing = 0.7;  // weight on the freshly fitted parameters
  // A truncated-normal proposal's sd never shrinks below this fraction of
  // the natural sd. Elite fits pressed against a truncation bound would
  // otherwise collapse and leave parts of the failure region with near-zero
  // proposal mass (unbounded weights). 0 disables.
  double sd_floor_fraction = 0.3;
  // Optional clamp on each variable's drift, expressed as bounds on the
  // equivalent exponential-tilt coefficient of the natural family.
  // Applies to families with a scalar tilt image (Exponential rate shift,
  // TruncatedNormal mean shift); others ignore it.
  std::map<std::string, std::pair<double, double>> tilt_bounds;
};

inline void validate(const CEConfig& c) {
  if (c.iterations < 1 || c.samples_per_iter < 2) {
    throw ConfigError("CEConfig: need >= 1 iteration, >= 2 samples");
  }
  if (!(c.elite_fraction > 0.0 && c.elite_fraction <= 1.0)) {
    throw ConfigError("CEConfig: elite_fraction must be in (0,1]");
  }
  if (!(c.smoothing > 0.0 && c.smoothing <= 1.0)) {
    throw ConfigError("CEConfig: smoothing must be in (0,1]");
  }
  if (!(c.sd_floor_fraction >= 0.0 && c.sd_floor_fraction < 1.0)) {
    throw ConfigError("CEConfig: sd_floor_fraction must be in [0,1)");
  }
}

struct CEDiagnostics {
  int iterations_run = 0;
  bool progressed = true;
  std::string note;
};

namespace detail {

// Severity order: crashes first, then smaller minimum gap, then smaller
// minimum time-to-contact.
inline bool more_severe(const EpisodeOutcome& a, const EpisodeOutcome& b) {
  if (a.crash != b.crash) return a.crash;
  if (a.min_gap != b.min_gap) return a.min_gap < b.min_gap;
  return a.min_ttc < b.min_ttc;
}

inline bool severity_equal(const EpisodeOutcome& a, const EpisodeOutcome& b) {
  return !more_severe(a, b) && !more_severe(b, a);
}

// Near-flat wide truncated normal standing in for an untiltable uniform so
// the search has parameters to move.
inline DistributionSpec ce_searchable(const DistributionSpec& d) {
  if (family_of(d) == Family::uniform) {
    const auto& u = std::get<Uniform>(d);
    return TruncatedNormal{0.5 * (u.lo + u.hi), 5.0 * (u.hi - u.lo), u.lo, u.hi};
  }
  return d;
}

inline double blend(double alpha, double fresh, double old) {
  return alpha * fresh + (1.0 - alpha) * old;
}

// Parameter-space smoothing toward the fresh fit, plus the optional tilt
// clamp relative to the natural distribution.
inline DistributionSpec ce_smooth(const DistributionSpec& fit,
                                  const DistributionSpec& current,
                                  const DistributionSpec& natural, double alpha,
                                  double sd_floor_fraction,
                                  const std::pair<double, double>* bounds) {
  switch (family_of(current)) {
    case Family::exponential: {
      const double rate_fit = std::get<Exponential>(fit).rate;
      const double rate_cur = std::get<Exponential>(current).rate;
      double rate = blend(alpha, rate_fit, rate_cur);
      if (bounds) {
        const double nat = std::get<Exponential>(natural).rate;
        // tilt theta maps rate -> rate - theta
        rate = std::clamp(rate, nat - bounds->second, nat - bounds->first);
      }
      if (!(rate > 0.0)) {
        throw EstimationError("proposal search drove an Exponential rate <= 0");
      }
      return Exponential{rate};
    }
    case Family::truncated_normal: {
      const auto& f = std::get<TruncatedNormal>(fit);
      const auto& c = std::get<TruncatedNormal>(current);
      TruncatedNormal out{blend(alpha, f.mean, c.mean),
                          blend(alpha, f.sd, c.sd), c.lo, c.hi};
      if (family_of(natural) == Family::truncated_normal) {
        const auto& nat = std::get<TruncatedNormal>(natural);
        out.sd = std::max(out.sd, sd_floor_fraction * nat.sd);
        if (bounds) {
          const double var = nat.sd * nat.sd;
          out.mean = std::clamp(out.mean, nat.mean + bounds->first * var,
                                nat.mean + bounds->second * var);
        }
      } else if (family_of(natural) == Family::uniform) {
        // Searchable stand-in for a uniform natural: floor against the
        // uniform's own sd, (hi-lo)/sqrt(12).
        const auto& nat = std::get<Uniform>(natural);
        out.sd = std::max(out.sd,
                          sd_floor_fraction * (nat.hi - nat.lo) / 3.4641016151377544);
      }
      return out;
    }
    case Family::pareto: {
      const auto& f = std::get<Pareto>(fit);
      const auto& c = std::get<Pareto>(current);
      return Pareto{c.scale, blend(alpha, f.shape, c.shape)};
    }
    case Family::discrete_empirical: {
      const auto& f = std::get<DiscreteEmpirical>(fit);
      const auto& c = std::get<DiscreteEmpirical>(current);
      DiscreteEmpirical out = c;
      double total = 0.0;
      for (std::size_t i = 0; i < c.values.size(); ++i) {
        double fresh = 0.0;
        for (std::size_t j = 0; j < f.values.size(); ++j) {
          if (f.values[j] == c.values[i]) {
            fresh = f.probs[j];
            break;
          }
        }
        out.probs[i] = std::max(blend(alpha, fresh, c.probs[i]), 1e-12);
        total += out.probs[i];
      }
      for (double& p : out.probs) p /= total;
      return out;
    }
    case Family::uniform:
      break;  // converted to truncated_normal before the search starts
  }
  throw DomainError("ce_smooth: unexpected family");
}

}  // namespace detail

// Iteratively refits the proposal to the most severe slice of each batch,
// weighted back to the natural measure, with parameter smoothing between
// iterations. Returns the natural model unchanged when severity cannot
// separate episodes.
inline VariableSet ce_optimize_fn(const EpisodeFn& episode,
                                  const VariableSet& natural,
                                  const CEConfig& ce, std::uint64_t master_seed,
                                  int workers = 1,
                                  CEDiagnostics* diag = nullptr) {
  validate(natural);
  validate(ce);
  const std::size_t k = natural.size();
  VariableSet proposal = natural;
  for (auto& d : proposal.dists) d = detail::ce_searchable(d);

  CEDiagnostics local_diag;
  CEDiagnostics& dg = diag ? *diag : local_diag;

  std::vector<EpisodeRecord> records;
  std::vector<double> samples;
  const std::size_t n = static_cast<std::size_t>(ce.samples_per_iter);
  for (int iter = 0; iter < ce.iterations; ++iter) {
    // Iteration t draws episode i from stream (master_seed, t + 1, i);
    // domain 0 is reserved for estimation batches.
    detail::run_episode_batch(episode, natural, proposal, n, master_seed,
                              static_cast<std::uint64_t>(iter) + 1, 0, workers,
                              records, &samples);
    dg.iterations_run = iter + 1;

    std::vector<std::size_t> order;
    order.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (records[i].outcome.valid) order.push_back(i);
    }
    if (order.empty()) {
      throw EstimationError("proposal search: every episode was invalid");
    }
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (detail::more_severe(records[a].outcome, records[b].outcome)) return true;
      if (detail::more_severe(records[b].outcome, records[a].outcome)) return false;
      return a < b;
    });
    if (detail::severity_equal(records[order.front()].outcome,
                               records[order.back()].outcome)) {
      dg.progressed = false;
      dg.note = "no severity separation; returning the natural model";
      return natural;
    }

    const std::size_t elite_count = std::max<std::size_t>(
        1, static_cast<std::size_t>(
               std::ceil(ce.elite_fraction * static_cast<double>(order.size()))));
    std::vector<double> elite_w(elite_count);
    for (std::size_t e = 0; e < elite_count; ++e) {
      const std::size_t i = order[e];
      elite_w[e] = likelihood_ratio(
          std::span<const double>(samples.data() + i * k, k), natural, proposal);
    }

    std::vector<double> column(elite_count);
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t e = 0; e < elite_count; ++e) {
        column[e] = samples[order[e] * k + j];
      }
      FitOptions opt;
      const Family fam = family_of(proposal.dists[j]);
      const std::pair<double, double>* bounds = nullptr;
      if (auto it = ce.tilt_bounds.find(natural.names[j]);
          it != ce.tilt_bounds.end()) {
        bounds = &it->second;
      }
      try {
        if (fam == Family::truncated_normal) {
          const auto& tn = std::get<TruncatedNormal>(proposal.dists[j]);
          opt.lo = tn.lo;
          opt.hi = tn.hi;
        } else if (fam == Family::pareto) {
          opt.scale = std::get<Pareto>(proposal.dists[j]).scale;
        }
        const DistributionSpec fit =
            fit_mle_weighted(fam, column, elite_w, opt);
        proposal.dists[j] = detail::ce_smooth(fit, proposal.dists[j],
                                              natural.dists[j], ce.smoothing,
                                              ce.sd_floor_fraction, bounds);
      } catch (const FitError&) {
        // Degenerate elite column: keep the current proposal for this
        // variable and continue with the others.
        dg.note = "kept variable " + natural.names[j] +
                  " unchanged after a degenerate elite fit";
      }
    }
    validate_pairing(natural, proposal);
  }
  return proposal;
}

// ---- Sequential stopping rule -------------------------------------------

struct StoppingRule {
  double confidence = 0.80;
  double max_relative_half_width = 0.2;
  std::size_t batch = 1000;
  std::size_t max_episodes = 100000;
};

inline void validate(const StoppingRule& r) {
  if (!(r.confidence > 0.0 && r.confidence < 1.0)) {
    throw ConfigError("StoppingRule: confidence must be in (0,1)");
  }
  if (!(r.max_relative_half_width > 0.0)) {
    throw ConfigError("StoppingRule: max_relative_half_width must be > 0");
  }
  if (r.batch == 0 || r.max_episodes == 0) {
    throw ConfigError("StoppingRule: batch and max_episodes must be > 0");
  }
}

struct ConvergenceOutcome {
  Estimate estimate;
  bool converged = false;
  std::size_t batches = 0;
  std::vector<TraceRow> trace;
};

// Grows the sample in batches until the interval's relative half-width
// drops to the target, or the episode cap is reached (reported, never
// silently absorbed). estimate_prefix(n) must return the estimate over
// episodes [0, n) of a fixed indexed stream, so growing the sample never
// changes already-drawn episodes.
inline ConvergenceOutcome run_until_converged(
    const std::function<Estimate(std::size_t)>& estimate_prefix,
    const StoppingRule& rule) {
  validate(rule);
  ConvergenceOutcome out;
  std::size_t n = 0;
  while (n < rule.max_episodes) {
    n = std::min(n + rule.batch, rule.max_episodes);
    out.estimate = estimate_prefix(n);
    ++out.batches;
    out.trace.push_back(TraceRow{out.estimate.n, out.estimate.p_hat,
                                 out.estimate.ci_lo, out.estimate.ci_hi});
    if (out.estimate.p_hat > 0.0) {
      const double half = 0.5 * (out.estimate.ci_hi - out.estimate.ci_lo);
      if (half <= rule.max_relative_half_width * out.estimate.p_hat) {
        out.converged = true;
        break;
      }
    }
  }
  return out;
}

// Incremental prefix estimator: extend_to(n) runs only the episodes not yet
// drawn and re-reduces in index order. Records are kept for later
// summaries (other metrics, weight histograms).
class EstimationSession {
 public:
  EstimationSession(EpisodeFn episode, VariableSet natural,
                    VariableSet proposal, Method method, Metric metric,
                    std::uint64_t master_seed, EstimatorConfig cfg = {})
      : episode_(std::move(episode)),
        natural_(std::move(natural)),
        proposal_(std::move(proposal)),
        method_(method),
        metric_(metric),
        master_seed_(master_seed),
        cfg_(std::move(cfg)) {
    validate(natural_);
    validate(proposal_);
    validate_pairing(natural_, proposal_);
  }

  Estimate extend_to(std::size_t n) {
    if (n <= records_.size()) {
      return detail::summarize_records(
          std::span<const EpisodeRecord>(records_.data(), n), metric_, method_,
          cfg_.confidence, master_seed_);
    }
    const std::size_t old = records_.size();
    std::vector<EpisodeRecord> fresh;
    detail::run_episode_batch(episode_, natural_, proposal_, n - old,
                              master_seed_, 0, old, cfg_.workers, fresh);
    records_.insert(records_.end(), fresh.begin(), fresh.end());
    return detail::summarize_records(records_, metric_, method_,
                                     cfg_.confidence, master_seed_);
  }

  Estimate summarize(Metric metric, std::size_t trace_stride = 0,
                     std::vector<TraceRow>* trace = nullptr) const {
    return detail::summarize_records(records_, metric, method_,
                                     cfg_.confidence, master_seed_,
                                     trace_stride, trace);
  }

  const std::vector<EpisodeRecord>& records() const { return records_; }

 private:
  EpisodeFn episode_;
  VariableSet natural_;
  VariableSet proposal_;
  Method method_;
  Metric metric_;
  std::uint64_t master_seed_;
  EstimatorConfig cfg_;
  std::vector<EpisodeRecord> records_;
};

// ---- Simulator-backed entry points --------------------------------------

// Adapts the episode engine to the estimator interface. Scene errors mark
// the episode invalid (counted); policy faults propagate.
inline EpisodeFn make_sim_episode_fn(const EgoPolicy& policy,
                                     const SimConfig& config,
                                     ScenarioTag scenario) {
  validate(config);
  const EgoPolicy* p = &policy;
  return [p, config, scenario](std::span<const double> x) -> EpisodeOutcome {
    EpisodeParams params;
    params.scenario = scenario;
    params.values.assign(x.begin(), x.end());
    EpisodeOutcome out;
    try {
      const EpisodeResult r = run_episode(*p, params, config);
      out.crash = is_crash(r.outcome);
      out.conflict = is_conflict(r.outcome);
      out.injury_prob = r.injury_prob;
      out.min_gap = r.min_gap;
      out.min_ttc = r.min_ttc;
    } catch (const SceneError&) {
      out.valid = false;
    }
    return out;
  };
}

inline Estimate crude_mc(const EgoPolicy& policy, const ThreatModel& natural,
                         const SimConfig& config, Metric metric, std::size_t n,
                         std::uint64_t master_seed,
                         const EstimatorConfig& cfg = {},
                         std::vector<TraceRow>* trace = nullptr) {
  validate(natural);
  return crude_mc_fn(make_sim_episode_fn(policy, config, natural.scenario),
                     natural.vars, metric, n, master_seed, cfg, trace);
}

inline Estimate importance_sampling(const EgoPolicy& policy,
                                    const ThreatModel& natural,
                                    const ThreatModel& proposal,
                                    const SimConfig& config, Metric metric,
                                    std::size_t n, std::uint64_t master_seed,
                                    const EstimatorConfig& cfg = {},
                                    std::vector<TraceRow>* trace = nullptr) {
  validate(natural);
  validate_pairing(natural, proposal);
  return importance_sampling_fn(
      make_sim_episode_fn(policy, config, natural.scenario), natural.vars,
      proposal.vars, metric, n, master_seed, cfg, trace);
}

inline ThreatModel ce_optimize(const EgoPolicy& policy,
                               const ThreatModel& natural, const CEConfig& ce,
                               const SimConfig& config,
                               std::uint64_t master_seed, int workers = 1,
                               CEDiagnostics* diag = nullptr) {
  validate(natural);
  ThreatModel out;
  out.scenario = natural.scenario;
  out.vars =
      ce_optimize_fn(make_sim_episode_fn(policy, config, natural.scenario),
                     natural.vars, ce, master_seed, workers, diag);
  return out;
}

inline double enumerate_exact(const EgoPolicy& policy,
                              const ThreatModel& natural,
                              const SimConfig& config, Metric metric) {
  validate(natural);
  return enumerate_exact_fn(
      make_sim_episode_fn(policy, config, natural.scenario), natural.vars,
      metric);
}

}  // namespace accel_eval
