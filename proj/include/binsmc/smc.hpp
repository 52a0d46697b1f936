#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "binary_vector.hpp"
#include "binmodel.hpp"
#include "parallel.hpp"
#include "posterior.hpp"
#include "rng.hpp"

namespace binsmc {

class SmcError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Weights

/// (sum u)^2 / (n sum u^2) with u_k = exp(alpha * log_increment_k), in log space.
inline double effective_sample_size(double alpha, std::span<const double> log_increment) {
  const std::size_t n = log_increment.size();
  if (n == 0) throw SmcError("empty particle system");
  double mx = neg_inf;
  for (double v : log_increment)
    if (v != neg_inf) mx = std::max(mx, alpha * v);
  if (mx == neg_inf) throw SmcError("all particles have zero mass");
  if (alpha == 0.0) {
    std::size_t alive = 0;
    for (double v : log_increment) alive += v != neg_inf;
    return static_cast<double>(alive) / static_cast<double>(n);
  }
  double s1 = 0.0, s2 = 0.0;
  for (double v : log_increment) {
    if (v == neg_inf) continue;
    const double u = std::exp(alpha * v - mx);
    s1 += u;
    s2 += u * u;
  }
  return s1 * s1 / (static_cast<double>(n) * s2);
}

/// Normalized w_k proportional to exp(alpha * log_increment_k); -inf gets exactly 0.
inline std::vector<double> importance_weights(double alpha, std::span<const double> log_increment) {
  const std::size_t n = log_increment.size();
  if (n == 0) throw SmcError("empty particle system");
  double mx = neg_inf;
  for (double v : log_increment)
    if (v != neg_inf) mx = std::max(mx, alpha * v);
  if (mx == neg_inf) throw SmcError("all particles have zero mass");
  std::vector<double> w(n, 0.0);
  double s = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (log_increment[k] == neg_inf) continue;
    w[k] = alpha == 0.0 ? 1.0 : std::exp(alpha * log_increment[k] - mx);
    s += w[k];
  }
  for (auto& v : w) v /= s;
  return w;
}

/// log(n^-1 sum_k exp(alpha * log_increment_k)).
inline double log_mean_weight(double alpha, std::span<const double> log_increment) {
  std::vector<double> a(log_increment.size());
  for (std::size_t k = 0; k < a.size(); ++k)
    a[k] = log_increment[k] == neg_inf ? neg_inf : (alpha == 0.0 ? 0.0 : alpha * log_increment[k]);
  return log_sum_exp(a) - std::log(static_cast<double>(a.size()));
}

/// Bisection for the increment alpha whose ESS hits `target_ess`, capped at 1 - rho.
/// The bracket shrinks until its width is below `tol` times its lower end, so
/// steep increments (alpha far below `tol`) are still resolved.
inline double find_step_length(double rho, std::span<const double> log_increment, double target_ess,
                               double tol = 1e-4) {
  if (!(rho >= 0.0 && rho < 1.0)) throw SmcError("step search needs 0 <= rho < 1");
  const double remaining = 1.0 - rho;
  if (effective_sample_size(remaining, log_increment) >= target_ess) return remaining;
  double lo = 0.0, hi = 1.05 - rho, alpha = 0.05;
  // Until some alpha meets the target the width is compared with a tiny floor.
  auto wide = [&] { return std::abs(hi - lo) >= tol * (lo > 0.0 ? std::min(lo, 1.0) : 1e-12); };
  while (wide() && lo <= remaining) {
    if (effective_sample_size(alpha, log_increment) < target_ess) {
      hi = alpha;
      alpha = 0.5 * (alpha + lo);
    } else {
      lo = alpha;
      alpha = 0.5 * (alpha + hi);
    }
  }
  return std::min(alpha, remaining);
}

// ---------------------------------------------------------------------------
// Resampling and diversity

/// Systematic resampling: one uniform, n equally spaced pointers into the
/// cumulative n*w. Offspring of a particle are contiguous in the output.
inline std::vector<std::size_t> resample_systematic_indices(std::span<const double> w, Rng& rng) {
  const std::size_t n = w.size();
  if (n == 0) return {};
  std::vector<std::size_t> idx(n);
  const double nd = static_cast<double>(n);
  double u = rng.uniform_pos();
  double c = nd * w[0];
  std::size_t j = 0;
  for (std::size_t k = 0; k < n; ++k) {
    while (c < u && j + 1 < n) {
      ++j;
      c += nd * w[j];
    }
    idx[k] = j;
    u += 1.0;
  }
  return idx;
}

inline std::vector<BinaryVector> resample_systematic(std::span<const double> w, std::span<const BinaryVector> X,
                                                     Rng& rng) {
  if (w.size() != X.size()) throw SmcError("weights and particles differ in length");
  const auto idx = resample_systematic_indices(w, rng);
  std::vector<BinaryVector> out;
  out.reserve(idx.size());
  for (auto k : idx) out.push_back(X[k]);
  return out;
}

/// Proportion of distinct particles.
inline double particle_diversity(std::span<const BinaryVector> X) {
  if (X.empty()) return 0.0;
  std::unordered_set<BinaryVector, BinaryVectorHash> seen(X.begin(), X.end());
  return static_cast<double>(seen.size()) / static_cast<double>(X.size());
}

// ---------------------------------------------------------------------------
// Independent Metropolis-Hastings

struct MhOutcome {
  bool accepted = false;
  double log_ratio = 0.0;
};

/// Accepts y with min(1, exp(log_target_y - log_target_x + log_q_x - log_q_y)).
inline MhOutcome mh_independent_step(double log_target_x, double log_q_x, double log_target_y, double log_q_y,
                                     Rng& rng) {
  MhOutcome out;
  if (log_target_y == neg_inf) {
    out.log_ratio = neg_inf;
    return out;
  }
  out.log_ratio = (log_target_y - log_target_x) + (log_q_x - log_q_y);
  out.accepted = out.log_ratio >= 0.0 || std::log(rng.uniform_pos()) < out.log_ratio;
  return out;
}

// ---------------------------------------------------------------------------
// Particle system

/// Particles with cached scores. The tempered target at exponent rho is
/// reference^(1 - rho) * pi^rho, so the incremental log weight of a particle is
/// log_pi - log_ref.
struct ParticleSystem {
  std::vector<BinaryVector> X;
  std::vector<double> w;
  std::vector<double> log_pi;
  std::vector<double> log_ref;
  std::vector<double> log_q;
  double rho = 0.0;

  std::size_t size() const noexcept { return X.size(); }

  double increment(std::size_t k) const noexcept {
    return log_pi[k] == neg_inf ? neg_inf : log_pi[k] - log_ref[k];
  }
  std::vector<double> increments() const {
    std::vector<double> out(X.size());
    for (std::size_t k = 0; k < X.size(); ++k) out[k] = increment(k);
    return out;
  }
  /// log of reference^(1 - rho) * pi^rho at particle k.
  double log_tempered(std::size_t k) const noexcept { return tempered(log_pi[k], log_ref[k], rho); }

  static double tempered(double log_pi, double log_ref, double rho) noexcept {
    if (log_pi == neg_inf || log_ref == neg_inf) return neg_inf;
    return log_ref + rho * (log_pi - log_ref);
  }

  std::vector<double> weighted_mean() const {
    const std::size_t d = X.empty() ? 0 : X.front().size();
    std::vector<double> m(d, 0.0);
    for (std::size_t k = 0; k < X.size(); ++k)
      for (std::size_t i = 0; i < d; ++i)
        if (X[k][i]) m[i] += w[k];
    return m;
  }
};

struct SweepRecord {
  double acceptance = 0.0;
  double diversity = 0.0;
};

struct StepRecord {
  double rho = 0.0;    // exponent reached by this step
  double alpha = 0.0;
  double ess = 1.0;
  double log_mean_weight = 0.0;
  double diversity_resampled = 1.0;  // after resampling, before moves
  std::vector<SweepRecord> sweeps;
  std::uint64_t evaluations = 0;     // cumulative
};

struct RunTrace {
  std::vector<StepRecord> steps;
  std::uint64_t evaluations = 0;
  std::uint64_t proposed = 0;
  std::uint64_t accepted = 0;
  double wall_seconds = 0.0;
  bool completed = false;

  double acceptance_rate() const {
    return proposed == 0 ? 0.0 : static_cast<double>(accepted) / static_cast<double>(proposed);
  }
  double alpha_sum() const {
    double s = 0.0;
    for (const auto& st : steps) s += st.alpha;
    return s;
  }
};

/// Sum over reweightings of the log mean incremental weight: an estimate of
/// log sum_x pi(x) (the reference law is normalized).
inline double log_evidence_estimate(const RunTrace& trace) {
  if (!trace.completed) throw SmcError("log evidence needs a completed run");
  double s = 0.0;
  for (const auto& st : trace.steps) s += st.log_mean_weight;
  return s;
}

struct SmcConfig {
  std::size_t n = 15000;
  double target_ess = 0.9;
  double bisect_tol = 1e-4;
  double diversity_delta = 0.02;  // stop moving once a sweep changes diversity by less
  double diversity_high = 0.95;   // or once diversity exceeds this
  std::size_t max_sweeps = 1000;
  std::uint64_t budget = 2'500'000;
  ProposalOptions proposal{};
  std::uint64_t seed = 1;
  std::size_t jobs = 1;
  /// Called after each completed step with the current system.
  std::function<void(const ParticleSystem&, const StepRecord&)> observer;

  void validate() const {
    if (n < 2) throw SmcError("need at least two particles");
    if (!(target_ess > 0.0 && target_ess < 1.0)) throw SmcError("target ESS must lie in (0,1)");
    if (!(bisect_tol > 0.0)) throw SmcError("bisection tolerance must be positive");
    if (!(diversity_delta > 0.0) || !(diversity_high > 0.0 && diversity_high <= 1.0))
      throw SmcError("invalid diversity stopping constants");
    if (budget < n) throw SmcError("evaluation budget is smaller than the particle count");
  }
};

struct SmcResult {
  std::vector<double> marginals;
  double log_evidence = neg_inf;  // -inf when the run did not complete
  RunTrace trace;
  ParticleSystem system;
};

namespace detail {

/// Recomputes log q for every particle; contiguous copies are evaluated once.
inline void refresh_proposal_cache(ParticleSystem& ps, const Proposal& q) {
  for (std::size_t k = 0; k < ps.size(); ++k)
    ps.log_q[k] = (k > 0 && ps.X[k] == ps.X[k - 1]) ? ps.log_q[k - 1] : q.log_density(ps.X[k]);
}

}  // namespace detail

/// Sweeps of the independent MH kernel at exponent ps.rho until diversity
/// settles. Returns false when the budget would be exceeded by another sweep.
template <Target T>
bool move(ParticleSystem& ps, const T& target, const Proposal& q, const SmcConfig& cfg, std::uint64_t step,
          StepRecord& record, RunTrace& trace) {
  const std::size_t n = ps.size();
  std::vector<std::uint8_t> acc(n);
  double zeta_prev = particle_diversity(ps.X);
  record.diversity_resampled = zeta_prev;
  for (std::size_t sweep = 0; sweep < cfg.max_sweeps; ++sweep) {
    if (trace.evaluations + n > cfg.budget) return false;
    parallel_for(n, cfg.jobs, [&](std::size_t k) {
      Rng rng(derive_seed(cfg.seed, {1, step, sweep, k}));
      auto y = q.sample_and_evaluate(rng);
      const double lp = target.log_score(y.x);
      const double lr = target.reference().log_density(y.x);
      const auto out = mh_independent_step(ps.log_tempered(k), ps.log_q[k],
                                           ParticleSystem::tempered(lp, lr, ps.rho), y.log_q, rng);
      acc[k] = out.accepted;
      if (out.accepted) {
        ps.X[k] = std::move(y.x);
        ps.log_pi[k] = lp;
        ps.log_ref[k] = lr;
        ps.log_q[k] = y.log_q;
      }
    });
    std::size_t a = 0;
    for (auto v : acc) a += v;
    trace.evaluations += n;
    trace.proposed += n;
    trace.accepted += a;
    const double zeta = particle_diversity(ps.X);
    record.sweeps.push_back({static_cast<double>(a) / static_cast<double>(n), zeta});
    if (std::abs(zeta - zeta_prev) < cfg.diversity_delta || zeta > cfg.diversity_high) break;
    zeta_prev = zeta;
  }
  return true;
}

/// Resample-move sampler over a tempered sequence from the reference law to the target.
template <Target T>
SmcResult run_resample_move(const T& target, const SmcConfig& cfg) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t n = cfg.n;
  const auto& ref = target.reference();
  SmcResult res;
  auto& ps = res.system;
  auto& trace = res.trace;
  ps.X.resize(n);
  ps.w.assign(n, 1.0 / static_cast<double>(n));
  ps.log_pi.assign(n, 0.0);
  ps.log_ref.assign(n, 0.0);
  ps.log_q.assign(n, 0.0);

  parallel_for(n, cfg.jobs, [&](std::size_t k) {
    Rng rng(derive_seed(cfg.seed, {0, k}));
    ps.X[k] = ref.sample(rng);
    ps.log_pi[k] = target.log_score(ps.X[k]);
    ps.log_ref[k] = ref.log_density(ps.X[k]);
  });
  trace.evaluations = n;

  auto reweight = [&](StepRecord& rec) {
    const auto inc = ps.increments();
    rec.alpha = find_step_length(ps.rho, inc, cfg.target_ess, cfg.bisect_tol);
    rec.ess = effective_sample_size(rec.alpha, inc);
    rec.log_mean_weight = log_mean_weight(rec.alpha, inc);
    ps.w = importance_weights(rec.alpha, inc);
    ps.rho = rec.alpha >= 1.0 - ps.rho ? 1.0 : ps.rho + rec.alpha;
    rec.rho = ps.rho;
    rec.evaluations = trace.evaluations;
  };
  auto finish = [&] {
    trace.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.marginals = ps.weighted_mean();
    if (trace.completed) res.log_evidence = log_evidence_estimate(trace);
    return res;
  };

  {
    StepRecord rec;
    rec.diversity_resampled = particle_diversity(ps.X);
    reweight(rec);
    trace.steps.push_back(rec);
    if (cfg.observer) cfg.observer(ps, trace.steps.back());
  }

  Rng resample_rng(derive_seed(cfg.seed, {2}));
  std::optional<Proposal> q;
  for (std::uint64_t step = 1; ps.rho < 1.0; ++step) {
    q = fit_proposal(WeightedSample{ps.X, ps.w}, cfg.proposal, q ? &*q : nullptr);

    const auto idx = resample_systematic_indices(ps.w, resample_rng);
    ParticleSystem next;
    next.rho = ps.rho;
    next.X.reserve(n);
    for (auto k : idx) {
      next.X.push_back(ps.X[k]);
      next.log_pi.push_back(ps.log_pi[k]);
      next.log_ref.push_back(ps.log_ref[k]);
    }
    next.w.assign(n, 1.0 / static_cast<double>(n));
    next.log_q.assign(n, 0.0);
    ps = std::move(next);
    detail::refresh_proposal_cache(ps, *q);

    StepRecord rec;
    if (!move(ps, target, *q, cfg, step, rec, trace)) {
      trace.steps.push_back(std::move(rec));
      return finish();
    }
    reweight(rec);
    trace.steps.push_back(std::move(rec));
    if (cfg.observer) cfg.observer(ps, trace.steps.back());
  }
  trace.completed = true;
  return finish();
}

}  // namespace binsmc
