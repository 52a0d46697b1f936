#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "binary_vector.hpp"
#include "binmodel.hpp"
#include "posterior.hpp"
#include "rng.hpp"

namespace binsmc {

class McmcError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Kernel { gibbs, mmg, amg };

inline std::string to_string(Kernel k) {
  switch (k) {
    case Kernel::gibbs: return "gibbs";
    case Kernel::mmg: return "mmg";
    case Kernel::amg: return "amg";
  }
  return "?";
}

struct ChainState {
  BinaryVector x;
  double log_pi = neg_inf;
  std::uint64_t t = 0;
  std::uint64_t moves = 0;
  std::uint64_t evals = 0;
};

/// Running mean and precision used by the adaptive kernel.
struct AdaptiveStats {
  std::vector<double> psi;
  Eigen::MatrixXd W;
  double delta = 0.01;
  std::uint64_t updates = 0;

  static AdaptiveStats neutral(std::size_t d, double delta = 0.01) {
    AdaptiveStats s;
    s.psi.assign(d, 0.5);
    s.W = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    s.delta = delta;
    return s;
  }
};

/// Duration-weighted first and second moments of a trajectory.
class TrajectoryMoments {
 public:
  explicit TrajectoryMoments(std::size_t d = 0)
      : sum_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d))),
        cross_(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d))) {}

  /// State x held for `duration` steps.
  void add(const BinaryVector& x, double duration) {
    if (duration <= 0.0) return;
    weight_ += duration;
    const auto on = x.ones();
    for (std::size_t a = 0; a < on.size(); ++a) {
      const auto i = static_cast<Eigen::Index>(on[a]);
      sum_(i) += duration;
      for (std::size_t b = 0; b <= a; ++b) cross_(i, static_cast<Eigen::Index>(on[b])) += duration;
    }
  }

  double weight() const noexcept { return weight_; }
  Eigen::VectorXd mean() const { return weight_ > 0.0 ? Eigen::VectorXd(sum_ / weight_) : Eigen::VectorXd(sum_); }

  Eigen::MatrixXd covariance() const {
    const Eigen::VectorXd mu = mean();
    Eigen::MatrixXd c = cross_.selfadjointView<Eigen::Lower>();
    if (weight_ > 0.0) c /= weight_;
    c -= mu * mu.transpose();
    return c;
  }

 private:
  Eigen::VectorXd sum_;
  Eigen::MatrixXd cross_;
  double weight_ = 0.0;
};

/// psi = trajectory mean, W = (covariance + lambda I)^-1.
inline AdaptiveStats estimate_adaptive_stats(const TrajectoryMoments& tm, double lambda, double delta) {
  AdaptiveStats s;
  const Eigen::VectorXd mu = tm.mean();
  s.psi.assign(mu.data(), mu.data() + mu.size());
  Eigen::MatrixXd c = tm.covariance();
  c.diagonal().array() += lambda;
  Eigen::LLT<Eigen::MatrixXd> llt(c);
  if (llt.info() != Eigen::Success) throw McmcError("regularized covariance is not positive definite");
  s.W = llt.solve(Eigen::MatrixXd::Identity(c.rows(), c.cols()));
  s.W = 0.5 * (s.W + s.W.transpose()).eval();
  s.delta = delta;
  return s;
}

// ---------------------------------------------------------------------------
// Component proposal probabilities

/// pi(x_i = 1 | x_-i) from the two log scores.
inline double conditional_prob_from_scores(double log_pi_one, double log_pi_zero) {
  if (log_pi_one == neg_inf && log_pi_zero == neg_inf) throw McmcError("both values of the component are infeasible");
  if (log_pi_one == neg_inf) return 0.0;
  if (log_pi_zero == neg_inf) return 1.0;
  return logistic(log_pi_one - log_pi_zero);
}

/// Full conditional of component i. Costs two score evaluations; the chain uses
/// its cache for one of them.
template <Target T>
double conditional_prob_gibbs(const T& target, BinaryVector x, std::size_t i) {
  x.set(i, true);
  const double one = target.log_score(x);
  x.set(i, false);
  const double zero = target.log_score(x);
  return conditional_prob_from_scores(one, zero);
}

inline double conditional_prob_mmg(const BinaryVector& x, std::size_t i) { return x[i] ? 0.0 : 1.0; }

/// Linear predictor of x_i given x_-i under a Gaussian with mean psi and precision W,
/// clamped to [delta, 1 - delta].
inline double conditional_prob_amg(const AdaptiveStats& s, const BinaryVector& x, std::size_t i) {
  const auto ii = static_cast<Eigen::Index>(i);
  const double wii = s.W(ii, ii);
  if (wii == 0.0) return 0.5;
  double acc = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    if (j == i) continue;
    acc += s.W(ii, static_cast<Eigen::Index>(j)) * ((x[j] ? 1.0 : 0.0) - s.psi[j]);
  }
  return std::clamp(s.psi[i] - acc / wii, s.delta, 1.0 - s.delta);
}

/// k on {1..d} with P(k) proportional to (1 - 1/kstar)^(k-1).
inline std::size_t sample_block_size(double kstar, std::size_t d, Rng& rng) {
  if (!(kstar >= 1.0)) throw McmcError("kstar must be at least 1");
  if (d <= 1) return 1;
  const double q = 1.0 - 1.0 / kstar;
  if (q <= 0.0) return 1;
  const double mass = -std::expm1(static_cast<double>(d) * std::log(q));  // 1 - q^d
  const double u = rng.uniform_pos();
  const double k = std::ceil(std::log1p(-u * mass) / std::log(q));
  return static_cast<std::size_t>(std::clamp(k, 1.0, static_cast<double>(d)));
}

// ---------------------------------------------------------------------------
// Chain

struct ChainConfig {
  Kernel kernel = Kernel::mmg;
  double kstar = 2.0;
  std::uint64_t budget = 2'500'000;   // score evaluations
  std::uint64_t burn_in = 25'000;     // steps
  std::uint64_t pre_adapt = 250'000;  // post-burn-in steps before the first adaptive update
  std::uint64_t adapt_interval = 200'000;
  std::uint64_t adapt_stop = std::numeric_limits<std::uint64_t>::max();  // no updates after this step
  double delta = 0.01;
  double lambda = 0.01;
  std::uint64_t seed = 1;
  /// Called on the initial state and after every accepted move.
  std::function<void(const ChainState&)> observer;
};

struct ChainTrace {
  std::uint64_t evaluations = 0;
  std::uint64_t steps = 0;
  std::uint64_t moves = 0;
  std::uint64_t adaptations = 0;
  double wall_seconds = 0.0;

  double acceptance_rate() const {
    return evaluations == 0 ? 0.0 : static_cast<double>(moves) / static_cast<double>(evaluations);
  }
};

struct ChainResult {
  std::vector<double> marginals;
  ChainTrace trace;
  ChainState state;
};

/// Workspace for one chain.
class MgSampler {
 public:
  MgSampler(std::size_t d, Kernel kernel, double kstar) : kernel_(kernel), kstar_(kstar), perm_(d) {
    std::iota(perm_.begin(), perm_.end(), std::size_t{0});
  }

  /// One step of the metropolised Gibbs kernel. `stats` is used only by the
  /// adaptive kernel. Returns true when the state moved.
  template <Target T>
  bool step(const T& target, ChainState& s, Rng& rng, const AdaptiveStats* stats = nullptr) {
    const std::size_t d = s.x.size();
    ++s.t;
    if (kernel_ == Kernel::gibbs) return gibbs_step(target, s, rng);

    const std::size_t k = sample_block_size(kstar_, d, rng);
    // Partial Fisher-Yates: perm_[0..k) becomes a uniform k-subset.
    for (std::size_t a = 0; a < k; ++a) std::swap(perm_[a], perm_[a + rng.below(d - a)]);

    BinaryVector y = s.x;
    double log_q_ratio = 0.0;  // log q(x | y) - log q(y | x)
    if (kernel_ == Kernel::mmg) {
      for (std::size_t a = 0; a < k; ++a) y.flip(perm_[a]);
    } else {
      if (!stats) throw McmcError("adaptive kernel needs statistics");
      for (std::size_t a = 0; a < k; ++a) {
        const std::size_t i = perm_[a];
        const double p = conditional_prob_amg(*stats, s.x, i);
        const bool bit = rng.uniform() < p;
        y.set(i, bit);
        log_q_ratio -= bit ? std::log(p) : std::log1p(-p);
      }
      if (y == s.x) return false;
      for (std::size_t a = 0; a < k; ++a) {
        const std::size_t i = perm_[a];
        const double p = conditional_prob_amg(*stats, y, i);
        log_q_ratio += s.x[i] ? std::log(p) : std::log1p(-p);
      }
    }
    const double lp = target.log_score(y);
    ++s.evals;
    if (lp == neg_inf) return false;
    const double log_ratio = lp - s.log_pi + log_q_ratio;
    if (log_ratio >= 0.0 || std::log(rng.uniform_pos()) < log_ratio) {
      s.x = std::move(y);
      s.log_pi = lp;
      ++s.moves;
      return true;
    }
    return false;
  }

 private:
  template <Target T>
  bool gibbs_step(const T& target, ChainState& s, Rng& rng) {
    const std::size_t i = rng.below(s.x.size());
    BinaryVector y = s.x;
    y.flip(i);
    const double lp_flip = target.log_score(y);
    ++s.evals;
    const double p_one = s.x[i] ? conditional_prob_from_scores(s.log_pi, lp_flip)
                                : conditional_prob_from_scores(lp_flip, s.log_pi);
    const bool bit = rng.uniform() < p_one;
    if (bit == s.x[i]) return false;
    s.x = std::move(y);
    s.log_pi = lp_flip;
    ++s.moves;
    return true;
  }

  Kernel kernel_;
  double kstar_;
  std::vector<std::size_t> perm_;
};

/// Draws a feasible starting state from the reference law.
template <Target T>
ChainState initial_state(const T& target, Rng& rng, std::size_t max_tries = 1000) {
  ChainState s;
  for (std::size_t attempt = 0; attempt < max_tries; ++attempt) {
    s.x = target.reference().sample(rng);
    s.log_pi = target.log_score(s.x);
    ++s.evals;
    if (s.log_pi != neg_inf) return s;
  }
  throw McmcError("no feasible starting state found");
}

/// Runs a chain until `budget` score evaluations and returns the post-burn-in
/// ergodic average. The adaptive kernel moves with the flip kernel until the
/// first scheduled update.
template <Target T>
ChainResult run_chain(const T& target, const ChainConfig& cfg) {
  if (!(cfg.kstar >= 1.0)) throw McmcError("kstar must be at least 1");
  if (!(cfg.delta > 0.0 && cfg.delta < 0.5)) throw McmcError("delta must lie in (0, 1/2)");
  if (!(cfg.lambda >= 0.0)) throw McmcError("lambda must be nonnegative");
  if (cfg.adapt_interval == 0) throw McmcError("adaptation interval must be positive");
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t d = target.dim();
  Rng rng(derive_seed(cfg.seed, {3}));
  ChainResult res;
  ChainState& s = res.state;
  s = initial_state(target, rng);
  if (cfg.observer) cfg.observer(s);

  const bool adaptive = cfg.kernel == Kernel::amg;
  MgSampler flip(d, Kernel::mmg, cfg.kstar);
  MgSampler main(d, cfg.kernel, cfg.kstar);
  AdaptiveStats stats;
  bool adapted = false;
  std::uint64_t next_update = cfg.burn_in + cfg.pre_adapt;

  // Post-burn-in states are accumulated with their holding time when they are left.
  TrajectoryMoments traj(adaptive ? d : 0);
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
  double held = 0.0;
  auto flush = [&] {
    if (held <= 0.0) return;
    for (auto i : s.x.ones()) sum(static_cast<Eigen::Index>(i)) += held;
    if (adaptive) traj.add(s.x, held);
    held = 0.0;
  };
  double counted = 0.0;

  while (s.evals < cfg.budget) {
    if (adaptive && s.t == next_update) {
      if (s.t <= cfg.adapt_stop) {
        flush();
        stats = estimate_adaptive_stats(traj, cfg.lambda, cfg.delta);
        adapted = true;
        ++res.trace.adaptations;
      }
      next_update += cfg.adapt_interval;
    }
    const bool use_main = !adaptive || adapted;
    const bool post_burn = s.t >= cfg.burn_in;
    BinaryVector before;
    if (post_burn) before = s.x;
    const bool moved_flag =
        use_main ? main.step(target, s, rng, adapted ? &stats : nullptr) : flip.step(target, s, rng);
    if (post_burn && moved_flag) {
      // `before` was held for the accumulated duration; swap in to flush it.
      std::swap(s.x, before);
      flush();
      std::swap(s.x, before);
    }
    if (s.t > cfg.burn_in) {
      held += 1.0;
      counted += 1.0;
    }
    if (moved_flag && cfg.observer) cfg.observer(s);
  }
  flush();
  res.marginals.assign(d, 0.0);
  if (counted > 0.0)
    for (std::size_t i = 0; i < d; ++i) res.marginals[i] = sum(static_cast<Eigen::Index>(i)) / counted;
  res.trace.evaluations = s.evals;
  res.trace.steps = s.t;
  res.trace.moves = s.moves;
  res.trace.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

}  // namespace binsmc
