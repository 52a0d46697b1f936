#include <gtest/gtest.h>

#include <binsmc/data.hpp>
#include <binsmc/mcmc.hpp>
#include <binsmc/posterior.hpp>

#include <cmath>
#include <map>

using namespace binsmc;

namespace {

struct TableTarget {
  std::vector<double> table;
  std::size_t d;
  ReferenceLaw law;
  TableTarget(std::vector<double> t, std::size_t dim, ReferenceLaw l = {})
      : table(std::move(t)), d(dim), law(l.dim() == dim ? std::move(l) : ReferenceLaw(dim)) {}
  std::size_t dim() const { return d; }
  double log_score(const BinaryVector& g) const { return table[g.code()]; }
  const ReferenceLaw& reference() const { return law; }
};

std::vector<double> random_table(std::size_t d, std::uint64_t seed, double scale = 3.0) {
  Rng rng(seed);
  std::vector<double> t(std::size_t{1} << d);
  for (auto& v : t) v = scale * rng.uniform();
  return t;
}

double total_variation(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return 0.5 * s;
}

std::vector<double> normalized(const std::vector<double>& log_w) {
  const double z = log_sum_exp(log_w);
  std::vector<double> p(log_w.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::exp(log_w[i] - z);
  return p;
}

// P(k) for k = 1..d, written out from the unnormalized geometric weights.
std::vector<double> block_size_law(double kstar, std::size_t d) {
  std::vector<double> p(d + 1, 0.0);
  double z = 0.0;
  for (std::size_t k = 1; k <= d; ++k) z += (p[k] = std::pow(1.0 - 1.0 / kstar, static_cast<double>(k - 1)));
  for (auto& v : p) v /= z;
  return p;
}

double binomial(std::size_t n, std::size_t k) {
  double r = 1.0;
  for (std::size_t j = 1; j <= k; ++j) r = r * static_cast<double>(n - k + j) / static_cast<double>(j);
  return r;
}

// Gaussian conditional mean from the covariance, not the precision.
double gaussian_conditional_mean(const AdaptiveStats& s, const BinaryVector& x, std::size_t i) {
  const Eigen::MatrixXd S = s.W.inverse();
  const auto d = static_cast<Eigen::Index>(x.size());
  std::vector<Eigen::Index> rest;
  for (Eigen::Index j = 0; j < d; ++j)
    if (j != static_cast<Eigen::Index>(i)) rest.push_back(j);
  const auto r = static_cast<Eigen::Index>(rest.size());
  Eigen::MatrixXd Srr(r, r);
  Eigen::VectorXd Sir(r), dev(r);
  for (Eigen::Index a = 0; a < r; ++a) {
    Sir(a) = S(static_cast<Eigen::Index>(i), rest[a]);
    dev(a) = (x[static_cast<std::size_t>(rest[a])] ? 1.0 : 0.0) - s.psi[static_cast<std::size_t>(rest[a])];
    for (Eigen::Index b = 0; b < r; ++b) Srr(a, b) = S(rest[a], rest[b]);
  }
  return s.psi[i] + Sir.dot(Srr.ldlt().solve(dev));
}

// Exact one-step transition matrix on {0,1}^d, built by enumerating block
// sizes, subsets and proposed bit patterns.
Eigen::MatrixXd exact_kernel(const TableTarget& t, Kernel kernel, double kstar, const AdaptiveStats* stats) {
  const std::size_t d = t.d, n = std::size_t{1} << d;
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  auto pi = [&](std::uint64_t c) { return std::exp(t.table[c]); };
  const auto pk = block_size_law(kstar, d);
  for (std::uint64_t cx = 0; cx < n; ++cx) {
    const auto x = BinaryVector::from_code(cx, d);
    if (kernel == Kernel::gibbs) {
      for (std::size_t i = 0; i < d; ++i) {
        const std::uint64_t cy = cx ^ (std::uint64_t{1} << i);
        P(static_cast<Eigen::Index>(cx), static_cast<Eigen::Index>(cy)) += pi(cy) / (pi(cx) + pi(cy)) / static_cast<double>(d);
      }
    } else {
      for (std::uint64_t subset = 1; subset < n; ++subset) {
        const std::size_t k = static_cast<std::size_t>(std::popcount(subset));
        const double p_subset = pk[k] / binomial(d, k);
        // Enumerate proposed values on the subset.
        for (std::uint64_t vals = subset;; vals = (vals - 1) & subset) {
          const std::uint64_t cy = (cx & ~subset) | vals;
          const auto y = BinaryVector::from_code(cy, d);
          double q_fwd = 1.0, q_bwd = 1.0;
          for (std::size_t i = 0; i < d; ++i) {
            if (!((subset >> i) & 1U)) continue;
            if (kernel == Kernel::mmg) {
              q_fwd *= (y[i] != x[i]) ? 1.0 : 0.0;
              q_bwd *= (x[i] != y[i]) ? 1.0 : 0.0;
            } else {
              const double pf = conditional_prob_amg(*stats, x, i);
              const double pb = conditional_prob_amg(*stats, y, i);
              q_fwd *= y[i] ? pf : 1.0 - pf;
              q_bwd *= x[i] ? pb : 1.0 - pb;
            }
          }
          if (q_fwd > 0.0 && cy != cx) {
            const double a = std::min(1.0, pi(cy) * q_bwd / (pi(cx) * q_fwd));
            P(static_cast<Eigen::Index>(cx), static_cast<Eigen::Index>(cy)) += p_subset * q_fwd * a;
          }
          if (vals == 0) break;
        }
      }
    }
    const auto r = static_cast<Eigen::Index>(cx);
    P(r, r) = 1.0 - (P.row(r).sum() - P(r, r));
  }
  return P;
}

AdaptiveStats sample_stats(std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  TrajectoryMoments tm(d);
  for (int t = 0; t < 400; ++t) {
    BinaryVector x(d);
    for (std::size_t i = 0; i < d; ++i) x.set(i, rng.bernoulli(0.2 + 0.6 * static_cast<double>(i) / static_cast<double>(d)));
    if (d > 1 && x[0]) x.set(1, rng.bernoulli(0.9));
    tm.add(x, 1.0 + static_cast<double>(rng.below(3)));
  }
  return estimate_adaptive_stats(tm, 0.01, 0.01);
}

PosteriorModel toy_posterior(std::uint64_t seed) {
  const auto dm = generate_toy(seed);
  return PosteriorModel::from_design(dm, default_hyperparameters(dm));
}

}  // namespace

// ---------------------------------------------------------------------------
// Component probabilities

TEST(ConditionalProbabilities, GibbsExamples) {
  TableTarget flat(std::vector<double>(4, 1.0), 2);
  EXPECT_DOUBLE_EQ(conditional_prob_gibbs(flat, BinaryVector{0, 1}, 0), 0.5);
  // pi(1, .) = 3 pi(0, .)
  TableTarget skew({0.0, std::log(3.0), 0.0, std::log(3.0)}, 2);
  EXPECT_NEAR(conditional_prob_gibbs(skew, BinaryVector{1, 0}, 0), 0.75, 1e-15);
  TableTarget blocked({0.0, neg_inf, 0.0, neg_inf}, 2);
  EXPECT_EQ(conditional_prob_gibbs(blocked, BinaryVector{0, 1}, 0), 0.0);
  EXPECT_THROW((void)conditional_prob_from_scores(neg_inf, neg_inf), McmcError);
}

TEST(ConditionalProbabilities, FlipKernelProposesComplement) {
  EXPECT_EQ(conditional_prob_mmg(BinaryVector{1, 0}, 0), 0.0);
  EXPECT_EQ(conditional_prob_mmg(BinaryVector{1, 0}, 1), 1.0);
}

TEST(ConditionalProbabilities, AdaptiveIsClamped) {
  auto s = AdaptiveStats::neutral(3, 0.01);
  s.psi = {0.999, 0.0001, 0.4};
  const BinaryVector x{0, 1, 1};
  EXPECT_DOUBLE_EQ(conditional_prob_amg(s, x, 0), 0.99);
  EXPECT_DOUBLE_EQ(conditional_prob_amg(s, x, 1), 0.01);
  EXPECT_DOUBLE_EQ(conditional_prob_amg(s, x, 2), 0.4);
}

TEST(ConditionalProbabilities, AdaptiveMatchesGaussianConditional) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto s = sample_stats(5, seed);
    s.delta = 1e-9;
    Rng rng(seed + 100);
    for (int rep = 0; rep < 20; ++rep) {
      BinaryVector x(5);
      for (std::size_t i = 0; i < 5; ++i) x.set(i, rng.bernoulli(0.5));
      for (std::size_t i = 0; i < 5; ++i)
        EXPECT_NEAR(conditional_prob_amg(s, x, i), std::clamp(gaussian_conditional_mean(s, x, i), 1e-9, 1 - 1e-9), 1e-9);
    }
  }
}

// ---------------------------------------------------------------------------
// Adaptive statistics

TEST(TrajectoryMoments, DurationEqualsRepetition) {
  TrajectoryMoments a(3), b(3);
  const BinaryVector x{1, 0, 1}, y{0, 1, 1};
  a.add(x, 3.0);
  a.add(y, 2.0);
  for (int k = 0; k < 3; ++k) b.add(x, 1.0);
  for (int k = 0; k < 2; ++k) b.add(y, 1.0);
  EXPECT_TRUE(a.mean().isApprox(b.mean(), 1e-15));
  EXPECT_TRUE(a.covariance().isApprox(b.covariance(), 1e-15));
  EXPECT_NEAR(a.mean()(0), 0.6, 1e-15);
  EXPECT_NEAR(a.covariance()(0, 1), 0.0 - 0.6 * 0.4, 1e-15);
}

TEST(TrajectoryMoments, IidTrajectoryGivesDiagonalPrecision) {
  const std::vector<double> p{0.2, 0.5, 0.7, 0.9};
  Rng rng(3);
  TrajectoryMoments tm(4);
  for (int t = 0; t < 200000; ++t) {
    BinaryVector x(4);
    for (std::size_t i = 0; i < 4; ++i) x.set(i, rng.bernoulli(p[i]));
    tm.add(x, 1.0);
  }
  const auto s = estimate_adaptive_stats(tm, 0.01, 0.01);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(s.psi[i], p[i], 0.005);
    const auto ii = static_cast<Eigen::Index>(i);
    EXPECT_NEAR(s.W(ii, ii), 1.0 / (p[i] * (1 - p[i]) + 0.01), 0.05 * s.W(ii, ii));
    for (std::size_t j = 0; j < i; ++j) EXPECT_NEAR(s.W(ii, static_cast<Eigen::Index>(j)), 0.0, 0.1);
  }
}

// ---------------------------------------------------------------------------
// Block size

TEST(BlockSize, Examples) {
  Rng rng(4);
  for (int k = 0; k < 100; ++k) EXPECT_EQ(sample_block_size(1.0, 50, rng), 1u);
  for (int k = 0; k < 100; ++k) EXPECT_EQ(sample_block_size(3.0, 1, rng), 1u);
  EXPECT_THROW((void)sample_block_size(0.5, 5, rng), McmcError);
  int twos = 0;
  const int n = 200000;
  for (int k = 0; k < n; ++k) twos += sample_block_size(2.0, 2, rng) == 2;
  EXPECT_NEAR(twos / static_cast<double>(n), 1.0 / 3.0, 0.005);
}

TEST(BlockSize, MatchesTruncatedGeometric) {
  Rng rng(5);
  for (double kstar : {1.5, 2.0, 4.0}) {
    const std::size_t d = 8;
    const auto law = block_size_law(kstar, d);
    std::vector<double> freq(d + 1, 0.0);
    const int n = 200000;
    for (int k = 0; k < n; ++k) {
      const auto b = sample_block_size(kstar, d, rng);
      ASSERT_GE(b, 1u);
      ASSERT_LE(b, d);
      freq[b] += 1.0 / n;
    }
    EXPECT_LT(total_variation(freq, law), 0.01) << "kstar " << kstar;
  }
  double mean = 0.0;
  for (int k = 0; k < 100000; ++k) mean += static_cast<double>(sample_block_size(2.0, 100, rng)) / 1e5;
  EXPECT_NEAR(mean, 2.0, 0.03);
}

// ---------------------------------------------------------------------------
// Transition kernels against the exact transition matrix

class ExactKernel : public ::testing::TestWithParam<Kernel> {};

TEST_P(ExactKernel, DetailedBalanceAndOneStepLaw) {
  const Kernel kernel = GetParam();
  const std::size_t d = 4, n = 16;
  TableTarget t(random_table(d, 6), d);
  const auto stats = sample_stats(d, 7);
  const auto P = exact_kernel(t, kernel, 2.0, &stats);
  const auto pi = normalized(t.table);
  for (std::size_t a = 0; a < n; ++a) {
    EXPECT_NEAR(P.row(static_cast<Eigen::Index>(a)).sum(), 1.0, 1e-12);
    for (std::size_t b = 0; b < n; ++b) {
      const auto ia = static_cast<Eigen::Index>(a), ib = static_cast<Eigen::Index>(b);
      EXPECT_GE(P(ia, ib), -1e-15);
      EXPECT_NEAR(pi[a] * P(ia, ib), pi[b] * P(ib, ia), 1e-14);
    }
  }
  // One-step law of the implementation from a few starting points.
  MgSampler sampler(d, kernel, 2.0);
  Rng rng(8);
  for (std::uint64_t start : {0u, 5u, 15u}) {
    std::vector<double> freq(n, 0.0);
    const int reps = 200000;
    for (int r = 0; r < reps; ++r) {
      ChainState s;
      s.x = BinaryVector::from_code(start, d);
      s.log_pi = t.table[start];
      sampler.step(t, s, rng, &stats);
      freq[s.x.code()] += 1.0 / reps;
    }
    std::vector<double> row(n);
    for (std::size_t b = 0; b < n; ++b) row[b] = P(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(b));
    EXPECT_LT(total_variation(freq, row), 0.006) << to_string(kernel) << " from " << start;
  }
}

INSTANTIATE_TEST_SUITE_P(Kernels, ExactKernel, ::testing::Values(Kernel::gibbs, Kernel::mmg, Kernel::amg),
                         [](const auto& info) { return to_string(info.param); });

// ---------------------------------------------------------------------------
// Chains

class ChainLaw : public ::testing::TestWithParam<Kernel> {};

TEST_P(ChainLaw, EmpiricalLawConvergesOnSmallProblem) {
  const std::size_t d = 6;
  TableTarget t(random_table(d, 9, 4.0), d);
  const auto pi = normalized(t.table);
  ChainConfig cfg;
  cfg.kernel = GetParam();
  cfg.budget = 400000;
  cfg.burn_in = 1000;
  cfg.pre_adapt = 20000;
  cfg.adapt_interval = 20000;
  cfg.seed = 10;
  std::vector<double> freq(std::size_t{1} << d, 0.0);
  // Occupation counts of the post-burn-in states, rebuilt from the moves.
  std::uint64_t last_t = 0;
  BinaryVector last;
  const std::uint64_t first = cfg.burn_in + 1;
  cfg.observer = [&](const ChainState& s) {
    // `last` was the state after steps last_t .. s.t - 1.
    if (last.size() > 0 && s.t > std::max(last_t, first)) freq[last.code()] += static_cast<double>(s.t - std::max(last_t, first));
    last = s.x;
    last_t = s.t;
  };
  const auto res = run_chain(t, cfg);
  if (res.state.t + 1 > std::max(last_t, first))
    freq[last.code()] += static_cast<double>(res.state.t + 1 - std::max(last_t, first));
  double total = 0.0;
  for (double f : freq) total += f;
  for (auto& f : freq) f /= total;
  EXPECT_LT(total_variation(freq, pi), 0.02);
  // The ergodic average reported by the chain is the marginal of the same occupation law.
  const auto ex = summarize_scores(t.table, d);
  for (std::size_t i = 0; i < d; ++i) {
    double m = 0.0;
    for (std::size_t c = 0; c < freq.size(); ++c)
      if ((c >> i) & 1U) m += freq[c];
    EXPECT_NEAR(res.marginals[i], m, 1e-9);
    EXPECT_NEAR(res.marginals[i], ex.marginals[i], 0.02);
  }
}

INSTANTIATE_TEST_SUITE_P(Kernels, ChainLaw, ::testing::Values(Kernel::gibbs, Kernel::mmg, Kernel::amg),
                         [](const auto& info) { return to_string(info.param); });

TEST(RunChain, UniformTargetFlipKernel) {
  TableTarget t(std::vector<double>(std::size_t{1} << 10, 0.0), 10);
  ChainConfig cfg;
  cfg.budget = 200000;
  cfg.burn_in = 1000;
  cfg.seed = 11;
  const auto res = run_chain(t, cfg);
  EXPECT_EQ(res.trace.moves, res.trace.evaluations - 1);  // every proposal accepted, initial draw excluded
  for (double m : res.marginals) EXPECT_NEAR(m, 0.5, 0.01);
}

TEST(RunChain, ToyPosteriorFlipKernel) {
  const auto post = toy_posterior(8);
  const auto ex = enumerate_exact(post);
  ChainConfig cfg;
  cfg.budget = 200000;
  cfg.seed = 12;
  const auto res = run_chain(post, cfg);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(res.marginals[i], ex.marginals[i], 0.05);
}

TEST(RunChain, BudgetAndAccounting) {
  TableTarget t(random_table(8, 13), 8);
  for (Kernel k : {Kernel::gibbs, Kernel::mmg, Kernel::amg}) {
    ChainConfig cfg;
    cfg.kernel = k;
    cfg.budget = 50000;
    cfg.burn_in = 500;
    cfg.pre_adapt = 5000;
    cfg.adapt_interval = 10000;
    cfg.seed = 14;
    const auto res = run_chain(t, cfg);
    EXPECT_EQ(res.trace.evaluations, cfg.budget) << to_string(k);
    EXPECT_LE(res.trace.moves, res.trace.evaluations);
    EXPECT_GE(res.trace.steps + 1, res.trace.evaluations);
    EXPECT_DOUBLE_EQ(res.trace.acceptance_rate(),
                     static_cast<double>(res.trace.moves) / static_cast<double>(res.trace.evaluations));
    if (k == Kernel::amg) {
      EXPECT_GE(res.trace.adaptations, 1u);
      // Proposals equal to the current state cost no evaluation.
      EXPECT_GT(res.trace.steps + 1, res.trace.evaluations);
    } else {
      EXPECT_EQ(res.trace.steps + 1, res.trace.evaluations);
      EXPECT_EQ(res.trace.adaptations, 0u);
    }
  }
}

TEST(RunChain, AdaptationStopsOnSchedule) {
  TableTarget t(random_table(6, 15), 6);
  ChainConfig cfg;
  cfg.kernel = Kernel::amg;
  cfg.budget = 30000;
  cfg.burn_in = 100;
  cfg.pre_adapt = 1000;
  cfg.adapt_interval = 1000;
  cfg.adapt_stop = 3500;
  cfg.seed = 16;
  const auto res = run_chain(t, cfg);
  EXPECT_EQ(res.trace.adaptations, 3u);  // steps 1100, 2100, 3100
}

TEST(RunChain, DeterministicForSeed) {
  TableTarget t(random_table(8, 17), 8);
  ChainConfig cfg;
  cfg.kernel = Kernel::amg;
  cfg.budget = 40000;
  cfg.burn_in = 100;
  cfg.pre_adapt = 2000;
  cfg.adapt_interval = 5000;
  cfg.seed = 18;
  const auto a = run_chain(t, cfg), b = run_chain(t, cfg);
  EXPECT_EQ(a.marginals, b.marginals);
  EXPECT_EQ(a.trace.moves, b.trace.moves);
  cfg.seed = 19;
  EXPECT_NE(run_chain(t, cfg).marginals, a.marginals);
}

TEST(RunChain, ConstrainedChainStaysFeasible) {
  const std::size_t d = 6;  // mains 0..2, interactions 3:(0,1) 4:(0,2) 5:(1,2)
  ReferenceLaw law(d, {{3, 0, 1}, {4, 0, 2}, {5, 1, 2}});
  auto table = random_table(d, 20);
  for (std::uint64_t c = 0; c < table.size(); ++c)
    if (!law.feasible(BinaryVector::from_code(c, d))) table[c] = neg_inf;
  TableTarget t(table, d, law);
  const auto ex = summarize_scores(table, d);
  for (Kernel k : {Kernel::gibbs, Kernel::mmg, Kernel::amg}) {
    ChainConfig cfg;
    cfg.kernel = k;
    cfg.budget = 300000;
    cfg.burn_in = 1000;
    cfg.pre_adapt = 10000;
    cfg.adapt_interval = 20000;
    cfg.seed = 21;
    std::uint64_t observed = 0;
    cfg.observer = [&](const ChainState& s) {
      ASSERT_TRUE(law.feasible(s.x));
      ++observed;
    };
    const auto res = run_chain(t, cfg);
    EXPECT_EQ(observed, res.trace.moves + 1);
    for (std::size_t i = 0; i < d; ++i) EXPECT_NEAR(res.marginals[i], ex.marginals[i], 0.03) << to_string(k);
  }
}

TEST(RunChain, RejectsBadSettings) {
  TableTarget t(random_table(3, 22), 3);
  ChainConfig cfg;
  cfg.kstar = 0.5;
  EXPECT_THROW((void)run_chain(t, cfg), McmcError);
  cfg = {};
  cfg.delta = 0.6;
  EXPECT_THROW((void)run_chain(t, cfg), McmcError);
}
