#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <tuple>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "binary_vector.hpp"
#include "data.hpp"
#include "rng.hpp"

namespace binsmc {

inline constexpr double neg_inf = -std::numeric_limits<double>::infinity();

class PosteriorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Criterion { hierarchical_bayes, bic };

struct Hyperparameters {
  double w = 4.0;
  double lambda = 1.0;
  double v2 = 10.0;
};

/// Log of a normalizing sum: log(sum_k exp(a_k)), with -inf entries ignored.
inline double log_sum_exp(std::span<const double> a) {
  double mx = neg_inf;
  for (double v : a) mx = std::max(mx, v);
  if (mx == neg_inf) return neg_inf;
  double s = 0.0;
  for (double v : a) s += std::exp(v - mx);
  return mx + std::log(s);
}

/// Law used to draw the initial particles and chain states.
///
/// Without restrictions this is the uniform law on {0,1}^d. With main-effect
/// restrictions, free components are fair coins, forced components are set to
/// one and an interaction is a fair coin only when both parents are active.
/// That law charges every feasible point but is not uniform on the feasible set,
/// so callers use `log_density` to correct for it.
class ReferenceLaw {
 public:
  ReferenceLaw() = default;
  explicit ReferenceLaw(std::size_t d, std::vector<InteractionTerm> interactions = {},
                        std::vector<std::size_t> forced = {})
      : d_(d), parent_of_(d, none), forced_(d, 0), interactions_(std::move(interactions)) {
    for (std::size_t f : forced) {
      if (f >= d) throw PosteriorError("forced component out of range");
      forced_[f] = 1;
    }
    for (std::size_t k = 0; k < interactions_.size(); ++k) {
      const auto& t = interactions_[k];
      if (t.column >= d || t.left >= d || t.right >= d || t.left >= t.column || t.right >= t.column)
        throw PosteriorError("invalid interaction constraint");
      parent_of_[t.column] = k;
    }
  }

  std::size_t dim() const noexcept { return d_; }
  bool is_uniform() const noexcept { return interactions_.empty() && std::none_of(forced_.begin(), forced_.end(), [](auto f) { return f != 0; }); }
  const std::vector<InteractionTerm>& interactions() const noexcept { return interactions_; }

  bool feasible(const BinaryVector& g) const noexcept {
    for (std::size_t i = 0; i < d_; ++i)
      if (forced_[i] && !g[i]) return false;
    for (const auto& t : interactions_)
      if (g[t.column] && !(g[t.left] && g[t.right])) return false;
    return true;
  }

  BinaryVector sample(Rng& rng) const {
    BinaryVector g(d_);
    for (std::size_t i = 0; i < d_; ++i) {
      if (forced_[i]) {
        g.set(i, true);
      } else if (parent_of_[i] != none) {
        const auto& t = interactions_[parent_of_[i]];
        g.set(i, g[t.left] && g[t.right] && rng.bernoulli(0.5));
      } else {
        g.set(i, rng.bernoulli(0.5));
      }
    }
    return g;
  }

  /// Normalized log mass; -inf off the support.
  double log_density(const BinaryVector& g) const noexcept {
    std::size_t free = 0;
    for (std::size_t i = 0; i < d_; ++i) {
      if (forced_[i]) {
        if (!g[i]) return neg_inf;
      } else if (parent_of_[i] != none) {
        const auto& t = interactions_[parent_of_[i]];
        if (g[t.left] && g[t.right]) ++free;
        else if (g[i]) return neg_inf;
      } else {
        ++free;
      }
    }
    return -static_cast<double>(free) * std::numbers::ln2;
  }

 private:
  static constexpr std::size_t none = static_cast<std::size_t>(-1);
  std::size_t d_ = 0;
  std::vector<std::size_t> parent_of_;
  std::vector<std::uint8_t> forced_;
  std::vector<InteractionTerm> interactions_;
};

/// Anything that scores binary vectors: an unnormalized log mass plus the
/// reference law its support is drawn from.
template <class T>
concept Target = requires(const T& t, const BinaryVector& g) {
  { t.dim() } -> std::convertible_to<std::size_t>;
  { t.log_score(g) } -> std::convertible_to<double>;
  { t.reference() } -> std::convertible_to<const ReferenceLaw&>;
};

namespace detail {

/// In-place lower Cholesky of the k x k row-major matrix `a`.
/// Fails when a pivot drops below `min_rel_pivot` times its diagonal entry.
inline bool cholesky_lower(std::vector<double>& a, std::size_t k, double min_rel_pivot) {
  for (std::size_t j = 0; j < k; ++j) {
    double* rj = a.data() + j * k;
    double s = rj[j];
    for (std::size_t p = 0; p < j; ++p) s -= rj[p] * rj[p];
    if (!(s > min_rel_pivot * rj[j]) || !(s > 0.0)) return false;
    const double ljj = std::sqrt(s);
    rj[j] = ljj;
    for (std::size_t i = j + 1; i < k; ++i) {
      double* ri = a.data() + i * k;
      double t = ri[j];
      for (std::size_t p = 0; p < j; ++p) t -= ri[p] * rj[p];
      ri[j] = t / ljj;
    }
  }
  return true;
}

/// Solves L c = b for the factor left in `a`; returns c'c and sum(log diag L).
inline std::pair<double, double> forward_norm(const std::vector<double>& a, std::vector<double>& c, std::size_t k) {
  double cc = 0.0, logdet = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double* ri = a.data() + i * k;
    double t = c[i];
    for (std::size_t p = 0; p < i; ++p) t -= ri[p] * c[p];
    t /= ri[i];
    c[i] = t;
    cc += t * t;
    logdet += std::log(ri[i]);
  }
  return {cc, logdet};
}

struct Scratch {
  std::vector<std::size_t> idx;
  std::vector<double> a;
  std::vector<double> c;
};

inline Scratch& scratch() {
  thread_local Scratch s;
  return s;
}

}  // namespace detail

/// Unnormalized log posterior over subsets of regression columns.
///
/// Holds only sufficient statistics (Z'Z, Z'y, y'y) and is immutable after
/// construction; scoring is safe from any number of threads.
class PosteriorModel {
 public:
  PosteriorModel(Eigen::MatrixXd gram, Eigen::VectorXd zty, double yy, std::size_t m, Hyperparameters hyper,
                 Criterion criterion = Criterion::hierarchical_bayes, std::vector<InteractionTerm> constraints = {},
                 std::vector<std::size_t> always_included = {})
      : gram_(std::move(gram)),
        zty_(std::move(zty)),
        yy_(yy),
        m_(m),
        hyper_(hyper),
        criterion_(criterion),
        reference_(static_cast<std::size_t>(gram_.rows()), std::move(constraints), std::move(always_included)) {
    if (gram_.rows() != gram_.cols() || gram_.rows() != zty_.size()) throw PosteriorError("inconsistent dimensions");
    if (!(hyper_.w > 0.0) || !(hyper_.lambda > 0.0) || !(hyper_.v2 > 0.0))
      throw PosteriorError("hyperparameters must be strictly positive");
    if (m_ == 0) throw PosteriorError("no observations");
    if (!gram_.isApprox(gram_.transpose())) throw PosteriorError("Gram matrix is not symmetric");
  }

  static PosteriorModel from_design(const DesignMatrix& dm, Hyperparameters hyper,
                                    Criterion criterion = Criterion::hierarchical_bayes, bool constrained = false,
                                    std::vector<std::size_t> always_included = {}) {
    Eigen::MatrixXd gram = dm.Z.transpose() * dm.Z;
    gram = 0.5 * (gram + gram.transpose()).eval();
    Eigen::VectorXd zty = dm.Z.transpose() * dm.y;
    return PosteriorModel(std::move(gram), std::move(zty), dm.y.squaredNorm(), dm.rows(), hyper, criterion,
                          constrained ? dm.interactions : std::vector<InteractionTerm>{}, std::move(always_included));
  }

  std::size_t dim() const noexcept { return static_cast<std::size_t>(gram_.rows()); }
  std::size_t observations() const noexcept { return m_; }
  const Hyperparameters& hyper() const noexcept { return hyper_; }
  Criterion criterion() const noexcept { return criterion_; }
  const ReferenceLaw& reference() const noexcept { return reference_; }
  const Eigen::MatrixXd& gram() const noexcept { return gram_; }
  const Eigen::VectorXd& zty() const noexcept { return zty_; }
  double yy() const noexcept { return yy_; }

  double log_score(const BinaryVector& g) const {
    return criterion_ == Criterion::bic ? log_bic(g) : log_posterior(g);
  }

  /// Hierarchical-Bayes score, up to an additive constant.
  double log_posterior(const BinaryVector& g) const {
    check_dim(g);
    if (!reference_.feasible(g)) return neg_inf;
    const double m = static_cast<double>(m_);
    auto& s = detail::scratch();
    const std::size_t k = load(g, s);
    const double ridge = 1.0 / hyper_.v2;
    double cc = 0.0, logdet = 0.0;
    if (k > 0) {
      if (!factor(s, k, ridge, 0.0)) {
        // Only reachable through rounding; the ridge keeps the matrix positive definite.
        double tr = 0.0;
        for (std::size_t i = 0; i < k; ++i) tr += gram_(static_cast<Eigen::Index>(s.idx[i]), static_cast<Eigen::Index>(s.idx[i]));
        if (!factor(s, k, ridge + 1e-10 * tr / static_cast<double>(k), 0.0))
          throw PosteriorError("Cholesky factorization failed for " + g.to_string());
      }
      std::tie(cc, logdet) = detail::forward_norm(s.a, s.c, k);
    }
    const double sigma2 = std::max(0.0, (yy_ - cc) / m);
    return -logdet - 0.5 * static_cast<double>(k) * std::log(hyper_.v2) -
           0.5 * (hyper_.w + m) * std::log(hyper_.w * hyper_.lambda / m + sigma2);
  }

  /// Schwarz criterion, up to an additive constant. Rank-deficient subsets score -inf.
  double log_bic(const BinaryVector& g) const {
    check_dim(g);
    if (!reference_.feasible(g)) return neg_inf;
    const double m = static_cast<double>(m_);
    auto& s = detail::scratch();
    const std::size_t k = load(g, s);
    double cc = 0.0;
    if (k > 0) {
      if (!factor(s, k, 0.0, 1e-10)) return neg_inf;
      cc = detail::forward_norm(s.a, s.c, k).first;
    }
    const double sigma2 = std::max((yy_ - cc) / m, std::numeric_limits<double>::min());
    return -0.5 * static_cast<double>(k) * std::log(m) - 0.5 * m * std::log(sigma2);
  }

 private:
  void check_dim(const BinaryVector& g) const {
    if (g.size() != dim()) throw PosteriorError("binary vector has wrong dimension");
  }

  std::size_t load(const BinaryVector& g, detail::Scratch& s) const {
    s.idx.clear();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (g[i]) s.idx.push_back(i);
    return s.idx.size();
  }

  bool factor(detail::Scratch& s, std::size_t k, double ridge, double min_rel_pivot) const {
    s.a.resize(k * k);
    s.c.resize(k);
    for (std::size_t i = 0; i < k; ++i) {
      const auto gi = static_cast<Eigen::Index>(s.idx[i]);
      s.c[i] = zty_(gi);
      for (std::size_t j = 0; j <= i; ++j) s.a[i * k + j] = gram_(gi, static_cast<Eigen::Index>(s.idx[j]));
      s.a[i * k + i] += ridge;
    }
    return detail::cholesky_lower(s.a, k, min_rel_pivot);
  }

  Eigen::MatrixXd gram_;
  Eigen::VectorXd zty_;
  double yy_;
  std::size_t m_;
  Hyperparameters hyper_;
  Criterion criterion_;
  ReferenceLaw reference_;
};

/// w = 4, lambda = residual variance of the saturated least-squares fit, v^2 = 10 / lambda.
///
/// The saturated fit solves (Z'Z + 1e-10 tr(Z'Z)/d I) b = Z'y when `regularize`
/// is set, which keeps collinear expansions solvable.
inline Hyperparameters default_hyperparameters(const DesignMatrix& dm, bool regularize = true) {
  const auto d = static_cast<Eigen::Index>(dm.cols());
  const double m = static_cast<double>(dm.rows());
  Hyperparameters h;
  h.w = 4.0;
  double rss = dm.y.squaredNorm();
  if (d > 0) {
    Eigen::MatrixXd gram = dm.Z.transpose() * dm.Z;
    if (regularize) gram.diagonal().array() += 1e-10 * gram.trace() / static_cast<double>(d);
    Eigen::LLT<Eigen::MatrixXd> llt(gram);
    if (llt.info() != Eigen::Success) throw PosteriorError("saturated Gram matrix is singular");
    const Eigen::VectorXd beta = llt.solve(dm.Z.transpose() * dm.y);
    rss = (dm.y - dm.Z * beta).squaredNorm();
  }
  h.lambda = rss / m;
  if (!(h.lambda > 1e-12 * dm.y.squaredNorm() / m))
    throw PosteriorError("saturated model fits the response exactly; lambda would be zero");
  h.v2 = 10.0 / h.lambda;
  return h;
}

struct ExactSummary {
  std::vector<double> marginals;
  double log_evidence = neg_inf;
};

/// log-scores of all 2^d points, indexed by BinaryVector::code().
template <Target T>
std::vector<double> enumerate_log_scores(const T& target, std::size_t limit = 20) {
  const std::size_t d = target.dim();
  if (d > limit || d >= 63) throw PosteriorError("enumeration limit exceeded: d = " + std::to_string(d));
  const std::uint64_t total = std::uint64_t{1} << d;
  std::vector<double> scores(total);
  for (std::uint64_t c = 0; c < total; ++c) scores[c] = target.log_score(BinaryVector::from_code(c, d));
  return scores;
}

inline ExactSummary summarize_scores(std::span<const double> scores, std::size_t d) {
  ExactSummary out;
  out.marginals.assign(d, 0.0);
  out.log_evidence = log_sum_exp(scores);
  if (out.log_evidence == neg_inf) throw PosteriorError("target has no mass");
  for (std::uint64_t c = 0; c < scores.size(); ++c) {
    const double p = std::exp(scores[c] - out.log_evidence);
    for (std::size_t i = 0; i < d; ++i)
      if ((c >> i) & 1U) out.marginals[i] += p;
  }
  return out;
}

/// Exact inclusion probabilities and log normalizing sum by full enumeration.
template <Target T>
ExactSummary enumerate_exact(const T& target, std::size_t limit = 20) {
  const auto scores = enumerate_log_scores(target, limit);
  return summarize_scores(scores, target.dim());
}

}  // namespace binsmc
