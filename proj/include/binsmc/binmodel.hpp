#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

#include "binary_vector.hpp"
#include "parallel.hpp"
#include "rng.hpp"

namespace binsmc {

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Particles and their (normalized) weights.
struct WeightedSample {
  std::span<const BinaryVector> X;
  std::span<const double> w;

  std::size_t size() const noexcept { return X.size(); }
  std::size_t dim() const noexcept { return X.empty() ? 0 : X.front().size(); }
};

/// A draw together with its log mass under the model that produced it.
struct Draw {
  BinaryVector x;
  double log_q = 0.0;
};

inline double logit(double p) { return std::log(p) - std::log1p(-p); }
inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// log(logistic(x)) without overflow.
inline double log_logistic(double x) { return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }

inline double clamp_probability(double p, double p_min) { return std::clamp(p, p_min, 1.0 - p_min); }

/// Boundary clamp for stored marginals: 1 / (2n).
inline double default_p_min(std::size_t n) { return 0.5 / static_cast<double>(std::max<std::size_t>(n, 1)); }

namespace detail {

/// Identical particles merged, weights summed and renormalized. Fitting on the
/// merged sample is exact since every statistic is a weighted sum over rows.
struct CompressedSample {
  std::vector<BinaryVector> rows;
  std::vector<double> w;
  std::vector<std::vector<std::uint32_t>> active;  // indices of ones per row
};

inline CompressedSample compress(const WeightedSample& s) {
  if (s.X.size() != s.w.size()) throw ModelError("weights and particles differ in length");
  if (s.X.empty()) throw ModelError("empty sample");
  CompressedSample out;
  std::unordered_map<BinaryVector, std::size_t, BinaryVectorHash> index;
  index.reserve(s.X.size());
  double total = 0.0;
  for (std::size_t k = 0; k < s.X.size(); ++k) {
    if (!(s.w[k] >= 0.0)) throw ModelError("negative or NaN weight");
    total += s.w[k];
    const auto [it, inserted] = index.emplace(s.X[k], out.rows.size());
    if (inserted) {
      out.rows.push_back(s.X[k]);
      out.w.push_back(s.w[k]);
    } else {
      out.w[it->second] += s.w[k];
    }
  }
  if (!(total > 0.0)) throw ModelError("weights sum to zero");
  for (auto& v : out.w) v /= total;
  out.active.resize(out.rows.size());
  for (std::size_t u = 0; u < out.rows.size(); ++u)
    for (std::size_t i = 0; i < out.rows[u].size(); ++i)
      if (out.rows[u][i]) out.active[u].push_back(static_cast<std::uint32_t>(i));
  return out;
}

}  // namespace detail

struct Moments {
  std::vector<double> mean;
  Eigen::MatrixXd corr;
};

namespace detail {

inline Moments moments_of(const CompressedSample& cs, std::size_t d) {
  Moments mo;
  mo.mean.assign(d, 0.0);
  Eigen::MatrixXd cross = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  for (std::size_t u = 0; u < cs.rows.size(); ++u) {
    const double w = cs.w[u];
    const auto& a = cs.active[u];
    for (std::size_t s = 0; s < a.size(); ++s) {
      mo.mean[a[s]] += w;
      for (std::size_t t = 0; t < s; ++t) cross(a[s], a[t]) += w;
    }
  }
  mo.corr = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < d; ++i) {
    const double vi = mo.mean[i] * (1.0 - mo.mean[i]);
    for (std::size_t j = 0; j < i; ++j) {
      const double vj = mo.mean[j] * (1.0 - mo.mean[j]);
      double r = 0.0;
      if (vi > 1e-14 && vj > 1e-14)
        r = std::clamp((cross(i, j) - mo.mean[i] * mo.mean[j]) / std::sqrt(vi * vj), -1.0, 1.0);
      mo.corr(i, j) = mo.corr(j, i) = r;
    }
  }
  return mo;
}

}  // namespace detail

/// Weighted means and correlations. Correlations involving a constant component are zero.
inline Moments weighted_moments(const WeightedSample& s) {
  const auto cs = detail::compress(s);
  return detail::moments_of(cs, s.dim());
}

// ---------------------------------------------------------------------------
// Product model

/// Independent Bernoulli components.
class ProductModel {
 public:
  ProductModel() = default;
  explicit ProductModel(std::vector<double> p, double p_min = 0.0) : p_(std::move(p)) {
    for (auto& v : p_) {
      if (!(v >= 0.0 && v <= 1.0)) throw ModelError("product model probability outside [0,1]");
      v = clamp_probability(v, p_min);
    }
    log_p1_.resize(p_.size());
    log_p0_.resize(p_.size());
    for (std::size_t i = 0; i < p_.size(); ++i) {
      log_p1_[i] = std::log(p_[i]);
      log_p0_[i] = std::log1p(-p_[i]);
    }
  }

  std::size_t dim() const noexcept { return p_.size(); }
  const std::vector<double>& probabilities() const noexcept { return p_; }

  double log_density(const BinaryVector& g) const {
    double lq = 0.0;
    for (std::size_t i = 0; i < p_.size(); ++i) lq += g[i] ? log_p1_[i] : log_p0_[i];
    return lq;
  }

  Draw sample_and_evaluate(Rng& rng) const {
    Draw out{BinaryVector(p_.size()), 0.0};
    for (std::size_t i = 0; i < p_.size(); ++i) {
      const bool bit = rng.uniform() < p_[i];
      out.x.set(i, bit);
      out.log_q += bit ? log_p1_[i] : log_p0_[i];
    }
    return out;
  }

 private:
  std::vector<double> p_;
  std::vector<double> log_p1_, log_p0_;
};

/// Weighted mean, clamped to [p_min, 1 - p_min]. p_min <= 0 selects 1 / (2n).
inline ProductModel fit_product(const WeightedSample& s, double p_min = 0.0) {
  if (p_min <= 0.0) p_min = default_p_min(s.size());
  auto mo = weighted_moments(s);
  return ProductModel(std::move(mo.mean), p_min);
}

// ---------------------------------------------------------------------------
// Logistic conditionals model

/// Independent components I and per-component predictor sets L_i.
struct Structure {
  std::vector<std::uint8_t> independent;
  std::vector<std::vector<std::size_t>> predictors;
};

/// Components with mean outside (eps, 1 - eps) are independent; every other
/// component i regresses on the earlier non-independent j with |r_ij| > delta.
/// `order` lists components in model order (identity when empty).
inline Structure select_structure(std::span<const double> mean, const Eigen::MatrixXd& corr, double eps = 0.02,
                                  double delta = 0.075, std::span<const std::size_t> order = {}) {
  const std::size_t d = mean.size();
  std::vector<std::size_t> ord(order.begin(), order.end());
  if (ord.empty()) {
    ord.resize(d);
    std::iota(ord.begin(), ord.end(), std::size_t{0});
  }
  Structure st;
  st.independent.assign(d, 0);
  st.predictors.assign(d, {});
  for (std::size_t i = 0; i < d; ++i) st.independent[i] = (mean[i] <= eps || mean[i] >= 1.0 - eps) ? 1 : 0;
  for (std::size_t pos = 0; pos < d; ++pos) {
    const std::size_t i = ord[pos];
    if (st.independent[i]) continue;
    for (std::size_t q = 0; q < pos; ++q) {
      const std::size_t j = ord[q];
      if (!st.independent[j] && std::abs(corr(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))) > delta)
        st.predictors[i].push_back(j);
    }
  }
  return st;
}

struct LogisticFitOptions {
  double eps = 0.02;        // boundary threshold for independent components
  double delta = 0.075;     // correlation threshold for predictors
  double penalty = 0.1;     // Gaussian prior precision, per observation count
  double b_max = 25.0;      // coefficient magnitude that triggers demotion
  int max_iter = 50;
  double tol = 1e-3;        // Newton stops when every coefficient moves less than this
  double gradient_tol = 1e-2;  // converged rows with a larger final gradient are demoted
  double p_min = 0.0;       // <= 0 selects 1 / (2n)
  std::size_t jobs = 1;
};

/// Per-row outcome of the Newton iterations.
struct RowFit {
  bool regression = false;  // row entered the Newton solver
  bool demoted = false;
  int iterations = 0;
  double gradient_norm = 0.0;
};

/// q(g) = prod_i Ber(g_i; logistic(b_ii + sum_{j in L_i} b_ij g_j)), rows taken in
/// model order. Independent rows carry a stored marginal instead.
class LogisticConditionalsModel {
 public:
  struct Row {
    bool independent = true;
    double p = 0.5;  // independent rows only
    double log_p1 = -0.6931471805599453, log_p0 = -0.6931471805599453;
    double intercept = 0.0;
    std::vector<std::size_t> predictors;
    std::vector<double> slopes;
  };

  LogisticConditionalsModel() = default;

  /// All-independent model with the given marginals.
  static LogisticConditionalsModel independent(std::span<const double> p, double p_min = 0.0) {
    LogisticConditionalsModel m;
    m.rows_.resize(p.size());
    m.order_.resize(p.size());
    std::iota(m.order_.begin(), m.order_.end(), std::size_t{0});
    for (std::size_t i = 0; i < p.size(); ++i) m.set_independent(i, clamp_probability(p[i], p_min));
    m.diagnostics_.assign(p.size(), RowFit{});
    return m;
  }

  /// Model with explicit coefficients. `coef` is indexed by component: coef(i,i)
  /// is the intercept and coef(i,j) for j in predictors[i] the slopes.
  static LogisticConditionalsModel from_coefficients(const Eigen::MatrixXd& coef,
                                                     std::vector<std::vector<std::size_t>> predictors,
                                                     std::vector<std::size_t> order = {}) {
    const auto d = static_cast<std::size_t>(coef.rows());
    LogisticConditionalsModel m;
    m.rows_.resize(d);
    m.order_ = order.empty() ? identity(d) : std::move(order);
    m.validate_order();
    std::vector<std::size_t> pos(d);
    for (std::size_t q = 0; q < d; ++q) pos[m.order_[q]] = q;
    for (std::size_t i = 0; i < d; ++i) {
      auto& r = m.rows_[i];
      r.independent = false;
      r.intercept = coef(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i));
      for (std::size_t j : predictors[i]) {
        if (pos[j] >= pos[i]) throw ModelError("predictor does not precede its component in model order");
        r.predictors.push_back(j);
        r.slopes.push_back(coef(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
      }
    }
    m.diagnostics_.assign(d, RowFit{});
    return m;
  }

  std::size_t dim() const noexcept { return rows_.size(); }
  const std::vector<std::size_t>& order() const noexcept { return order_; }
  const Row& row(std::size_t component) const { return rows_.at(component); }
  const std::vector<RowFit>& diagnostics() const noexcept { return diagnostics_; }

  /// Dense coefficient matrix indexed by component (lower triangular in model order).
  Eigen::MatrixXd coefficients() const {
    const auto d = static_cast<Eigen::Index>(rows_.size());
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(d, d);
    for (std::size_t i = 0; i < rows_.size(); ++i) {
      const auto& r = rows_[i];
      const auto ii = static_cast<Eigen::Index>(i);
      B(ii, ii) = r.independent ? logit(r.p) : r.intercept;
      for (std::size_t t = 0; t < r.predictors.size(); ++t) B(ii, static_cast<Eigen::Index>(r.predictors[t])) = r.slopes[t];
    }
    return B;
  }

  std::vector<std::size_t> independent_set() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < rows_.size(); ++i)
      if (rows_[i].independent) out.push_back(i);
    return out;
  }

  double log_density(const BinaryVector& g) const {
    double lq = 0.0;
    for (std::size_t i : order_) lq += log_factor(rows_[i], g, g[i]);
    return lq;
  }

  /// Draws componentwise in model order and accumulates the log mass on the way.
  Draw sample_and_evaluate(Rng& rng) const {
    Draw out{BinaryVector(rows_.size()), 0.0};
    for (std::size_t i : order_) {
      const Row& r = rows_[i];
      const double u = rng.uniform();
      bool bit;
      if (r.independent) {
        bit = u < r.p;
      } else {
        bit = u < logistic(linear_predictor(r, out.x));
      }
      out.x.set(i, bit);
      out.log_q += log_factor(r, out.x, bit);
    }
    return out;
  }

 private:
  friend LogisticConditionalsModel fit_logistic_conditionals(const WeightedSample&, const LogisticFitOptions&,
                                                             const LogisticConditionalsModel*);

  static std::vector<std::size_t> identity(std::size_t d) {
    std::vector<std::size_t> o(d);
    std::iota(o.begin(), o.end(), std::size_t{0});
    return o;
  }

  void validate_order() const {
    std::vector<std::uint8_t> seen(rows_.size(), 0);
    if (order_.size() != rows_.size()) throw ModelError("ordering has wrong length");
    for (std::size_t i : order_) {
      if (i >= rows_.size() || seen[i]) throw ModelError("ordering is not a permutation");
      seen[i] = 1;
    }
  }

  void set_independent(std::size_t i, double p) {
    Row& r = rows_[i];
    r = Row{};
    r.independent = true;
    r.p = p;
    r.log_p1 = std::log(p);
    r.log_p0 = std::log1p(-p);
  }

  static double linear_predictor(const Row& r, const BinaryVector& g) {
    double eta = r.intercept;
    for (std::size_t t = 0; t < r.predictors.size(); ++t)
      if (g[r.predictors[t]]) eta += r.slopes[t];
    return eta;
  }

  static double log_factor(const Row& r, const BinaryVector& g, bool bit) {
    if (r.independent) return bit ? r.log_p1 : r.log_p0;
    const double eta = linear_predictor(r, g);
    return bit ? log_logistic(eta) : log_logistic(-eta);
  }

  std::vector<Row> rows_;
  std::vector<std::size_t> order_;
  std::vector<RowFit> diagnostics_;
};

namespace detail {

struct NewtonResult {
  bool ok = false;
  int iterations = 0;
  double gradient_norm = 0.0;
  std::vector<double> gradient_history;  // norm at each iterate, starting point first
  Eigen::VectorXd b;                     // slopes in predictor order, intercept last
};

/// Penalized weighted logistic regression of component `target` on `predictors`
/// plus an intercept. Each iteration solves
///   (Z' W Q Z + c I) b_new = Z' W (Q Z b + y - p),   c = penalty / n,
/// the Newton step for  sum_k w_k loglik_k(b) - (c/2) |b|^2.
inline NewtonResult newton_logistic(const CompressedSample& cs, std::size_t target,
                                    const std::vector<std::size_t>& predictors, Eigen::VectorXd b,
                                    const LogisticFitOptions& opt, double ridge) {
  const auto s = static_cast<Eigen::Index>(predictors.size());
  const Eigen::Index dim = s + 1;
  std::vector<std::int32_t> slot(cs.rows.empty() ? 0 : cs.rows.front().size(), -1);
  for (Eigen::Index t = 0; t < s; ++t) slot[predictors[static_cast<std::size_t>(t)]] = static_cast<std::int32_t>(t);

  // Active design positions per distinct row (intercept always last).
  std::vector<std::vector<Eigen::Index>> act(cs.rows.size());
  for (std::size_t u = 0; u < cs.rows.size(); ++u) {
    for (auto i : cs.active[u])
      if (slot[i] >= 0) act[u].push_back(slot[i]);
    act[u].push_back(s);
  }

  NewtonResult res;
  Eigen::MatrixXd H(dim, dim);
  Eigen::VectorXd rhs(dim), grad(dim);
  auto eta_of = [&](std::size_t u, const Eigen::VectorXd& coef) {
    double e = 0.0;
    for (auto t : act[u]) e += coef(t);
    return e;
  };
  for (int it = 1; it <= opt.max_iter; ++it) {
    H.setZero();
    rhs.setZero();
    grad = -ridge * b;
    for (std::size_t u = 0; u < cs.rows.size(); ++u) {
      const double eta = eta_of(u, b);
      const double p = logistic(eta);
      const double q = p * (1.0 - p);
      const double y = cs.rows[u][target] ? 1.0 : 0.0;
      const double wq = cs.w[u] * q;
      const double r = cs.w[u] * (q * eta + y - p);
      const double g = cs.w[u] * (y - p);
      const auto& a = act[u];
      for (std::size_t x = 0; x < a.size(); ++x) {
        rhs(a[x]) += r;
        grad(a[x]) += g;
        for (std::size_t z = 0; z <= x; ++z) H(a[x], a[z]) += wq;
      }
    }
    res.gradient_history.push_back(grad.norm());
    H.diagonal().array() += ridge;
    Eigen::LLT<Eigen::MatrixXd, Eigen::Lower> llt(H);
    if (llt.info() != Eigen::Success) return res;
    Eigen::VectorXd next = llt.solve(rhs);
    res.iterations = it;
    if (!next.allFinite() || next.cwiseAbs().maxCoeff() > opt.b_max) return res;
    const double step = (next - b).cwiseAbs().maxCoeff();
    b = std::move(next);
    if (step < opt.tol) {
      grad = -ridge * b;
      for (std::size_t u = 0; u < cs.rows.size(); ++u) {
        const double y = cs.rows[u][target] ? 1.0 : 0.0;
        const double g = cs.w[u] * (y - logistic(eta_of(u, b)));
        for (auto t : act[u]) grad(t) += g;
      }
      res.gradient_norm = grad.norm();
      res.ok = res.gradient_norm <= opt.gradient_tol;
      res.gradient_history.push_back(res.gradient_norm);
      res.b = std::move(b);
      return res;
    }
  }
  return res;
}

}  // namespace detail

/// Fits the sparse logistic conditionals model to a weighted sample.
///
/// Rows that fail to converge within max_iter or whose coefficients exceed
/// b_max become independent with their clamped weighted mean. When `init` is
/// given (same dimension and ordering), its coefficients seed the Newton
/// iterations; otherwise intercepts start at logit(mean) and slopes at zero.
inline LogisticConditionalsModel fit_logistic_conditionals(const WeightedSample& sample,
                                                           const LogisticFitOptions& opt = {},
                                                           const LogisticConditionalsModel* init = nullptr) {
  const std::size_t n = sample.size();
  if (n < 1) throw ModelError("empty sample");
  const std::size_t d = sample.dim();
  const double p_min = opt.p_min > 0.0 ? opt.p_min : default_p_min(n);
  const auto cs = detail::compress(sample);
  const auto mo = detail::moments_of(cs, d);

  LogisticConditionalsModel model;
  model.rows_.resize(d);
  model.order_ = (init && init->dim() == d) ? init->order_ : LogisticConditionalsModel::identity(d);
  model.diagnostics_.assign(d, RowFit{});
  const auto st = select_structure(mo.mean, mo.corr, opt.eps, opt.delta, model.order_);
  const double ridge = opt.penalty / static_cast<double>(n);
  const bool warm = init && init->dim() == d;

  parallel_for(d, opt.jobs, [&](std::size_t i) {
    const double pbar = clamp_probability(mo.mean[i], p_min);
    if (st.independent[i] || n < 2) {
      model.set_independent(i, pbar);
      return;
    }
    const auto& L = st.predictors[i];
    Eigen::VectorXd b0 = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(L.size() + 1));
    if (warm) {
      const auto& prev = init->rows_[i];
      b0(static_cast<Eigen::Index>(L.size())) = prev.independent ? logit(prev.p) : prev.intercept;
      for (std::size_t t = 0; t < L.size(); ++t) {
        const auto it = std::find(prev.predictors.begin(), prev.predictors.end(), L[t]);
        if (it != prev.predictors.end()) b0(static_cast<Eigen::Index>(t)) = prev.slopes[static_cast<std::size_t>(it - prev.predictors.begin())];
      }
    } else {
      b0(static_cast<Eigen::Index>(L.size())) = logit(pbar);
    }
    auto fit = detail::newton_logistic(cs, i, L, std::move(b0), opt, ridge);
    auto& diag = model.diagnostics_[i];
    diag.regression = true;
    diag.iterations = fit.iterations;
    diag.gradient_norm = fit.gradient_norm;
    if (!fit.ok) {
      diag.demoted = true;
      model.set_independent(i, pbar);
      return;
    }
    auto& r = model.rows_[i];
    r = LogisticConditionalsModel::Row{};
    r.independent = false;
    r.intercept = fit.b(static_cast<Eigen::Index>(L.size()));
    r.predictors = L;
    r.slopes.resize(L.size());
    for (std::size_t t = 0; t < L.size(); ++t) r.slopes[t] = fit.b(static_cast<Eigen::Index>(t));
  });
  return model;
}

/// Exact E_q[g] by enumeration of all 2^d points.
template <class Model>
std::vector<double> brute_force_marginals(const Model& model, std::size_t limit = 20) {
  const std::size_t d = model.dim();
  if (d > limit || d >= 63) throw ModelError("enumeration limit exceeded: d = " + std::to_string(d));
  std::vector<double> marg(d, 0.0);
  for (std::uint64_t c = 0; c < (std::uint64_t{1} << d); ++c) {
    const auto g = BinaryVector::from_code(c, d);
    const double p = std::exp(model.log_density(g));
    for (std::size_t i = 0; i < d; ++i)
      if (g[i]) marg[i] += p;
  }
  return marg;
}

/// Total mass over all 2^d points; 1 for a valid model.
template <class Model>
double brute_force_total_mass(const Model& model, std::size_t limit = 20) {
  const std::size_t d = model.dim();
  if (d > limit || d >= 63) throw ModelError("enumeration limit exceeded: d = " + std::to_string(d));
  double total = 0.0;
  for (std::uint64_t c = 0; c < (std::uint64_t{1} << d); ++c) total += std::exp(model.log_density(BinaryVector::from_code(c, d)));
  return total;
}

// ---------------------------------------------------------------------------
// Runtime choice of proposal family

enum class ProposalFamily { logistic, product };

struct ProposalOptions {
  ProposalFamily family = ProposalFamily::logistic;
  LogisticFitOptions logistic{};
};

/// Either family behind one interface.
class Proposal {
 public:
  Proposal() = default;
  explicit Proposal(ProductModel m) : model_(std::move(m)) {}
  explicit Proposal(LogisticConditionalsModel m) : model_(std::move(m)) {}

  std::size_t dim() const {
    return std::visit([](const auto& m) { return m.dim(); }, model_);
  }
  double log_density(const BinaryVector& g) const {
    return std::visit([&](const auto& m) { return m.log_density(g); }, model_);
  }
  Draw sample_and_evaluate(Rng& rng) const {
    return std::visit([&](const auto& m) { return m.sample_and_evaluate(rng); }, model_);
  }
  const LogisticConditionalsModel* logistic() const { return std::get_if<LogisticConditionalsModel>(&model_); }
  const ProductModel* product() const { return std::get_if<ProductModel>(&model_); }

 private:
  std::variant<ProductModel, LogisticConditionalsModel> model_;
};

/// Fit the configured family; `previous` warm-starts the logistic fit.
inline Proposal fit_proposal(const WeightedSample& s, const ProposalOptions& opt, const Proposal* previous = nullptr) {
  if (opt.family == ProposalFamily::product) return Proposal(fit_product(s, opt.logistic.p_min));
  const LogisticConditionalsModel* init = previous ? previous->logistic() : nullptr;
  return Proposal(fit_logistic_conditionals(s, opt.logistic, init));
}

}  // namespace binsmc
