#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "data.hpp"
#include "mcmc.hpp"
#include "parallel.hpp"
#include "posterior.hpp"
#include "smc.hpp"

namespace binsmc {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// key=value configuration

/// Flat key=value pairs. '#' starts a comment; blank lines are ignored.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::istream& in, const std::string& source = "<stream>") {
    KeyValueConfig cfg;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const auto text = detail::trim(line);
      if (text.empty()) continue;
      const auto eq = text.find('=');
      if (eq == std::string_view::npos)
        throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key=value");
      const std::string key(detail::trim(text.substr(0, eq)));
      const std::string value(detail::trim(text.substr(eq + 1)));
      if (key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
      cfg.values_[key] = value;
    }
    return cfg;
  }

  static KeyValueConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    return parse(in, path);
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }
  double get(const std::string& key, double fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const auto v = detail::parse_double(it->second);
    if (!v) throw ConfigError("key '" + key + "': '" + it->second + "' is not a number");
    return *v;
  }
  std::uint64_t get_count(const std::string& key, std::uint64_t fallback) const {
    const double v = get(key, static_cast<double>(fallback));
    if (!(v >= 0.0) || v != std::floor(v) || v > 1.8e19) throw ConfigError("key '" + key + "' must be a nonnegative integer");
    return static_cast<std::uint64_t>(v);
  }
  bool get_bool(const std::string& key, bool fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const auto& v = it->second;
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("key '" + key + "': '" + v + "' is not a boolean");
  }
  std::vector<std::string> get_list(const std::string& key) const {
    std::vector<std::string> out;
    const auto it = values_.find(key);
    if (it == values_.end()) return out;
    for (auto part : detail::split_commas(it->second)) {
      const auto t = detail::trim(part);
      if (!t.empty()) out.emplace_back(t);
    }
    return out;
  }
  const std::map<std::string, std::string>& values() const noexcept { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

// ---------------------------------------------------------------------------
// Experiment

enum class ProblemSource { toy, latent, csv };

struct ProblemConfig {
  ProblemSource source = ProblemSource::toy;
  std::uint64_t seed = 1;  // generator seed for synthetic problems
  std::string csv_path;
  std::string response;
  ExpansionSpec expansion{};
  LatentDesignSpec latent{};
  Criterion criterion = Criterion::hierarchical_bayes;
  bool constrained = false;
};

enum class SamplerKind { smc, smc_product, mmg, amg, gibbs };

inline std::string to_string(SamplerKind k) {
  switch (k) {
    case SamplerKind::smc: return "smc";
    case SamplerKind::smc_product: return "smc-product";
    case SamplerKind::mmg: return "mmg";
    case SamplerKind::amg: return "amg";
    case SamplerKind::gibbs: return "gibbs";
  }
  return "?";
}

inline SamplerKind parse_sampler(const std::string& s) {
  if (s == "smc") return SamplerKind::smc;
  if (s == "smc-product") return SamplerKind::smc_product;
  if (s == "mmg") return SamplerKind::mmg;
  if (s == "amg") return SamplerKind::amg;
  if (s == "gibbs") return SamplerKind::gibbs;
  throw ConfigError("unknown sampler '" + s + "' (expected smc, smc-product, mmg, amg or gibbs)");
}

struct ExperimentConfig {
  ProblemConfig problem{};
  std::vector<SamplerKind> samplers{SamplerKind::smc, SamplerKind::mmg};
  std::size_t repetitions = 1;
  std::uint64_t seed = 1;
  std::uint64_t budget = 2'500'000;
  std::size_t jobs = 1;

  std::size_t smc_n = 15000;
  double smc_eta = 0.9;
  double smc_eps = 0.02;
  double smc_delta = 0.075;
  double mcmc_kstar = 2.0;
  std::uint64_t mcmc_burn_in = 25'000;
  double amcmc_delta = 0.01;
  double amcmc_lambda = 0.01;
  std::uint64_t amcmc_pre_adapt = 250'000;
  std::uint64_t amcmc_interval = 200'000;

  std::string output_dir = "results";
  std::string format = "csv";

  void validate() const {
    if (repetitions < 1) throw ConfigError("repetitions must be at least 1");
    if (samplers.empty()) throw ConfigError("no samplers configured");
    const bool has_smc = std::any_of(samplers.begin(), samplers.end(),
                                     [](auto s) { return s == SamplerKind::smc || s == SamplerKind::smc_product; });
    if (has_smc && budget < smc_n) throw ConfigError("budget must be at least smc.n");
    if (format != "csv" && format != "json") throw ConfigError("format must be csv or json");
  }
};

inline ExperimentConfig experiment_from(const KeyValueConfig& kv) {
  ExperimentConfig c;
  const auto src = kv.get("problem", std::string("toy"));
  if (src == "toy") c.problem.source = ProblemSource::toy;
  else if (src == "latent") c.problem.source = ProblemSource::latent;
  else if (src == "csv") c.problem.source = ProblemSource::csv;
  else throw ConfigError("problem must be toy, latent or csv");
  c.problem.seed = kv.get_count("problem.seed", 1);
  c.problem.csv_path = kv.get("csv.path", std::string());
  c.problem.response = kv.get("csv.response", std::string());
  auto& e = c.problem.expansion;
  e.add_constant = kv.get_bool("expand.constant", true);
  e.add_squares = kv.get_bool("expand.squares", false);
  e.square_exclude = kv.get_list("expand.square_exclude");
  e.add_logs = kv.get_list("expand.logs");
  e.add_first_order_interactions = kv.get_bool("expand.interactions", false);
  e.drop_degenerate = kv.get_bool("expand.drop_degenerate", false);
  auto& l = c.problem.latent;
  l.rows = kv.get_count("latent.rows", l.rows);
  l.factors = kv.get_count("latent.factors", l.factors);
  l.proxies_per_factor = kv.get_count("latent.proxies", l.proxies_per_factor);
  l.noise_columns = kv.get_count("latent.noise", l.noise_columns);
  l.proxy_sd = kv.get("latent.proxy_sd", l.proxy_sd);
  l.response_sd = kv.get("latent.response_sd", l.response_sd);
  if (kv.has("latent.effects")) {
    l.effects.clear();
    for (const auto& s : kv.get_list("latent.effects")) {
      const auto v = detail::parse_double(s);
      if (!v) throw ConfigError("latent.effects: '" + s + "' is not a number");
      l.effects.push_back(*v);
    }
  }
  l.add_constant = kv.get_bool("latent.constant", l.add_constant);
  const auto crit = kv.get("criterion", std::string("hb"));
  if (crit == "hb") c.problem.criterion = Criterion::hierarchical_bayes;
  else if (crit == "bic") c.problem.criterion = Criterion::bic;
  else throw ConfigError("criterion must be hb or bic");
  c.problem.constrained = kv.get_bool("constraints", false);

  if (kv.has("samplers")) {
    c.samplers.clear();
    for (const auto& s : kv.get_list("samplers")) c.samplers.push_back(parse_sampler(s));
  }
  c.repetitions = kv.get_count("repetitions", c.repetitions);
  c.seed = kv.get_count("seed", c.seed);
  c.budget = kv.get_count("budget", c.budget);
  c.jobs = kv.get_count("jobs", c.jobs);
  c.smc_n = kv.get_count("smc.n", c.smc_n);
  c.smc_eta = kv.get("smc.eta", c.smc_eta);
  c.smc_eps = kv.get("smc.eps", c.smc_eps);
  c.smc_delta = kv.get("smc.delta", c.smc_delta);
  c.mcmc_kstar = kv.get("mcmc.kstar", c.mcmc_kstar);
  c.mcmc_burn_in = kv.get_count("mcmc.burn_in", c.mcmc_burn_in);
  c.amcmc_delta = kv.get("amcmc.delta", c.amcmc_delta);
  c.amcmc_lambda = kv.get("amcmc.lambda", c.amcmc_lambda);
  c.amcmc_pre_adapt = kv.get_count("amcmc.pre_adapt", c.amcmc_pre_adapt);
  c.amcmc_interval = kv.get_count("amcmc.interval", c.amcmc_interval);
  c.output_dir = kv.get("output.dir", c.output_dir);
  c.format = kv.get("output.format", c.format);
  c.validate();
  return c;
}

struct Problem {
  DesignMatrix design;
  PosteriorModel posterior;
};

inline Problem build_problem(const ProblemConfig& pc) {
  DesignMatrix dm;
  switch (pc.source) {
    case ProblemSource::toy: dm = generate_toy(pc.seed); break;
    case ProblemSource::latent: dm = generate_latent(pc.seed, pc.latent); break;
    case ProblemSource::csv: {
      if (pc.csv_path.empty() || pc.response.empty()) throw ConfigError("csv problem needs csv.path and csv.response");
      dm = expand_design(load_csv(pc.csv_path, pc.response), pc.expansion);
      break;
    }
  }
  auto hyper = default_hyperparameters(dm);
  auto post = PosteriorModel::from_design(dm, hyper, pc.criterion, pc.constrained);
  return Problem{std::move(dm), std::move(post)};
}

struct Indicators {
  double wall_seconds = 0.0;
  double evaluations = 0.0;
  double acceptance_rate = 0.0;
  double chain_length = 0.0;  // steps for chains, sweeps x n for SMC
  double moves = 0.0;
};

struct RunReport {
  std::string sampler;
  std::size_t repetition = 0;
  std::uint64_t seed = 0;
  std::vector<double> marginals;
  std::optional<double> log_evidence;
  bool completed = true;
  Indicators indicators{};
};

/// Seeds depend only on (master seed, sampler position, repetition).
inline std::uint64_t repetition_seed(std::uint64_t master, std::size_t sampler, std::size_t rep) {
  return derive_seed(master, {0xbe7c, sampler, rep});
}

inline RunReport run_sampler(const PosteriorModel& post, const ExperimentConfig& cfg, SamplerKind kind,
                             std::uint64_t seed, std::size_t inner_jobs = 1) {
  RunReport r;
  r.sampler = to_string(kind);
  r.seed = seed;
  if (kind == SamplerKind::smc || kind == SamplerKind::smc_product) {
    SmcConfig sc;
    sc.n = cfg.smc_n;
    sc.target_ess = cfg.smc_eta;
    sc.budget = cfg.budget;
    sc.seed = seed;
    sc.jobs = inner_jobs;
    sc.proposal.family = kind == SamplerKind::smc ? ProposalFamily::logistic : ProposalFamily::product;
    sc.proposal.logistic.eps = cfg.smc_eps;
    sc.proposal.logistic.delta = cfg.smc_delta;
    auto res = run_resample_move(post, sc);
    r.marginals = std::move(res.marginals);
    r.completed = res.trace.completed;
    if (r.completed) r.log_evidence = res.log_evidence;
    r.indicators.wall_seconds = res.trace.wall_seconds;
    r.indicators.evaluations = static_cast<double>(res.trace.evaluations);
    r.indicators.acceptance_rate = res.trace.acceptance_rate();
    r.indicators.chain_length = static_cast<double>(res.trace.proposed);
    r.indicators.moves = static_cast<double>(res.trace.accepted);
  } else {
    ChainConfig cc;
    cc.kernel = kind == SamplerKind::mmg ? Kernel::mmg : kind == SamplerKind::amg ? Kernel::amg : Kernel::gibbs;
    cc.kstar = cfg.mcmc_kstar;
    cc.budget = cfg.budget;
    cc.burn_in = cfg.mcmc_burn_in;
    cc.pre_adapt = cfg.amcmc_pre_adapt;
    cc.adapt_interval = cfg.amcmc_interval;
    cc.delta = cfg.amcmc_delta;
    cc.lambda = cfg.amcmc_lambda;
    cc.seed = seed;
    auto res = run_chain(post, cc);
    r.marginals = std::move(res.marginals);
    r.indicators.wall_seconds = res.trace.wall_seconds;
    r.indicators.evaluations = static_cast<double>(res.trace.evaluations);
    r.indicators.acceptance_rate = res.trace.acceptance_rate();
    r.indicators.chain_length = static_cast<double>(res.trace.steps);
    r.indicators.moves = static_cast<double>(res.trace.moves);
  }
  return r;
}

/// All repetitions of all samplers, ordered by sampler then repetition.
inline std::vector<RunReport> run_experiment(const ExperimentConfig& cfg, const PosteriorModel& post) {
  cfg.validate();
  const std::size_t per = cfg.repetitions;
  std::vector<RunReport> out(cfg.samplers.size() * per);
  parallel_for(out.size(), cfg.jobs, [&](std::size_t job) {
    const std::size_t s = job / per, rep = job % per;
    out[job] = run_sampler(post, cfg, cfg.samplers[s], repetition_seed(cfg.seed, s, rep));
    out[job].repetition = rep;
  });
  return out;
}

inline std::vector<RunReport> run_experiment(const ExperimentConfig& cfg) {
  const auto problem = build_problem(cfg.problem);
  return run_experiment(cfg, problem.posterior);
}

// ---------------------------------------------------------------------------
// Summaries

/// Linear interpolation between order statistics at position p (n - 1).
inline double quantile(std::vector<double> v, double p) {
  if (v.empty()) throw std::invalid_argument("quantile of an empty set");
  std::sort(v.begin(), v.end());
  const double h = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct ComponentSummary {
  std::string component;
  std::string sampler;
  double median = 0.0, q10 = 0.0, q90 = 0.0, min = 0.0, max = 0.0;
  friend bool operator==(const ComponentSummary&, const ComponentSummary&) = default;
};

struct IndicatorSummary {
  std::string sampler;
  std::size_t runs = 0;
  Indicators mean{};
  friend bool operator==(const IndicatorSummary& a, const IndicatorSummary& b) {
    return a.sampler == b.sampler && a.runs == b.runs && a.mean.wall_seconds == b.mean.wall_seconds &&
           a.mean.evaluations == b.mean.evaluations && a.mean.acceptance_rate == b.mean.acceptance_rate &&
           a.mean.chain_length == b.mean.chain_length && a.mean.moves == b.mean.moves;
  }
};

struct SummaryStats {
  std::string quantile_rule = "linear interpolation between order statistics (type 7)";
  std::vector<ComponentSummary> components;  // sampler-major, then component order
  std::vector<IndicatorSummary> indicators;
  friend bool operator==(const SummaryStats&, const SummaryStats&) = default;
};

/// Per-sampler statistics. Samplers appear in sorted name order, so shuffled
/// inputs give identical output.
inline SummaryStats summarize(const std::vector<RunReport>& reports, const std::vector<std::string>& names = {}) {
  SummaryStats st;
  std::map<std::string, std::vector<const RunReport*>> by;
  for (const auto& r : reports) by[r.sampler].push_back(&r);
  for (auto& [sampler, rs] : by) {
    const std::size_t d = rs.front()->marginals.size();
    for (const auto* r : rs)
      if (r->marginals.size() != d) throw std::invalid_argument("reports for " + sampler + " differ in dimension");
    for (std::size_t i = 0; i < d; ++i) {
      std::vector<double> v;
      v.reserve(rs.size());
      for (const auto* r : rs) v.push_back(r->marginals[i]);
      ComponentSummary c;
      c.component = i < names.size() ? names[i] : "x" + std::to_string(i + 1);
      c.sampler = sampler;
      c.median = quantile(v, 0.5);
      c.q10 = quantile(v, 0.1);
      c.q90 = quantile(v, 0.9);
      c.min = *std::min_element(v.begin(), v.end());
      c.max = *std::max_element(v.begin(), v.end());
      st.components.push_back(std::move(c));
    }
    // Sum in a canonical order so the means do not depend on input order.
    std::vector<Indicators> ind;
    for (const auto* r : rs) ind.push_back(r->indicators);
    auto mean_of = [&](double Indicators::*f) {
      std::vector<double> v;
      for (const auto& x : ind) v.push_back(x.*f);
      std::sort(v.begin(), v.end());
      double s = 0.0;
      for (double x : v) s += x;
      return s / static_cast<double>(v.size());
    };
    IndicatorSummary is;
    is.sampler = sampler;
    is.runs = rs.size();
    is.mean.wall_seconds = mean_of(&Indicators::wall_seconds);
    is.mean.evaluations = mean_of(&Indicators::evaluations);
    is.mean.acceptance_rate = mean_of(&Indicators::acceptance_rate);
    is.mean.chain_length = mean_of(&Indicators::chain_length);
    is.mean.moves = mean_of(&Indicators::moves);
    st.indicators.push_back(std::move(is));
  }
  return st;
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json to_json(const RunReport& r, bool include_wall_time = true) {
  nlohmann::json j;
  j["sampler"] = r.sampler;
  j["repetition"] = r.repetition;
  j["seed"] = r.seed;
  j["marginals"] = r.marginals;
  j["log_evidence"] = r.log_evidence ? nlohmann::json(*r.log_evidence) : nlohmann::json(nullptr);
  j["completed"] = r.completed;
  nlohmann::json ind;
  if (include_wall_time) ind["time"] = r.indicators.wall_seconds;
  ind["evaluations"] = r.indicators.evaluations;
  ind["acceptance_rate"] = r.indicators.acceptance_rate;
  ind["chain_length"] = r.indicators.chain_length;
  ind["moves"] = r.indicators.moves;
  j["indicators"] = ind;
  return j;
}

inline RunReport report_from_json(const nlohmann::json& j) {
  RunReport r;
  r.sampler = j.at("sampler").get<std::string>();
  r.repetition = j.at("repetition").get<std::size_t>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.marginals = j.at("marginals").get<std::vector<double>>();
  if (!j.at("log_evidence").is_null()) r.log_evidence = j.at("log_evidence").get<double>();
  r.completed = j.at("completed").get<bool>();
  const auto& ind = j.at("indicators");
  r.indicators.wall_seconds = ind.value("time", 0.0);
  r.indicators.evaluations = ind.at("evaluations").get<double>();
  r.indicators.acceptance_rate = ind.at("acceptance_rate").get<double>();
  r.indicators.chain_length = ind.at("chain_length").get<double>();
  r.indicators.moves = ind.at("moves").get<double>();
  return r;
}

/// Deterministic serialization of a report list; wall time is left out.
inline std::string canonical_reports(const std::vector<RunReport>& reports) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : reports) j.push_back(to_json(r, false));
  return j.dump(1);
}

inline nlohmann::json to_json(const SummaryStats& st) {
  nlohmann::json j;
  j["quantile_rule"] = st.quantile_rule;
  j["marginals"] = nlohmann::json::array();
  for (const auto& c : st.components)
    j["marginals"].push_back({{"component", c.component},
                              {"sampler", c.sampler},
                              {"median", c.median},
                              {"q10", c.q10},
                              {"q90", c.q90},
                              {"min", c.min},
                              {"max", c.max}});
  j["indicators"] = nlohmann::json::array();
  for (const auto& is : st.indicators)
    j["indicators"].push_back({{"sampler", is.sampler},
                               {"runs", is.runs},
                               {"time", is.mean.wall_seconds},
                               {"evaluations", is.mean.evaluations},
                               {"acceptance_rate", is.mean.acceptance_rate},
                               {"chain_length", is.mean.chain_length},
                               {"moves", is.mean.moves}});
  return j;
}

inline SummaryStats summary_from_json(const nlohmann::json& j) {
  SummaryStats st;
  st.quantile_rule = j.at("quantile_rule").get<std::string>();
  for (const auto& c : j.at("marginals"))
    st.components.push_back({c.at("component").get<std::string>(), c.at("sampler").get<std::string>(),
                             c.at("median").get<double>(), c.at("q10").get<double>(), c.at("q90").get<double>(),
                             c.at("min").get<double>(), c.at("max").get<double>()});
  for (const auto& i : j.at("indicators")) {
    IndicatorSummary is;
    is.sampler = i.at("sampler").get<std::string>();
    is.runs = i.at("runs").get<std::size_t>();
    is.mean.wall_seconds = i.at("time").get<double>();
    is.mean.evaluations = i.at("evaluations").get<double>();
    is.mean.acceptance_rate = i.at("acceptance_rate").get<double>();
    is.mean.chain_length = i.at("chain_length").get<double>();
    is.mean.moves = i.at("moves").get<double>();
    st.indicators.push_back(std::move(is));
  }
  return st;
}

inline const char* marginals_csv_header() { return "component,sampler,median,q10,q90,min,max"; }

namespace detail {
inline std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}
}  // namespace detail

inline void write_marginals_csv(const SummaryStats& st, std::ostream& out) {
  out << "# quantiles: " << st.quantile_rule << '\n' << marginals_csv_header() << '\n';
  for (const auto& c : st.components)
    out << c.component << ',' << c.sampler << ',' << detail::fmt(c.median) << ',' << detail::fmt(c.q10) << ','
        << detail::fmt(c.q90) << ',' << detail::fmt(c.min) << ',' << detail::fmt(c.max) << '\n';
}

/// One row per indicator, one column per sampler.
inline void write_indicators_csv(const SummaryStats& st, std::ostream& out) {
  out << "indicator";
  for (const auto& is : st.indicators) out << ',' << is.sampler;
  out << '\n';
  const std::pair<const char*, double Indicators::*> rows[] = {
      {"time", &Indicators::wall_seconds},
      {"evaluations", &Indicators::evaluations},
      {"acceptance_rate", &Indicators::acceptance_rate},
      {"chain_length", &Indicators::chain_length},
      {"moves", &Indicators::moves},
  };
  for (const auto& [name, field] : rows) {
    out << name;
    for (const auto& is : st.indicators) out << ',' << detail::fmt(is.mean.*field);
    out << '\n';
  }
  out << "runs";
  for (const auto& is : st.indicators) out << ',' << is.runs;
  out << '\n';
}

/// Parses the output of write_marginals_csv and write_indicators_csv.
inline SummaryStats read_summary_csv(std::istream& marginals, std::istream& indicators) {
  SummaryStats st;
  std::string line;
  bool header = false;
  while (std::getline(marginals, line)) {
    if (line.rfind("# quantiles: ", 0) == 0) {
      st.quantile_rule = line.substr(13);
      continue;
    }
    if (!header) {
      if (line != marginals_csv_header()) throw std::runtime_error("unexpected marginals header: " + line);
      header = true;
      continue;
    }
    const auto f = detail::split_commas(line);
    if (f.size() != 7) throw std::runtime_error("malformed marginals row: " + line);
    auto num = [](std::string_view s) {
      const auto v = detail::parse_double(s);
      if (!v) throw std::runtime_error("bad number '" + std::string(s) + "'");
      return *v;
    };
    st.components.push_back({std::string(f[0]), std::string(f[1]), num(f[2]), num(f[3]), num(f[4]), num(f[5]),
                             num(f[6])});
  }
  std::vector<std::vector<std::string>> table;
  while (std::getline(indicators, line)) {
    std::vector<std::string> row;
    for (auto f : detail::split_commas(line)) row.emplace_back(f);
    table.push_back(std::move(row));
  }
  if (table.empty()) throw std::runtime_error("empty indicators table");
  const std::size_t ns = table.front().size() - 1;
  st.indicators.resize(ns);
  for (std::size_t s = 0; s < ns; ++s) st.indicators[s].sampler = table.front()[s + 1];
  for (std::size_t r = 1; r < table.size(); ++r) {
    const auto& row = table[r];
    if (row.size() != ns + 1) throw std::runtime_error("malformed indicators row");
    for (std::size_t s = 0; s < ns; ++s) {
      const double v = *detail::parse_double(row[s + 1]);
      auto& m = st.indicators[s];
      if (row[0] == "time") m.mean.wall_seconds = v;
      else if (row[0] == "evaluations") m.mean.evaluations = v;
      else if (row[0] == "acceptance_rate") m.mean.acceptance_rate = v;
      else if (row[0] == "chain_length") m.mean.chain_length = v;
      else if (row[0] == "moves") m.mean.moves = v;
      else if (row[0] == "runs") m.runs = static_cast<std::size_t>(v);
    }
  }
  return st;
}

/// csv: marginals.csv and indicators.csv; json: summary.json.
inline void emit_report(const SummaryStats& st, const std::string& format, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  auto open = [&](const std::string& name) {
    std::ofstream f(dir / name);
    if (!f) throw std::runtime_error("cannot write " + (dir / name).string());
    return f;
  };
  if (format == "csv") {
    auto m = open("marginals.csv");
    write_marginals_csv(st, m);
    auto i = open("indicators.csv");
    write_indicators_csv(st, i);
  } else if (format == "json") {
    auto f = open("summary.json");
    f << to_json(st).dump(2) << '\n';
  } else {
    throw std::invalid_argument("format must be csv or json");
  }
}

inline void write_reports(const std::vector<RunReport>& reports, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  std::ofstream f(dir / "reports.json");
  if (!f) throw std::runtime_error("cannot write " + (dir / "reports.json").string());
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : reports) j.push_back(to_json(r));
  f << j.dump(1) << '\n';
}

inline std::vector<RunReport> read_reports(const std::filesystem::path& dir) {
  std::ifstream f(dir / "reports.json");
  if (!f) throw std::runtime_error("cannot read " + (dir / "reports.json").string());
  const auto j = nlohmann::json::parse(f);
  std::vector<RunReport> out;
  for (const auto& r : j) out.push_back(report_from_json(r));
  return out;
}

}  // namespace binsmc
