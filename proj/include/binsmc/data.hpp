#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <cstddef>
#include <fstream>
#include <istream>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "rng.hpp"

namespace binsmc {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A numeric table split into one response and p covariates.
struct RawDataset {
  std::string response_name;
  std::vector<double> response;
  std::vector<std::string> covariate_names;
  std::vector<std::vector<double>> covariates;  // p columns of length m

  std::size_t rows() const noexcept { return response.size(); }
  std::size_t cols() const noexcept { return covariates.size(); }
};

struct ExpansionSpec {
  bool add_constant = true;
  bool add_squares = false;
  std::vector<std::string> square_exclude;  // e.g. binary columns
  std::vector<std::string> add_logs;        // log-transformed copies, treated as base covariates
  bool add_first_order_interactions = false;
  bool drop_degenerate = false;
};

enum class ColumnKind { constant, main, log, square, interaction };

inline std::string_view to_string(ColumnKind k) {
  switch (k) {
    case ColumnKind::constant: return "constant";
    case ColumnKind::main: return "main";
    case ColumnKind::log: return "log";
    case ColumnKind::square: return "square";
    case ColumnKind::interaction: return "interaction";
  }
  return "?";
}

struct ColumnDescriptor {
  std::string name;
  ColumnKind kind = ColumnKind::main;
};

/// Column `column` is the elementwise product of columns `left` and `right`.
struct InteractionTerm {
  std::size_t column = 0;
  std::size_t left = 0;
  std::size_t right = 0;
  friend bool operator==(const InteractionTerm&, const InteractionTerm&) = default;
};

struct DesignMatrix {
  Eigen::VectorXd y;
  Eigen::MatrixXd Z;
  std::vector<ColumnDescriptor> columns;
  std::vector<InteractionTerm> interactions;
  std::vector<std::string> dropped;  // names removed by drop_degenerate

  std::size_t rows() const noexcept { return static_cast<std::size_t>(Z.rows()); }
  std::size_t cols() const noexcept { return static_cast<std::size_t>(Z.cols()); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(columns.size());
    for (const auto& c : columns) out.push_back(c.name);
    return out;
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::optional<double> parse_double(std::string_view s) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double value = 0.0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, value);
  if (ec != std::errc() || ptr != end || s.empty() || !std::isfinite(value)) return std::nullopt;
  return value;
}

}  // namespace detail

/// Parse a comma-separated numeric table with a header row.
/// `source` only labels error messages.
inline RawDataset parse_csv(std::istream& in, const std::string& response, const std::string& source = "<stream>") {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    for (auto f : detail::split_commas(line)) header.emplace_back(f);
    break;
  }
  if (header.empty()) throw DataError(source + ": missing header row");
  {
    std::unordered_set<std::string> seen;
    for (const auto& h : header) {
      if (h.empty()) throw DataError(source + ": empty column name in header");
      if (!seen.insert(h).second) throw DataError(source + ": duplicate column name '" + h + "'");
    }
  }
  const auto resp_it = std::find(header.begin(), header.end(), response);
  if (resp_it == header.end()) throw DataError(source + ": response column '" + response + "' not found");
  const auto resp_col = static_cast<std::size_t>(resp_it - header.begin());

  std::vector<std::vector<double>> cols(header.size());
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_commas(line);
    if (fields.size() != header.size())
      throw DataError(source + ": line " + std::to_string(line_no) + " has " + std::to_string(fields.size()) +
                      " fields, expected " + std::to_string(header.size()));
    for (std::size_t c = 0; c < fields.size(); ++c) {
      const auto v = detail::parse_double(fields[c]);
      if (!v)
        throw DataError(source + ": non-numeric value '" + std::string(fields[c]) + "' at line " +
                        std::to_string(line_no) + ", column '" + header[c] + "'");
      cols[c].push_back(*v);
    }
  }

  RawDataset raw;
  raw.response_name = response;
  raw.response = std::move(cols[resp_col]);
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c == resp_col) continue;
    raw.covariate_names.push_back(header[c]);
    raw.covariates.push_back(std::move(cols[c]));
  }
  if (raw.rows() < 2) throw DataError(source + ": need at least two data rows");
  return raw;
}

inline RawDataset load_csv(const std::string& path, const std::string& response) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return parse_csv(in, response, path);
}

/// Build the expanded design. Column order: constant, mains, logs, squares, interactions.
/// Logs count as base covariates, so they take part in squares and interactions.
inline DesignMatrix expand_design(const RawDataset& raw, const ExpansionSpec& spec) {
  const std::size_t m = raw.rows();
  const std::size_t p = raw.cols();
  if (raw.covariates.size() != raw.covariate_names.size()) throw DataError("covariate names/columns mismatch");
  std::unordered_map<std::string, std::size_t> by_name;
  for (std::size_t j = 0; j < p; ++j) {
    if (raw.covariates[j].size() != m) throw DataError("column '" + raw.covariate_names[j] + "' has wrong length");
    if (!by_name.emplace(raw.covariate_names[j], j).second)
      throw DataError("duplicate column name '" + raw.covariate_names[j] + "'");
  }
  auto lookup = [&](const std::string& name) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw DataError("unknown column '" + name + "' in expansion spec");
    return it->second;
  };

  struct Candidate {
    std::string name;
    ColumnKind kind;
    std::vector<double> values;
    std::size_t left = 0, right = 0;  // candidate indices, interactions only
  };
  std::vector<Candidate> cand;

  if (spec.add_constant) cand.push_back({"const", ColumnKind::constant, std::vector<double>(m, 1.0)});
  std::vector<std::size_t> base;  // candidate indices of mains and logs
  for (std::size_t j = 0; j < p; ++j) {
    base.push_back(cand.size());
    cand.push_back({raw.covariate_names[j], ColumnKind::main, raw.covariates[j]});
  }
  for (const auto& name : spec.add_logs) {
    const auto& src = raw.covariates[lookup(name)];
    std::vector<double> v(m);
    for (std::size_t r = 0; r < m; ++r) {
      if (!(src[r] > 0.0)) throw DataError("log of non-positive value in column '" + name + "'");
      v[r] = std::log(src[r]);
    }
    base.push_back(cand.size());
    cand.push_back({"log(" + name + ")", ColumnKind::log, std::move(v)});
  }
  for (const auto& name : spec.square_exclude) (void)lookup(name);
  if (spec.add_squares) {
    for (std::size_t b : base) {
      const std::string& name = cand[b].name;
      if (std::find(spec.square_exclude.begin(), spec.square_exclude.end(), name) != spec.square_exclude.end())
        continue;
      std::vector<double> v(m);
      for (std::size_t r = 0; r < m; ++r) v[r] = cand[b].values[r] * cand[b].values[r];
      cand.push_back({name + "^2", ColumnKind::square, std::move(v)});
    }
  }
  if (spec.add_first_order_interactions) {
    for (std::size_t a = 0; a < base.size(); ++a)
      for (std::size_t b = a + 1; b < base.size(); ++b) {
        const auto& ca = cand[base[a]];
        const auto& cb = cand[base[b]];
        std::vector<double> v(m);
        for (std::size_t r = 0; r < m; ++r) v[r] = ca.values[r] * cb.values[r];
        cand.push_back({ca.name + "*" + cb.name, ColumnKind::interaction, std::move(v), base[a], base[b]});
      }
  }

  // Exact-duplicate and all-zero detection. `alias[c]` is the kept candidate equal to c.
  constexpr std::size_t none = static_cast<std::size_t>(-1);
  std::vector<std::size_t> alias(cand.size(), none);
  std::vector<std::string> dropped;
  if (spec.drop_degenerate) {
    struct VecHash {
      std::size_t operator()(const std::vector<double>* v) const noexcept {
        std::uint64_t h = 0;
        for (double x : *v) {
          std::uint64_t bits;
          const double z = x == 0.0 ? 0.0 : x;  // fold -0.0
          std::memcpy(&bits, &z, sizeof bits);
          h = mix64(h ^ bits);
        }
        return static_cast<std::size_t>(h);
      }
    };
    struct VecEq {
      bool operator()(const std::vector<double>* a, const std::vector<double>* b) const noexcept { return *a == *b; }
    };
    std::unordered_map<const std::vector<double>*, std::size_t, VecHash, VecEq> seen;
    for (std::size_t c = 0; c < cand.size(); ++c) {
      const bool zero = std::all_of(cand[c].values.begin(), cand[c].values.end(), [](double x) { return x == 0.0; });
      if (zero) {
        dropped.push_back(cand[c].name);
        continue;
      }
      const auto [it, inserted] = seen.emplace(&cand[c].values, c);
      if (!inserted) {
        alias[c] = it->second;
        dropped.push_back(cand[c].name);
        continue;
      }
      alias[c] = c;
    }
  } else {
    for (std::size_t c = 0; c < cand.size(); ++c) alias[c] = c;
  }

  std::vector<std::size_t> out_index(cand.size(), none);
  DesignMatrix dm;
  for (std::size_t c = 0; c < cand.size(); ++c)
    if (alias[c] == c) {
      out_index[c] = dm.columns.size();
      dm.columns.push_back({cand[c].name, cand[c].kind});
    }
  const std::size_t d = dm.columns.size();
  dm.Z.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d));
  dm.y.resize(static_cast<Eigen::Index>(m));
  for (std::size_t r = 0; r < m; ++r) dm.y(static_cast<Eigen::Index>(r)) = raw.response[r];
  for (std::size_t c = 0; c < cand.size(); ++c) {
    if (out_index[c] == none) continue;
    for (std::size_t r = 0; r < m; ++r)
      dm.Z(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(out_index[c])) = cand[c].values[r];
  }
  for (std::size_t c = 0; c < cand.size(); ++c) {
    if (cand[c].kind != ColumnKind::interaction || out_index[c] == none) continue;
    const std::size_t l = out_index[alias[cand[c].left]];
    const std::size_t r = out_index[alias[cand[c].right]];
    auto& desc = dm.columns[out_index[c]];
    if (l == r) {
      desc.kind = ColumnKind::square;
      continue;
    }
    if (dm.columns[l].kind == ColumnKind::constant || dm.columns[r].kind == ColumnKind::constant) continue;
    dm.interactions.push_back({out_index[c], std::min(l, r), std::max(l, r)});
  }
  dm.dropped = std::move(dropped);
  return dm;
}

/// Design with only a constant column prepended (or nothing) and no expansion.
inline DesignMatrix plain_design(const RawDataset& raw, bool add_constant) {
  ExpansionSpec spec;
  spec.add_constant = add_constant;
  return expand_design(raw, spec);
}

/// The four-covariate toy problem: y = v1 + v2 with two noisy proxies per latent term.
/// m = 100, mu = 10. Proxy noise has standard deviation `proxy_sd`, mu/2 by default.
inline DesignMatrix generate_toy(std::uint64_t seed, bool add_constant = false, double proxy_sd = 5.0) {
  constexpr std::size_t m = 100;
  constexpr double mu = 10.0;
  Rng rng(derive_seed(seed, {0x70797}));
  std::normal_distribution<double> unit(0.0, 1.0);
  RawDataset raw;
  raw.response_name = "y";
  raw.covariate_names = {"z1", "z2", "z3", "z4"};
  raw.covariates.assign(4, std::vector<double>(m));
  raw.response.resize(m);
  const double sd = proxy_sd;
  for (std::size_t r = 0; r < m; ++r) {
    const double v1 = -mu + unit(rng);
    const double v2 = mu + unit(rng);
    raw.response[r] = v1 + v2;
    raw.covariates[0][r] = v1 + sd * unit(rng);
    raw.covariates[1][r] = v1 + sd * unit(rng);
    raw.covariates[2][r] = v2 + sd * unit(rng);
    raw.covariates[3][r] = v2 + sd * unit(rng);
  }
  return plain_design(raw, add_constant);
}

/// Latent-factor design: `factors` hidden regressors, each observed through
/// `proxies_per_factor` noisy copies, plus pure-noise columns. Nearly
/// interchangeable proxies make the posterior over subsets multimodal.
struct LatentDesignSpec {
  std::size_t rows = 200;
  std::size_t factors = 3;
  std::size_t proxies_per_factor = 3;
  std::size_t noise_columns = 1;
  double proxy_sd = 0.1;
  double response_sd = 1.0;
  std::vector<double> effects{1.0, 1.0, 1.0};
  bool add_constant = false;
};

inline DesignMatrix generate_latent(std::uint64_t seed, const LatentDesignSpec& spec) {
  if (spec.effects.size() < spec.factors) throw DataError("latent design: need one effect per factor");
  Rng rng(derive_seed(seed, {0x1a7e47}));
  std::normal_distribution<double> unit(0.0, 1.0);
  const std::size_t m = spec.rows;
  RawDataset raw;
  raw.response_name = "y";
  raw.response.assign(m, 0.0);
  const std::size_t p = spec.factors * spec.proxies_per_factor + spec.noise_columns;
  raw.covariates.assign(p, std::vector<double>(m));
  for (std::size_t f = 0; f < spec.factors; ++f)
    for (std::size_t k = 0; k < spec.proxies_per_factor; ++k)
      raw.covariate_names.push_back("f" + std::to_string(f + 1) + "_" + std::to_string(k + 1));
  for (std::size_t k = 0; k < spec.noise_columns; ++k) raw.covariate_names.push_back("noise" + std::to_string(k + 1));
  for (std::size_t r = 0; r < m; ++r) {
    double y = 0.0;
    for (std::size_t f = 0; f < spec.factors; ++f) {
      const double latent = unit(rng);
      y += spec.effects[f] * latent;
      for (std::size_t k = 0; k < spec.proxies_per_factor; ++k)
        raw.covariates[f * spec.proxies_per_factor + k][r] = latent + spec.proxy_sd * unit(rng);
    }
    for (std::size_t k = 0; k < spec.noise_columns; ++k)
      raw.covariates[spec.factors * spec.proxies_per_factor + k][r] = unit(rng);
    raw.response[r] = y + spec.response_sd * unit(rng);
  }
  return plain_design(raw, spec.add_constant);
}

}  // namespace binsmc
