// Command-line front end: run experiments, summarize stored reports and
// enumerate small posteriors exactly.

#include <binsmc/binsmc.hpp>

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace binsmc;

namespace {

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> budget;
  std::optional<std::string> format;
  std::optional<std::size_t> jobs;
  std::optional<std::string> out;
};

// Relative data paths in a config file are taken relative to that file.
ExperimentConfig load_experiment(const std::string& path, const Overrides& o) {
  auto kv = KeyValueConfig::load(path);
  if (kv.has("csv.path")) {
    const fs::path p = kv.get("csv.path", std::string());
    if (p.is_relative()) kv.set("csv.path", (fs::path(path).parent_path() / p).lexically_normal().string());
  }
  if (o.seed) kv.set("seed", std::to_string(*o.seed));
  if (o.budget) kv.set("budget", std::to_string(*o.budget));
  if (o.format) kv.set("output.format", *o.format);
  if (o.jobs) kv.set("jobs", std::to_string(*o.jobs));
  if (o.out) kv.set("output.dir", *o.out);
  return experiment_from(kv);
}

void write_names(const std::vector<std::string>& names, const fs::path& dir) {
  std::ofstream f(dir / "components.txt");
  if (!f) throw std::runtime_error("cannot write " + (dir / "components.txt").string());
  for (const auto& n : names) f << n << '\n';
}

std::vector<std::string> read_names(const fs::path& dir) {
  std::vector<std::string> names;
  std::ifstream f(dir / "components.txt");
  for (std::string line; std::getline(f, line);)
    if (!line.empty()) names.push_back(line);
  return names;
}

void print_summary(const SummaryStats& st) {
  std::printf("%-24s %-12s %9s %9s %9s\n", "component", "sampler", "median", "q10", "q90");
  for (const auto& c : st.components)
    std::printf("%-24s %-12s %9.4f %9.4f %9.4f\n", c.component.c_str(), c.sampler.c_str(), c.median, c.q10, c.q90);
  for (const auto& is : st.indicators)
    std::printf("%s: %zu runs, mean acceptance %.4f, mean evaluations %.0f, mean time %.2f s\n", is.sampler.c_str(),
                is.runs, is.mean.acceptance_rate, is.mean.evaluations, is.mean.wall_seconds);
}

int cmd_run(const std::string& config, const Overrides& o) {
  const auto cfg = load_experiment(config, o);
  const auto problem = build_problem(cfg.problem);
  const auto names = problem.design.names();
  std::fprintf(stderr, "problem: %zu rows, %zu components; %zu sampler(s) x %zu repetition(s)\n", problem.design.rows(),
               problem.design.cols(), cfg.samplers.size(), cfg.repetitions);
  const auto reports = run_experiment(cfg, problem.posterior);
  const fs::path dir = cfg.output_dir;
  write_reports(reports, dir);
  write_names(names, dir);
  const auto st = summarize(reports, names);
  emit_report(st, cfg.format, dir);
  print_summary(st);
  std::fprintf(stderr, "results written to %s\n", dir.string().c_str());
  return 0;
}

int cmd_summarize(const std::string& dir, const Overrides& o) {
  const auto reports = read_reports(dir);
  const auto st = summarize(reports, read_names(dir));
  emit_report(st, o.format.value_or("csv"), dir);
  print_summary(st);
  return 0;
}

int cmd_enumerate(const std::string& config, const Overrides& o) {
  const auto cfg = load_experiment(config, o);
  const auto problem = build_problem(cfg.problem);
  const auto ex = enumerate_exact(problem.posterior);
  const auto names = problem.design.names();
  if (cfg.format == "json") {
    nlohmann::json j;
    j["log_evidence"] = ex.log_evidence;
    j["components"] = names;
    j["marginals"] = ex.marginals;
    std::cout << j.dump(2) << '\n';
  } else {
    std::printf("component,marginal\n");
    for (std::size_t i = 0; i < names.size(); ++i) std::printf("%s,%.10f\n", names[i].c_str(), ex.marginals[i]);
    std::printf("# log evidence: %.10f\n", ex.log_evidence);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequential Monte Carlo and MCMC samplers for Bayesian variable selection"};
  app.require_subcommand(1);
  Overrides o;
  app.add_option("--seed", o.seed, "master seed");
  app.add_option("--budget", o.budget, "score evaluations per run");
  app.add_option("--format", o.format, "output format")->check(CLI::IsMember({"csv", "json"}));
  app.add_option("--jobs", o.jobs, "worker threads")->check(CLI::PositiveNumber);

  std::string config, dir;
  auto* run = app.add_subcommand("run", "run the experiment described by a config file");
  run->add_option("config", config, "key=value config file")->required();
  run->add_option("--out", o.out, "output directory (overrides output.dir)");
  auto* sum = app.add_subcommand("summarize", "aggregate reports.json in a results directory");
  sum->add_option("dir", dir, "results directory")->required();
  auto* en = app.add_subcommand("enumerate", "exact marginals by full enumeration (small problems)");
  en->add_option("config", config, "key=value config file")->required();
  for (auto* sc : {run, sum, en}) sc->fallthrough();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(config, o);
    if (*sum) return cmd_summarize(dir, o);
    if (*en) return cmd_enumerate(config, o);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
