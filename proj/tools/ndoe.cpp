// ndoe command line: run | summarize | plot | oracle | gradcheck
//
// Exit codes: 0 success, 2 some runs (or certification items) failed,
// 1 configuration or input errors.

#include "ndoe/certification.hpp"
#include "ndoe/harness.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace ndoe;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kPartialFailure = 2;

struct Options {
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::string out;
};

int cmd_run(const std::string& config_path, const Options& opt) {
  ExperimentConfig config = load_experiment(config_path);
  if (opt.seed) config.master_seed = *opt.seed;
  if (opt.jobs) config.jobs = *opt.jobs;
  if (!opt.out.empty()) config.output = opt.out;
  config.validate();

  const std::size_t total = config.tasks.size() * config.estimators.size() * config.seeds.size();
  std::cerr << "running " << total << " runs (" << config.tasks.size() << " tasks x " << config.estimators.size()
            << " estimators x " << config.seeds.size() << " seeds) on " << config.jobs << " job(s)\n";
  std::size_t done = 0;
  const std::vector<RunResult> results = run_grid(config, [&](const RunResult& r) {
    ++done;
    char line[256];
    std::snprintf(line, sizeof line, "[%zu/%zu] %s %s seed=%llu mi_hat=%.4f true=%.4f %.1fs %s", done, total,
                  r.task_id.c_str(), r.estimator.c_str(), static_cast<unsigned long long>(r.seed), r.mi_hat,
                  r.true_mi, r.wall_s, r.status == RunStatus::Ok ? "ok" : "FAILED");
    std::cerr << line;
    if (r.status != RunStatus::Ok) std::cerr << " (" << r.message << ")";
    std::cerr << '\n';
  });

  std::cout << format_summary(summarize(results));
  if (!config.output.empty()) std::cerr << "results written to " << (fs::path(config.output) / "results.csv") << '\n';
  for (const RunResult& r : results) {
    if (r.status != RunStatus::Ok) return kPartialFailure;
  }
  return kOk;
}

int cmd_summarize(const std::string& csv) {
  const std::vector<RunResult> results = read_results_csv(csv);
  if (results.empty()) throw ConfigError(csv + ": no results");
  const std::vector<SummaryRow> rows = summarize(results);
  std::cout << format_summary(rows);
  for (const SummaryRow& s : rows) {
    if (s.n_failed > 0) return kPartialFailure;
  }
  return kOk;
}

int cmd_plot(const std::string& csv, const std::vector<std::string>& specs, const Options& opt) {
  const std::vector<RunResult> results = read_results_csv(csv);
  const fs::path results_dir = fs::path(csv).parent_path();
  const fs::path out_dir = opt.out.empty() ? results_dir : fs::path(opt.out);
  for (const std::string& text : specs) {
    const PlotSpec spec = parse_plot_spec(text);
    std::cout << emit_plot(results, spec, out_dir, results_dir / "traces").string() << '\n';
  }
  return kOk;
}

int cmd_oracle(const std::string& task_text, Index samples, const Options& opt) {
  std::vector<BenchmarkTask> tasks;
  if (fs::is_regular_file(task_text)) {
    std::ifstream in(task_text);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(task_text + ": " + e.what());
    }
    if (j.contains("estimators")) {
      for (const GridTask& g : parse_experiment(j).tasks) {
        if (!g.swapped) tasks.push_back(g.task);
      }
    } else {
      tasks.push_back(parse_task(j));
    }
  } else {
    tasks.push_back(parse_task_kv(task_text));
  }
  const std::uint64_t seed = opt.seed.value_or(0x5eed);
  std::cout << "task_id,family,dim,transform,analytic_mi,mc_mi,std_error,samples\n";
  for (const BenchmarkTask& t : tasks) {
    Rng rng(seed);
    const GroundTruth mc = mc_oracle_mi(t, samples, rng, std::numeric_limits<double>::infinity());
    const GroundTruth truth = ground_truth(t, samples, seed);
    char line[512];
    std::snprintf(line, sizeof line, "%s,%s,%lld,%s,", t.id.c_str(), to_string(t.family).c_str(),
                  static_cast<long long>(t.dim), to_string(t.transform).c_str());
    std::cout << line;
    if (truth.provenance == GroundTruth::Provenance::Analytic) {
      std::printf("%.6f,", truth.mi);
    } else {
      std::printf("n/a,");
    }
    std::printf("%.6f,%.6f,%lld\n", mc.mi, mc.std_error, static_cast<long long>(mc.samples));
    std::fflush(stdout);
  }
  return kOk;
}

int cmd_gradcheck() {
  bool ok = true;
  auto report = [&](const std::vector<CertificationItem>& items) {
    for (const CertificationItem& c : items) {
      std::printf("%-5s %-34s rel=%.3e abs=%.3e coords=%zu tol=%.0e\n", c.passed() ? "ok" : "FAIL", c.name.c_str(),
                  c.max_rel_error, c.max_abs_error, c.coordinates, c.tolerance);
      ok = ok && c.passed();
    }
  };
  report(certify_ops());
  report(certify_losses());
  return ok ? kOk : kPartialFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mutual information estimation by difference of entropies with block autoregressive flows"};
  app.require_subcommand(1);
  Options opt;

  auto add_common = [&](CLI::App* sub, bool seed, bool jobs, bool out) {
    if (seed) sub->add_option_function<std::uint64_t>("--seed", [&](std::uint64_t v) { opt.seed = v; }, "master seed");
    if (jobs) sub->add_option_function<int>("--jobs", [&](int v) { opt.jobs = v; }, "parallel runs")->check(CLI::PositiveNumber);
    if (out) sub->add_option("--out", opt.out, "output directory");
  };

  std::string config_path;
  CLI::App* run = app.add_subcommand("run", "execute an experiment grid");
  run->add_option("config", config_path, "experiment config (JSON)")->required();
  add_common(run, true, true, true);

  std::string csv_path;
  CLI::App* summarize_cmd = app.add_subcommand("summarize", "per (task, estimator) error table");
  summarize_cmd->add_option("results", csv_path, "results.csv")->required();

  std::vector<std::string> specs;
  CLI::App* plot = app.add_subcommand("plot", "emit SVG plots");
  plot->add_option("results", csv_path, "results.csv")->required();
  plot->add_option("--spec", specs, "panel spec, e.g. kind=error;estimators=ndoe,mine")->required();
  add_common(plot, false, false, true);

  std::string task_text;
  Index samples = 1'000'000;
  CLI::App* oracle = app.add_subcommand("oracle", "Monte Carlo ground truth for a task");
  oracle->add_option("task", task_text, "task JSON file, config file, or key=value;... description")->required();
  oracle->add_option("--samples", samples, "oracle sample count")->check(CLI::Range(Index{2}, Index{1} << 40));
  add_common(oracle, true, false, false);

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference certification of ops and losses");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(config_path, opt);
    if (*summarize_cmd) return cmd_summarize(csv_path);
    if (*plot) return cmd_plot(csv_path, specs, opt);
    if (*oracle) return cmd_oracle(task_text, samples, opt);
    if (*gradcheck) return cmd_gradcheck();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfigError;
  }
  return kOk;
}
