#pragma once

// Experiment grids: config parsing, seeded (task, estimator, seed) runs,
// CSV persistence with per-run trace sidecars, summaries and SVG plots.
//
// Results CSV columns, in order:
//   task_id,family,dim,transform,true_mi,estimator,seed,mi_hat,err,l1,l2,
//   epochs,wall_s,status
// err = true_mi - mi_hat. Non-finite numbers are written as "nan".
// Trace sidecars (traces/<task>__<estimator>__<seed>.csv): epoch,step,l1,l2,mi

#include "ndoe/benchmarks.hpp"
#include "ndoe/estimators.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace ndoe {

struct GridTask {
  BenchmarkTask task;
  bool swapped = false;  // x and y exchanged before estimation
};

struct ExperimentConfig {
  std::vector<GridTask> tasks;
  std::vector<EstimatorConfig> estimators;
  std::vector<std::uint64_t> seeds;
  std::string output;  // empty: nothing written
  int jobs = 1;
  std::uint64_t master_seed = 0;
  Index oracle_samples = 1'000'000;

  // Throws ConfigError (duplicate ids or seeds, bad values).
  void validate() const;
};

// Throws ConfigError on unknown keys, missing fields or invalid values.
ExperimentConfig parse_experiment(const nlohmann::json& j);
ExperimentConfig load_experiment(const std::filesystem::path& path);
BenchmarkTask parse_task(const nlohmann::json& j);
EstimatorConfig parse_estimator(const nlohmann::json& j);
// "family=gaussian;dim=1;rho=0.9" style task description.
BenchmarkTask parse_task_kv(const std::string& text);

enum class RunStatus { Ok, Failed };

struct RunResult {
  std::string task_id;
  std::string family;
  Index dim = 0;
  std::string transform;
  double true_mi = 0.0;
  std::string estimator;
  std::uint64_t seed = 0;
  double mi_hat = 0.0;
  double err = 0.0;
  double l1 = 0.0;
  double l2 = 0.0;
  int epochs = 0;
  double wall_s = 0.0;
  RunStatus status = RunStatus::Ok;
  std::string message;  // failure reason (not persisted in the CSV)
  std::vector<EpochRecord> trace;
};

// Seeds derived from (master, task id, seed) for data and additionally the
// estimator id for the model, independent of grid order and composition.
std::uint64_t data_seed(std::uint64_t master, const std::string& task_id, std::uint64_t seed);
std::uint64_t model_seed(std::uint64_t master, const std::string& task_id, const std::string& estimator_id,
                         std::uint64_t seed);

// Executes one triple; never throws for estimator failures.
RunResult run_single(const GridTask& task, const GroundTruth& truth, const EstimatorConfig& estimator,
                     std::uint64_t seed, std::uint64_t master_seed);

// All triples, in (task, estimator, seed) order. With config.output set,
// results.csv and the trace sidecars are written as runs complete; I/O
// failures throw after flushing what was written.
std::vector<RunResult> run_grid(const ExperimentConfig& config,
                                const std::function<void(const RunResult&)>& on_result = {});

std::string results_header();
std::string format_result_row(const RunResult& r);
void write_results_csv(const std::filesystem::path& path, const std::vector<RunResult>& results);
std::vector<RunResult> read_results_csv(const std::filesystem::path& path);
void write_trace(const std::filesystem::path& path, const std::vector<EpochRecord>& trace);
std::vector<EpochRecord> read_trace(const std::filesystem::path& path);
std::string trace_file_name(const std::string& task_id, const std::string& estimator, std::uint64_t seed);

struct SummaryRow {
  std::string task_id;
  std::string family;
  Index dim = 0;
  std::string transform;
  double true_mi = 0.0;
  std::string estimator;
  int n_ok = 0;
  int n_failed = 0;
  double mean_err = 0.0;  // over ok runs
  double sd_err = 0.0;    // sample sd, 0 for a single run
  double mean_abs_err = 0.0;
  bool missing() const { return n_ok == 0; }
};

// One row per (task, estimator), sorted by task id then estimator.
std::vector<SummaryRow> summarize(const std::vector<RunResult>& results);
std::string format_summary(const std::vector<SummaryRow>& rows);

struct PlotSpec {
  std::string kind = "error";  // error | trace
  std::vector<std::string> estimators;  // empty: all
  std::string family;      // filter, empty: all
  std::string transform;   // filter, empty: all
  std::string match;       // substring filter on task ids
  std::string title;
  std::string name = "plot";  // output file stem
  int width = 900;
  int panel_height = 320;
};

// "kind=error;estimators=ndoe,mine;transform=cubic;title=..." ; throws ConfigError.
PlotSpec parse_plot_spec(const std::string& text);

// error: error vs true MI, one panel per dim, +-1 sd bars over seeds.
// trace: estimate vs training step per task, read from `trace_dir`.
// Returns the SVG text; throws ConfigError when nothing is selected.
std::string render_plot(const std::vector<RunResult>& results, const PlotSpec& spec,
                        const std::filesystem::path& trace_dir = {});
std::filesystem::path emit_plot(const std::vector<RunResult>& results, const PlotSpec& spec,
                                const std::filesystem::path& out_dir, const std::filesystem::path& trace_dir = {});

}  // namespace ndoe
