#include "ndoe/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace ndoe {

namespace fs = std::filesystem;
using nlohmann::json;

// --- config parsing -----------------------------------------------------------

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

template <class T>
T get_or(const json& j, const std::string& key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + ": bad value for '" + key + "': " + e.what());
  }
}

double number_or_inf(const json& j, const std::string& key, double fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (v.is_string() && (v == "inf" || v == "infinity")) return std::numeric_limits<double>::infinity();
  if (!v.is_number()) throw ConfigError(where + ": '" + key + "' must be a number or \"inf\"");
  return v.get<double>();
}

void check_id(const std::string& id, const std::string& what) {
  if (id.empty()) throw ConfigError(what + " id must not be empty");
  for (char c : id) {
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.' || c == '+';
    if (!ok) throw ConfigError(what + " id '" + id + "' may only contain letters, digits and - _ . +");
  }
}

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

Index default_test_size(Index train) { return std::max<Index>(1, std::min<Index>(10240, train / 4)); }

const std::set<std::string> kTaskKeys{"id",         "family",    "dim",     "mi",     "rho",    "rhos",
                                      "nu",         "transform", "wiggly",  "train_size", "test_size", "swap_xy"};

}  // namespace

BenchmarkTask parse_task(const json& j) {
  check_keys(j, kTaskKeys, "task");
  BenchmarkTask t;
  t.id = get_or<std::string>(j, "id", "", "task");
  const std::string where = "task " + t.id;
  check_id(t.id, "task");
  t.family = parse_family(get_or<std::string>(j, "family", "gaussian", where));
  t.dim = get_or<Index>(j, "dim", 1, where);
  if (t.dim < 1) throw ConfigError(where + ": dim must be >= 1");
  t.transform = parse_transform(get_or<std::string>(j, "transform", "none", where));
  t.nu = get_or<double>(j, "nu", 5.0, where);
  if (j.contains("wiggly")) {
    const json& w = j.at("wiggly");
    check_keys(w, {"a", "b", "c"}, where + " wiggly");
    t.wiggly.a = get_or<std::vector<double>>(w, "a", t.wiggly.a, where);
    t.wiggly.b = get_or<std::vector<double>>(w, "b", t.wiggly.b, where);
    t.wiggly.c = get_or<std::vector<double>>(w, "c", t.wiggly.c, where);
  }
  const int given = static_cast<int>(j.contains("mi")) + static_cast<int>(j.contains("rho")) +
                    static_cast<int>(j.contains("rhos"));
  if (given != 1) throw ConfigError(where + ": give exactly one of mi, rho, rhos");
  try {
    if (j.contains("mi")) {
      const double mi = get_or<double>(j, "mi", 0.0, where);
      if (!(mi >= 0.0)) throw ConfigError(where + ": mi must be >= 0");
      t.rhos = make_task(t.id, t.family, t.dim, mi).rhos;
    } else if (j.contains("rho")) {
      const double rho = get_or<double>(j, "rho", 0.0, where);
      t.rhos.assign(static_cast<std::size_t>(t.dim), t.family == Family::SparseGaussian ? 0.0 : rho);
      if (t.family == Family::SparseGaussian) {
        if (t.dim < 2) throw ConfigError(where + ": sparse-gaussian needs dim >= 2");
        t.rhos[0] = t.rhos[1] = rho;
      }
    } else {
      t.rhos = get_or<std::vector<double>>(j, "rhos", {}, where);
    }
    t.train_size = get_or<Index>(j, "train_size", 4096, where);
    t.test_size = get_or<Index>(j, "test_size", default_test_size(t.train_size), where);
    t.validate();
  } catch (const DomainError& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return t;
}

EstimatorConfig parse_estimator(const json& j) {
  check_keys(j,
             {"id", "kind", "flow", "hidden_multiplier", "hidden_layers", "gated_residual", "coupling_layers",
              "coupling_hidden", "scale_clamp", "critic_hidden", "critic_layers", "smile_tau", "optimizer", "lr",
              "beta1", "beta2", "eps", "moments", "grad_clip", "batch_size", "epochs", "eval_every", "standardize",
              "divergence_threshold"},
             "estimator");
  EstimatorConfig c;
  const std::string kind = get_or<std::string>(j, "kind", "", "estimator");
  c.kind = parse_estimator_kind(kind);
  c.id = get_or<std::string>(j, "id", kind, "estimator");
  check_id(c.id, "estimator");
  const std::string where = "estimator " + c.id;

  const std::string flow = get_or<std::string>(j, "flow", "bnaf", where);
  if (flow == "bnaf") {
    c.flow = FlowFamily::Bnaf;
  } else if (flow == "realnvp") {
    c.flow = FlowFamily::RealNvp;
  } else {
    throw ConfigError(where + ": unknown flow '" + flow + "'");
  }
  c.hidden_multiplier = get_or<Index>(j, "hidden_multiplier", c.hidden_multiplier, where);
  c.hidden_layers = get_or<int>(j, "hidden_layers", c.hidden_layers, where);
  c.gated_residual = get_or<bool>(j, "gated_residual", c.gated_residual, where);
  c.coupling_layers = get_or<int>(j, "coupling_layers", c.coupling_layers, where);
  c.coupling_hidden = get_or<Index>(j, "coupling_hidden", c.coupling_hidden, where);
  c.scale_clamp = get_or<double>(j, "scale_clamp", c.scale_clamp, where);
  c.critic_hidden = get_or<Index>(j, "critic_hidden", c.critic_hidden, where);
  c.critic_layers = get_or<int>(j, "critic_layers", c.critic_layers, where);
  c.smile_tau = number_or_inf(j, "smile_tau", c.smile_tau, where);

  // Real NVP runs default to Adamax at 1e-3
  const std::string opt =
      get_or<std::string>(j, "optimizer", c.flow == FlowFamily::RealNvp ? "adamax" : "adam", where);
  if (opt == "adam") {
    c.optimizer = OptimizerKind::Adam;
  } else if (opt == "adamax") {
    c.optimizer = OptimizerKind::Adamax;
    c.adam.lr = 1e-3;
  } else {
    throw ConfigError(where + ": unknown optimizer '" + opt + "'");
  }
  c.adam.lr = get_or<double>(j, "lr", c.adam.lr, where);
  c.adam.beta1 = get_or<double>(j, "beta1", c.adam.beta1, where);
  c.adam.beta2 = get_or<double>(j, "beta2", c.adam.beta2, where);
  c.adam.eps = get_or<double>(j, "eps", c.adam.eps, where);
  const std::string moments = get_or<std::string>(j, "moments", "split", where);
  if (moments != "split" && moments != "shared") throw ConfigError(where + ": moments must be split or shared");
  c.split_moments = moments == "split";
  c.grad_clip = get_or<double>(j, "grad_clip", c.grad_clip, where);
  c.batch_size = get_or<Index>(j, "batch_size", c.batch_size, where);
  c.epochs = get_or<int>(j, "epochs", c.epochs, where);
  c.eval_every = get_or<int>(j, "eval_every", c.eval_every, where);
  c.standardize = get_or<bool>(j, "standardize", c.standardize, where);
  c.divergence_threshold = get_or<double>(j, "divergence_threshold", c.divergence_threshold, where);
  c.validate();
  return c;
}

namespace {

std::vector<GridTask> expand_task(const json& j) {
  GridTask g;
  g.task = parse_task(j);
  const bool swap = get_or<bool>(j, "swap_xy", false, "task " + g.task.id);
  std::vector<GridTask> out{g};
  if (swap) {
    GridTask s = g;
    s.swapped = true;
    s.task.id += ".swapped";
    out.push_back(s);
  }
  return out;
}

std::vector<GridTask> expand_grid(const json& j) {
  check_keys(j, {"families", "dims", "sizes", "mi", "transforms", "nu", "swap_xy", "test_size"}, "task_grid");
  const auto families = get_or<std::vector<std::string>>(j, "families", {"gaussian"}, "task_grid");
  const auto dims = get_or<std::vector<Index>>(j, "dims", {}, "task_grid");
  const auto sizes = get_or<std::vector<Index>>(j, "sizes", {}, "task_grid");
  const auto mis = get_or<std::vector<double>>(j, "mi", {}, "task_grid");
  const auto transforms = get_or<std::vector<std::string>>(j, "transforms", {"none"}, "task_grid");
  if (dims.empty() || sizes.empty() || mis.empty()) throw ConfigError("task_grid: dims, sizes and mi are required");
  std::vector<GridTask> out;
  for (const auto& family : families) {
    for (const auto& transform : transforms) {
      for (Index dim : dims) {
        for (Index n : sizes) {
          for (double mi : mis) {
            json t{{"family", family}, {"dim", dim}, {"train_size", n}, {"mi", mi}, {"transform", transform}};
            t["id"] = family + "-d" + std::to_string(dim) + "-n" + std::to_string(n) + "-mi" + format_number(mi) +
                      "-" + transform;
            if (j.contains("nu")) t["nu"] = j.at("nu");
            if (j.contains("swap_xy")) t["swap_xy"] = j.at("swap_xy");
            if (j.contains("test_size")) t["test_size"] = j.at("test_size");
            for (GridTask& g : expand_task(t)) out.push_back(std::move(g));
          }
        }
      }
    }
  }
  return out;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (tasks.empty()) throw ConfigError("config: no tasks");
  if (estimators.empty()) throw ConfigError("config: no estimators");
  if (seeds.empty()) throw ConfigError("config: no seeds");
  if (jobs < 1) throw ConfigError("config: jobs must be >= 1");
  if (oracle_samples < 2) throw ConfigError("config: oracle_samples must be >= 2");
  std::set<std::string> task_ids, est_ids;
  std::set<std::uint64_t> seed_set;
  for (const GridTask& t : tasks) {
    if (!task_ids.insert(t.task.id).second) throw ConfigError("config: duplicate task id " + t.task.id);
  }
  for (const EstimatorConfig& e : estimators) {
    if (!est_ids.insert(e.id).second) throw ConfigError("config: duplicate estimator id " + e.id);
    e.validate();
  }
  for (std::uint64_t s : seeds) {
    if (!seed_set.insert(s).second) throw ConfigError("config: duplicate seed " + std::to_string(s));
  }
}

ExperimentConfig parse_experiment(const json& j) {
  check_keys(j, {"tasks", "task_grid", "estimators", "seeds", "num_seeds", "output", "jobs", "master_seed",
                 "oracle_samples"},
             "config");
  ExperimentConfig c;
  if (j.contains("tasks")) {
    if (!j.at("tasks").is_array()) throw ConfigError("config: tasks must be a list");
    for (const json& t : j.at("tasks")) {
      for (GridTask& g : expand_task(t)) c.tasks.push_back(std::move(g));
    }
  }
  if (j.contains("task_grid")) {
    for (GridTask& g : expand_grid(j.at("task_grid"))) c.tasks.push_back(std::move(g));
  }
  if (!j.contains("estimators") || !j.at("estimators").is_array()) throw ConfigError("config: estimators list required");
  for (const json& e : j.at("estimators")) c.estimators.push_back(parse_estimator(e));
  if (j.contains("seeds") && j.contains("num_seeds")) throw ConfigError("config: give seeds or num_seeds, not both");
  if (j.contains("seeds")) {
    c.seeds = get_or<std::vector<std::uint64_t>>(j, "seeds", {}, "config");
  } else {
    const int n = get_or<int>(j, "num_seeds", 10, "config");
    if (n < 1) throw ConfigError("config: num_seeds must be >= 1");
    for (int s = 0; s < n; ++s) c.seeds.push_back(static_cast<std::uint64_t>(s));
  }
  c.output = get_or<std::string>(j, "output", "", "config");
  c.jobs = get_or<int>(j, "jobs", 1, "config");
  c.master_seed = get_or<std::uint64_t>(j, "master_seed", 0, "config");
  c.oracle_samples = get_or<Index>(j, "oracle_samples", c.oracle_samples, "config");
  c.validate();
  return c;
}

ExperimentConfig load_experiment(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return parse_experiment(j);
}

BenchmarkTask parse_task_kv(const std::string& text) {
  json j = json::object();
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ';')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("task: expected key=value, got '" + item + "'");
    const std::string key = item.substr(0, eq);
    const std::string value = item.substr(eq + 1);
    if (key == "id" || key == "family" || key == "transform") {
      j[key] = value;
    } else if (key == "rhos") {
      std::vector<double> v;
      std::stringstream vs(value);
      std::string part;
      while (std::getline(vs, part, ',')) v.push_back(std::stod(part));
      j[key] = v;
    } else if (key == "dim" || key == "train_size" || key == "test_size") {
      j[key] = std::stoll(value);
    } else {
      try {
        j[key] = std::stod(value);
      } catch (const std::exception&) {
        throw ConfigError("task: '" + key + "' needs a number");
      }
    }
  }
  if (!j.contains("id")) j["id"] = "task";
  return parse_task(j);
}

// --- seeds and single runs ----------------------------------------------------

std::uint64_t data_seed(std::uint64_t master, const std::string& task_id, std::uint64_t seed) {
  return mix_seed(mix_seed(master, fnv1a(task_id)), seed);
}

std::uint64_t model_seed(std::uint64_t master, const std::string& task_id, const std::string& estimator_id,
                         std::uint64_t seed) {
  return mix_seed(data_seed(master, task_id, seed), fnv1a(estimator_id));
}

namespace {

std::string base_id(const GridTask& t) {
  const std::string suffix = ".swapped";
  if (t.swapped && t.task.id.size() > suffix.size() && t.task.id.ends_with(suffix)) {
    return t.task.id.substr(0, t.task.id.size() - suffix.size());
  }
  return t.task.id;
}

}  // namespace

RunResult run_single(const GridTask& grid_task, const GroundTruth& truth, const EstimatorConfig& estimator,
                     std::uint64_t seed, std::uint64_t master_seed) {
  const BenchmarkTask& task = grid_task.task;
  RunResult r;
  r.task_id = task.id;
  r.family = to_string(task.family);
  r.dim = task.dim;
  r.transform = to_string(task.transform);
  r.true_mi = truth.mi;
  r.estimator = estimator.id;
  r.seed = seed;
  const double nan = std::numeric_limits<double>::quiet_NaN();

  const auto start = std::chrono::steady_clock::now();
  try {
    // a swapped task reuses the data of its unswapped twin
    Rng rng(data_seed(master_seed, base_id(grid_task), seed));
    Dataset train = sample_task(task, rng, task.train_size);
    Dataset test = sample_task(task, rng, task.test_size);
    if (grid_task.swapped) {
      train = train.swapped();
      test = test.swapped();
    }
    EstimatorConfig cfg = estimator;
    cfg.seed = model_seed(master_seed, task.id, estimator.id, seed);
    const EstimateResult e = estimate(cfg, train, test);
    r.mi_hat = e.mi_hat;
    r.err = truth.mi - e.mi_hat;
    r.l1 = e.l1;
    r.l2 = e.l2;
    r.epochs = e.epochs;
    r.trace = e.trace;
    r.status = std::isfinite(e.mi_hat) ? RunStatus::Ok : RunStatus::Failed;
    if (r.status == RunStatus::Failed) r.message = "non-finite estimate";
  } catch (const TrainingFailure& e) {
    r.status = RunStatus::Failed;
    r.message = e.what();
    r.trace = e.trace();
  } catch (const std::exception& e) {
    r.status = RunStatus::Failed;
    r.message = e.what();
  }
  if (r.status == RunStatus::Failed) {
    r.mi_hat = r.err = r.l1 = r.l2 = nan;
    r.epochs = r.trace.empty() ? 0 : r.trace.back().epoch;
  }
  r.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

// --- persistence ------------------------------------------------------------------

namespace {

std::string fmt(double v) {
  if (!std::isfinite(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw std::invalid_argument(s);
  return v;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

std::string results_header() {
  return "task_id,family,dim,transform,true_mi,estimator,seed,mi_hat,err,l1,l2,epochs,wall_s,status";
}

std::string format_result_row(const RunResult& r) {
  std::ostringstream os;
  os << r.task_id << ',' << r.family << ',' << r.dim << ',' << r.transform << ',' << fmt(r.true_mi) << ','
     << r.estimator << ',' << r.seed << ',' << fmt(r.mi_hat) << ',' << fmt(r.err) << ',' << fmt(r.l1) << ','
     << fmt(r.l2) << ',' << r.epochs << ',' << fmt(r.wall_s) << ',' << (r.status == RunStatus::Ok ? "ok" : "failed");
  return os.str();
}

void write_results_csv(const fs::path& path, const std::vector<RunResult>& results) {
  std::ofstream out(path);
  out << results_header() << '\n';
  for (const RunResult& r : results) out << format_result_row(r) << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<RunResult> read_results_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open results " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != results_header()) {
    throw ConfigError(path.string() + ": header does not match the results format");
  }
  std::vector<RunResult> out;
  long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::vector<std::string> f = split_csv(line);
    if (f.size() != 14) throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected 14 fields");
    try {
      RunResult r;
      r.task_id = f[0];
      r.family = f[1];
      r.dim = std::stoll(f[2]);
      r.transform = f[3];
      r.true_mi = parse_double(f[4]);
      r.estimator = f[5];
      r.seed = std::stoull(f[6]);
      r.mi_hat = parse_double(f[7]);
      r.err = parse_double(f[8]);
      r.l1 = parse_double(f[9]);
      r.l2 = parse_double(f[10]);
      r.epochs = std::stoi(f[11]);
      r.wall_s = parse_double(f[12]);
      if (f[13] != "ok" && f[13] != "failed") throw std::invalid_argument("status");
      r.status = f[13] == "ok" ? RunStatus::Ok : RunStatus::Failed;
      out.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": malformed row");
    }
  }
  return out;
}

std::string trace_file_name(const std::string& task_id, const std::string& estimator, std::uint64_t seed) {
  return task_id + "__" + estimator + "__" + std::to_string(seed) + ".csv";
}

void write_trace(const fs::path& path, const std::vector<EpochRecord>& trace) {
  std::ofstream out(path);
  out << "epoch,step,l1,l2,mi\n";
  for (const EpochRecord& e : trace) {
    out << e.epoch << ',' << e.step << ',' << fmt(e.l1) << ',' << fmt(e.l2) << ',' << fmt(e.mi) << '\n';
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<EpochRecord> read_trace(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open trace " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<EpochRecord> out;
  while (std::getline(in, line)) {
    const std::vector<std::string> f = split_csv(line);
    if (f.size() != 5) throw ConfigError(path.string() + ": malformed trace row");
    out.push_back({std::stoi(f[0]), std::stol(f[1]), parse_double(f[2]), parse_double(f[3]), parse_double(f[4])});
  }
  return out;
}

// --- grid ---------------------------------------------------------------------------

std::vector<RunResult> run_grid(const ExperimentConfig& config, const std::function<void(const RunResult&)>& on_result) {
  config.validate();
  std::vector<GroundTruth> truths;
  for (const GridTask& t : config.tasks) {
    try {
      truths.push_back(ground_truth(t.task, config.oracle_samples, data_seed(config.master_seed, t.task.id, 0x05ac1e)));
    } catch (const OraclePrecisionError& e) {
      throw ConfigError("task " + t.task.id + ": " + e.what());
    }
  }

  struct Triple {
    std::size_t task, estimator;
    std::uint64_t seed;
  };
  std::vector<Triple> triples;
  for (std::size_t t = 0; t < config.tasks.size(); ++t) {
    for (std::size_t e = 0; e < config.estimators.size(); ++e) {
      for (std::uint64_t s : config.seeds) triples.push_back({t, e, s});
    }
  }

  std::ofstream csv;
  fs::path trace_dir;
  if (!config.output.empty()) {
    const fs::path out_dir(config.output);
    fs::create_directories(out_dir / "traces");
    trace_dir = out_dir / "traces";
    csv.open(out_dir / "results.csv");
    csv << results_header() << '\n' << std::flush;
    if (!csv) throw std::runtime_error("cannot write " + (out_dir / "results.csv").string());
  }

  std::vector<RunResult> results(triples.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> io_failed{false};
  std::string io_error;
  std::mutex writer;

  auto worker = [&]() {
    for (;;) {
      if (io_failed) return;
      const std::size_t i = next.fetch_add(1);
      if (i >= triples.size()) return;
      const Triple& tr = triples[i];
      RunResult r = run_single(config.tasks[tr.task], truths[tr.task], config.estimators[tr.estimator], tr.seed,
                               config.master_seed);
      std::lock_guard<std::mutex> lock(writer);
      if (csv.is_open()) {
        try {
          csv << format_result_row(r) << '\n' << std::flush;
          if (!csv) throw std::runtime_error("failed appending to results.csv");
          write_trace(trace_dir / trace_file_name(r.task_id, r.estimator, r.seed), r.trace);
        } catch (const std::exception& e) {
          io_failed = true;
          io_error = e.what();
        }
      }
      if (on_result) on_result(r);
      results[i] = std::move(r);
    }
  };

  const int jobs = std::min<int>(config.jobs, static_cast<int>(triples.size()));
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  if (io_failed) throw std::runtime_error("grid aborted: " + io_error);
  return results;
}

// --- summaries ------------------------------------------------------------------------

std::vector<SummaryRow> summarize(const std::vector<RunResult>& results) {
  std::map<std::pair<std::string, std::string>, std::vector<const RunResult*>> cells;
  for (const RunResult& r : results) cells[{r.task_id, r.estimator}].push_back(&r);
  std::vector<SummaryRow> rows;
  for (const auto& [key, runs] : cells) {
    SummaryRow s;
    const RunResult& first = *runs.front();
    s.task_id = key.first;
    s.estimator = key.second;
    s.family = first.family;
    s.dim = first.dim;
    s.transform = first.transform;
    s.true_mi = first.true_mi;
    std::vector<double> errs;
    for (const RunResult* r : runs) {
      if (r->status == RunStatus::Ok) {
        errs.push_back(r->err);
      } else {
        ++s.n_failed;
      }
    }
    s.n_ok = static_cast<int>(errs.size());
    if (errs.empty()) {
      s.mean_err = s.sd_err = s.mean_abs_err = std::numeric_limits<double>::quiet_NaN();
    } else {
      double sum = 0.0, abs_sum = 0.0;
      for (double e : errs) {
        sum += e;
        abs_sum += std::abs(e);
      }
      s.mean_err = sum / static_cast<double>(errs.size());
      s.mean_abs_err = abs_sum / static_cast<double>(errs.size());
      double ss = 0.0;
      for (double e : errs) ss += (e - s.mean_err) * (e - s.mean_err);
      s.sd_err = errs.size() > 1 ? std::sqrt(ss / static_cast<double>(errs.size() - 1)) : 0.0;
    }
    rows.push_back(s);
  }
  return rows;
}

std::string format_summary(const std::vector<SummaryRow>& rows) {
  std::ostringstream os;
  os << "task_id,family,dim,transform,true_mi,estimator,n_ok,n_failed,mean_err,sd_err,mean_abs_err\n";
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return std::string(buf);
  };
  for (const SummaryRow& s : rows) {
    os << s.task_id << ',' << s.family << ',' << s.dim << ',' << s.transform << ',' << num(s.true_mi) << ','
       << s.estimator << ',' << s.n_ok << ',' << s.n_failed << ',';
    if (s.missing()) {
      os << "missing,missing,missing\n";
    } else {
      os << num(s.mean_err) << ',' << num(s.sd_err) << ',' << num(s.mean_abs_err) << '\n';
    }
  }
  return os.str();
}

}  // namespace ndoe
