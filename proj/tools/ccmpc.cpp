// ccmpc: run closed-loop simulations, sweeps over forecast uncertainty, and
// trace plots.

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "ccmpc/ccmpc.hpp"

namespace fs = std::filesystem;
using namespace ccmpc;

namespace {

enum class Level { Error = 0, Warn = 1, Info = 2, Debug = 3 };

Level log_level() {
  static const Level level = [] {
    const char* env = std::getenv("CCMPC_LOG");
    const std::string v = env ? env : "warn";
    if (v == "error") return Level::Error;
    if (v == "info") return Level::Info;
    if (v == "debug") return Level::Debug;
    return Level::Warn;
  }();
  return level;
}

std::mutex log_mutex;

void log(Level l, const std::string& msg) {
  if (l > log_level()) return;
  static const char* names[] = {"error", "warn", "info", "debug"};
  std::lock_guard lock(log_mutex);
  std::cerr << "[" << names[static_cast<int>(l)] << "] " << msg << '\n';
}

/// Missing or unreadable inputs; reported with exit code 1.
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  out << content;
}

std::string timestamp() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  localtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y%m%d-%H%M%S");
  return os.str();
}

std::string slug(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '_')
      out += c;
    else if (c == '%')
      out += "pct";
    else if (c == '+')
      out += "p";
    else
      out += '_';
  }
  return out;
}

std::string number(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

struct Common {
  std::string network = std::string(CCMPC_DATA_DIR) + "/astlingen.json";
  std::string scenario = std::string(CCMPC_DATA_DIR) + "/storm1.json";
  double gamma = 0.9;
  double bound = 0.5;
  double scale = 1.0;
  double offset = 0.0;
  int horizon = 24;
  std::uint64_t seed = 0;
  long steps = -1;
  std::string out;
  std::string name;
  bool plot = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--network", c.network, "Network JSON")->capture_default_str();
  cmd->add_option("--scenario", c.scenario, "Rainfall scenario JSON")->capture_default_str();
  cmd->add_option("--gamma", c.gamma, "Confidence level in (0, 1]")->capture_default_str();
  cmd->add_option("--bound", c.bound, "Uncertainty bound p")->capture_default_str();
  cmd->add_option("--scale", c.scale, "Forecast scale bias a")->capture_default_str();
  cmd->add_option("--offset", c.offset, "Forecast offset bias b [m3/s]")->capture_default_str();
  cmd->add_option("--horizon", c.horizon, "Prediction horizon N")->capture_default_str();
  cmd->add_option("--seed", c.seed, "Realization seed")->capture_default_str();
  cmd->add_option("--steps", c.steps, "Simulate only the first N steps (default: whole scenario)");
  cmd->add_option("--out", c.out, "Output directory (default out/<timestamp>/<name>)");
  cmd->add_option("--name", c.name, "Run name");
  cmd->add_flag("--plot", c.plot, "Write volume plots for the controlled tanks");
}

struct Inputs {
  NetworkSpec spec;
  NetworkTopology topo;
  RainfallScenario scenario;
  std::string scenario_label;
};

Inputs load_inputs(const Common& c) {
  Inputs in;
  const std::string network_text = read_file(c.network), scenario_text = read_file(c.scenario);
  try {
    in.spec = parse_network(network_text);
    in.topo = analyze(in.spec);
  } catch (const ConfigError& e) {
    throw ConfigError(e.kind(), c.network + ": " + e.what());
  }
  try {
    in.scenario = parse_scenario(scenario_text, in.spec);
  } catch (const ConfigError& e) {
    throw ConfigError(e.kind(), c.scenario + ": " + e.what());
  }
  in.scenario_label = in.scenario.name.empty() ? fs::path(c.scenario).stem().string() : in.scenario.name;
  in.scenario.name = in.scenario_label;
  return in;
}

struct RunSpec {
  std::string label;
  ControlMode mode = ControlMode::Deterministic;
  UncertaintyModel uncertainty;
};

struct RunOutput {
  SimulationResult result;
  std::string trace_csv;
};

RunOutput execute(const Inputs& in, const Common& c, const RunSpec& r) {
  MpcConfig cfg;
  cfg.horizon = c.horizon;
  cfg.mode = r.mode;
  log(Level::Info, "running " + r.label);
  const auto t0 = std::chrono::steady_clock::now();
  RunOutput out;
  out.result = run_closed_loop(in.spec, cfg, CostWeights::defaults(in.spec, in.topo), r.uncertainty,
                               in.scenario, c.seed, SimulationOptions{c.steps, 1e-9, {}});
  std::ostringstream csv;
  write_trace_csv(csv, out.result.trace);
  out.trace_csv = csv.str();
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  log(Level::Info, r.label + " done in " + number(secs) + " s, total CSO " +
                       number(out.result.kpi.grand_total) + " m3");
  if (out.result.solver_warnings > 0)
    log(Level::Warn, r.label + ": " + std::to_string(out.result.solver_warnings) +
                         " steps hit the iteration limit");
  return out;
}

std::string table_header(const Inputs& in, const Common& c) {
  return "# network=" + in.spec.name + " scenario=" + in.scenario_label +
         " seed=" + std::to_string(c.seed) + "\n";
}

fs::path output_dir(const Common& c, const std::string& default_name) {
  if (!c.out.empty()) return c.out;
  return fs::path("out") / timestamp() / slug(c.name.empty() ? default_name : c.name);
}

std::vector<std::string> controlled_ids(const TraceTable& t) {
  std::vector<std::string> ids;
  for (const auto& col : t.columns)
    if (col.rfind("qu_cmd_", 0) == 0) ids.push_back(col.substr(7));
  return ids;
}

std::vector<std::string> tank_ids(const TraceTable& t) {
  std::vector<std::string> ids;
  for (const auto& col : t.columns)
    if (col.rfind("V_", 0) == 0) ids.push_back(col.substr(2));
  return ids;
}

/// One SVG per element overlaying every trace; returns the files written.
std::vector<fs::path> write_volume_plots(const std::vector<TraceTable>& traces,
                                         const std::vector<std::string>& labels,
                                         const std::vector<std::string>& elements, const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& id : elements) {
    std::vector<PlotSeries> series;
    for (std::size_t i = 0; i < traces.size(); ++i) {
      const auto& t = traces[i];
      const int tc = t.column("time_s"), vc = t.column("V_" + id);
      PlotSeries s;
      s.label = labels[i];
      for (Eigen::Index r = 0; r < t.values.rows(); ++r) {
        s.x.push_back(t.values(r, tc) / 3600.0);
        s.y.push_back(t.values(r, vc));
      }
      series.push_back(std::move(s));
    }
    const fs::path file = dir / ("volume_" + slug(id) + ".svg");
    write_file(file, svg_line_plot("Tank " + id, "time [h]", "volume [m3]", series));
    files.push_back(file);
  }
  return files;
}

TraceTable parse_trace(const std::string& text) {
  std::istringstream is(text);
  return read_trace_csv(is);
}

int cmd_run(const Common& c, const std::string& mode) {
  const Inputs in = load_inputs(c);
  RunSpec r;
  r.mode = mode == "cc" ? ControlMode::ChanceConstrained : ControlMode::Deterministic;
  r.uncertainty = {c.bound, c.scale, c.offset, c.gamma};
  r.uncertainty.validate();
  r.label = mode == "cc" ? "CC-MPC" : "MPC";
  const RunOutput o = execute(in, c, r);

  const fs::path dir = output_dir(c, mode + "-" + in.scenario_label);
  write_file(dir / "trace.csv", o.trace_csv);
  write_file(dir / "kpi.json", kpi_to_json(o.result.kpi).dump(2) + "\n");
  write_file(dir / "table.txt", table_header(in, c) + kpi_table({r.label}, {o.result.kpi}));
  if (c.plot) {
    const TraceTable t = parse_trace(o.trace_csv);
    write_volume_plots({t}, {r.label}, controlled_ids(t), dir / "plots");
  }
  std::cout << dir.string() << '\n';
  return 0;
}

enum class Family { Confidence, Bound, Scale, Offset };

std::vector<double> default_values(Family f) {
  switch (f) {
    case Family::Confidence: return {1.0, 0.9, 0.8, 0.7, 0.6};
    case Family::Bound: return {0.25, 0.5, 0.75};
    case Family::Scale: return {0.8, 0.9, 1.0, 1.1, 1.2};
    case Family::Offset: return {0.0, 0.005, 0.02, 0.1};
  }
  return {};
}

std::string percent_label(double v) {
  std::ostringstream os;
  os << std::round(v * 100.0) << '%';
  return os.str();
}

std::string bias_label(Family f, double v) {
  if (f == Family::Scale) {
    const double pct = std::round((v - 1.0) * 100.0);
    std::ostringstream os;
    if (pct > 0) os << '+';
    os << pct << '%';
    return os.str();
  }
  return "b=" + number(v);
}

struct SweepPlan {
  std::vector<RunSpec> runs;
  std::size_t baseline = 0;
};

SweepPlan plan_sweep(Family f, const std::vector<double>& values, const UncertaintyModel& base) {
  SweepPlan plan;
  if (f == Family::Confidence || f == Family::Bound) {
    plan.runs.push_back({"MPC", ControlMode::Deterministic, base});
    for (double v : values) {
      RunSpec r{"", ControlMode::ChanceConstrained, base};
      if (f == Family::Confidence) {
        r.uncertainty.gamma = v;
        r.label = "CC-" + percent_label(v);
      } else {
        r.uncertainty.bound_pct = v;
        r.label = "CC p" + percent_label(v);
      }
      plan.runs.push_back(r);
    }
    return plan;
  }
  const double neutral = f == Family::Scale ? 1.0 : 0.0;
  for (double v : values) {
    UncertaintyModel u = base;
    (f == Family::Scale ? u.scale_bias : u.offset_bias) = v;
    if (v == neutral) plan.baseline = plan.runs.size();
    plan.runs.push_back({"MPC " + bias_label(f, v), ControlMode::Deterministic, u});
    plan.runs.push_back({"CC-MPC " + bias_label(f, v), ControlMode::ChanceConstrained, u});
  }
  return plan;
}

int cmd_sweep(const Common& c, const std::string& family_name, std::vector<double> values, int jobs) {
  const Family f = family_name == "confidence" ? Family::Confidence
                   : family_name == "bound"    ? Family::Bound
                   : family_name == "scale"    ? Family::Scale
                                               : Family::Offset;
  if (values.empty()) values = default_values(f);
  const Inputs in = load_inputs(c);
  UncertaintyModel base{c.bound, c.scale, c.offset, c.gamma};
  const SweepPlan plan = plan_sweep(f, values, base);
  for (const auto& r : plan.runs) r.uncertainty.validate();

  const std::size_t n = plan.runs.size();
  std::vector<std::optional<RunOutput>> results(n);
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::mutex error_mutex;
  std::optional<std::size_t> error_index;
  std::exception_ptr error;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n || failed.load()) return;
      try {
        results[i] = execute(in, c, plan.runs[i]);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        failed = true;
        if (!error_index || i < *error_index) {
          error_index = i;
          error = std::current_exception();
        }
      }
    }
  };
  const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(n)));
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  const fs::path dir = output_dir(c, "sweep-" + family_name + "-" + in.scenario_label);
  std::vector<std::string> headers;
  std::vector<KpiReport> kpis;
  std::vector<TraceTable> traces;
  nlohmann::ordered_json doc;
  doc["family"] = family_name;
  doc["columns"] = nlohmann::ordered_json::array();
  std::optional<std::size_t> baseline;
  for (std::size_t i = 0; i < n; ++i) {
    if (!results[i]) continue;
    if (i == plan.baseline) baseline = headers.size();
    const auto& r = plan.runs[i];
    headers.push_back(r.label);
    kpis.push_back(results[i]->result.kpi);
    const fs::path run_dir = dir / slug(r.label);
    write_file(run_dir / "trace.csv", results[i]->trace_csv);
    write_file(run_dir / "kpi.json", kpi_to_json(results[i]->result.kpi).dump(2) + "\n");
    nlohmann::ordered_json col;
    col["label"] = r.label;
    col["mode"] = to_string(r.mode);
    col["gamma"] = r.uncertainty.gamma;
    col["bound"] = r.uncertainty.bound_pct;
    col["scale"] = r.uncertainty.scale_bias;
    col["offset"] = r.uncertainty.offset_bias;
    col["kpi"] = kpi_to_json(results[i]->result.kpi);
    doc["columns"].push_back(col);
    if (c.plot) traces.push_back(parse_trace(results[i]->trace_csv));
  }
  if (!kpis.empty()) {
    write_file(dir / "table.txt",
               table_header(in, c) + kpi_table(headers, kpis, baseline.value_or(0)));
    write_file(dir / "kpi.json", doc.dump(2) + "\n");
    if (c.plot) write_volume_plots(traces, headers, controlled_ids(traces.front()), dir / "plots");
  }
  if (error) {
    std::string what = "unknown error";
    try {
      std::rethrow_exception(error);
    } catch (const std::exception& e) {
      what = e.what();
    }
    write_file(dir / "error.txt", plan.runs[*error_index].label + ": " + what + "\n");
    log(Level::Error, "sweep aborted at " + plan.runs[*error_index].label + "; partial results in " +
                          dir.string());
    std::rethrow_exception(error);
  }
  std::cout << dir.string() << '\n';
  return 0;
}

int cmd_plot(const std::vector<std::string>& paths, const std::optional<std::string>& elements_arg,
             std::vector<std::string> labels, const std::string& out) {
  std::vector<TraceTable> traces;
  for (const auto& p : paths) {
    try {
      traces.push_back(parse_trace(read_file(p)));
    } catch (const InputError&) {
      throw;
    } catch (const std::exception& e) {
      throw InputError(p + ": " + e.what());
    }
  }
  for (std::size_t i = 1; i < traces.size(); ++i)
    if (traces[i].network != traces[0].network)
      throw InputError("traces come from different networks: '" + traces[0].network + "' (" + paths[0] +
                       ") and '" + traces[i].network + "' (" + paths[i] + ")");

  const std::vector<std::string> valid = tank_ids(traces[0]);
  std::string valid_list;
  for (const auto& v : valid) valid_list += (valid_list.empty() ? "" : ", ") + v;
  std::vector<std::string> elements;
  if (!elements_arg) {
    elements = controlled_ids(traces[0]);
  } else {
    std::stringstream ss(*elements_arg);
    std::string id;
    while (std::getline(ss, id, ','))
      if (!id.empty()) elements.push_back(id);
    if (elements.empty()) throw InputError("empty element filter; valid ids: " + valid_list);
  }
  for (const auto& id : elements) {
    for (const auto& t : traces)
      if (t.column("V_" + id) < 0) throw InputError("unknown element '" + id + "'; valid ids: " + valid_list);
  }
  if (labels.empty()) {
    for (const auto& p : paths) {
      const fs::path parent = fs::path(p).parent_path().filename();
      labels.push_back(parent.empty() ? fs::path(p).stem().string() : parent.string());
    }
  }
  if (labels.size() != paths.size()) throw InputError("one label per trace expected");
  const fs::path dir = out.empty() ? fs::path("out") / timestamp() / "plots" : fs::path(out);
  for (const auto& f : write_volume_plots(traces, labels, elements, dir)) std::cout << f.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deterministic and chance-constrained MPC of urban drainage networks"};
  app.require_subcommand(1);

  Common run_opts;
  std::string mode = "det";
  auto* run = app.add_subcommand("run", "Simulate one closed loop");
  add_common(run, run_opts);
  run->add_option("--mode", mode, "Controller")->check(CLI::IsMember({"det", "cc"}))->capture_default_str();

  Common sweep_opts;
  std::string family;
  std::vector<double> values;
  int jobs = 1;
  auto* sweep = app.add_subcommand("sweep", "Run baseline MPC plus one run per sweep value");
  add_common(sweep, sweep_opts);
  sweep->add_option("--family", family, "Sweep family")
      ->required()
      ->check(CLI::IsMember({"confidence", "bound", "scale", "offset"}));
  sweep->add_option("--values", values, "Sweep values (default: the family's standard list)")->delimiter(',');
  sweep->add_option("--jobs", jobs, "Concurrent runs")->check(CLI::PositiveNumber)->capture_default_str();

  std::vector<std::string> traces;
  std::optional<std::string> elements;
  std::vector<std::string> labels;
  std::string plot_out;
  auto* plot = app.add_subcommand("plot", "Overlay tank volume series of trace files");
  plot->add_option("traces", traces, "Trace CSV files")->required();
  plot->add_option("--elements", elements, "Comma-separated tank ids (default: controlled tanks)");
  plot->add_option("--labels", labels, "Series labels, one per trace")->delimiter(',');
  plot->add_option("--out", plot_out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*run) return cmd_run(run_opts, mode);
    if (*sweep) return cmd_sweep(sweep_opts, family, values, jobs);
    if (*plot) return cmd_plot(traces, elements, labels, plot_out);
  } catch (const ConfigError& e) {
    log(Level::Error, std::string(to_string(e.kind())) + ": " + e.what());
    return 1;
  } catch (const InputError& e) {
    log(Level::Error, e.what());
    return 1;
  } catch (const std::invalid_argument& e) {
    log(Level::Error, e.what());
    return 1;
  } catch (const SolverFailure& e) {
    log(Level::Error, std::string("solver failure: ") + e.what());
    return 2;
  } catch (const std::exception& e) {
    log(Level::Error, e.what());
    return 2;
  }
  return 0;
}
