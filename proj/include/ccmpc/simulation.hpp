#pragma once

/**
 * @file
 * Closed loop: forecast, controller step, realized runoff, plant step.
 */

#include <cstdint>
#include <functional>
#include <memory>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "controller.hpp"
#include "plant.hpp"
#include "report.hpp"
#include "scenario.hpp"
#include "uncertainty.hpp"

namespace ccmpc {

struct TraceRow {
  long step = 0;
  double time_s = 0.0;
  Eigen::VectorXd volumes;         // after the step
  Eigen::VectorXd q_u_command;
  Eigen::VectorXd q_u_applied;
  Eigen::VectorXd tank_overflow;
  Eigen::VectorXd pipe_overflow;
  Eigen::VectorXd w_realized;
  double wwtp_flow = 0.0;
  int solver_iterations = 0;
  double kkt_max = 0.0;
  bool solver_warning = false;
};

struct SimulationTrace {
  std::vector<std::string> tank_ids;
  std::vector<std::string> control_ids;
  std::vector<std::string> pipe_ids;
  std::vector<std::string> runoff_ids;
  std::string network;
  std::uint64_t seed = 0;
  std::vector<TraceRow> rows;
};

inline void write_trace_csv(std::ostream& os, const SimulationTrace& t) {
  os << "# network=" << t.network << " seed=" << t.seed << '\n';
  os << "step,time_s";
  for (const auto& id : t.tank_ids) os << ",V_" << id;
  for (const auto& id : t.control_ids) os << ",qu_cmd_" << id;
  for (const auto& id : t.control_ids) os << ",qu_" << id;
  for (const auto& id : t.tank_ids) os << ",qw_" << id;
  for (const auto& id : t.pipe_ids) os << ",qw_" << id;
  for (const auto& id : t.runoff_ids) os << ",w_" << id;
  os << ",q_wwtp,iterations,kkt_max,warning\n";
  const auto old = os.precision(10);
  for (const auto& r : t.rows) {
    os << r.step << ',' << r.time_s;
    for (const Eigen::VectorXd* v : {&r.volumes, &r.q_u_command, &r.q_u_applied, &r.tank_overflow,
                                     &r.pipe_overflow, &r.w_realized})
      for (Eigen::Index i = 0; i < v->size(); ++i) os << ',' << (*v)(i);
    os << ',' << r.wwtp_flow << ',' << r.solver_iterations << ',' << r.kkt_max << ','
       << (r.solver_warning ? 1 : 0) << '\n';
  }
  os.precision(old);
}

/// A trace CSV read back as named numeric columns.
struct TraceTable {
  std::string network;
  std::uint64_t seed = 0;
  std::vector<std::string> columns;
  Eigen::MatrixXd values;   // rows x columns

  int column(const std::string& name) const {
    for (std::size_t c = 0; c < columns.size(); ++c)
      if (columns[c] == name) return static_cast<int>(c);
    return -1;
  }
};

inline TraceTable read_trace_csv(std::istream& is) {
  TraceTable t;
  std::string line;
  if (!std::getline(is, line) || line.rfind("# ", 0) != 0)
    throw std::runtime_error("trace: missing '# network=... seed=...' header");
  {
    std::istringstream hs(line.substr(2));
    std::string field;
    while (hs >> field) {
      const auto eq = field.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = field.substr(0, eq), value = field.substr(eq + 1);
      if (key == "network") t.network = value;
      if (key == "seed") t.seed = std::stoull(value);
    }
  }
  if (!std::getline(is, line)) throw std::runtime_error("trace: missing column header");
  {
    std::istringstream hs(line);
    std::string name;
    while (std::getline(hs, name, ',')) t.columns.push_back(name);
  }
  std::vector<std::vector<double>> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream rs(line);
    std::string cell;
    std::vector<double> row;
    while (std::getline(rs, cell, ',')) row.push_back(std::stod(cell));
    if (row.size() != t.columns.size())
      throw std::runtime_error("trace: row " + std::to_string(rows.size() + 1) + " has " +
                               std::to_string(row.size()) + " fields, expected " +
                               std::to_string(t.columns.size()));
    rows.push_back(std::move(row));
  }
  t.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(t.columns.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c)
      t.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  return t;
}

struct SimulationOptions {
  /// Steps to simulate; -1 runs the whole scenario.
  long max_steps = -1;
  /// Plant steps whose relative mass residual exceeds this throw.
  double mass_tolerance = 1e-9;
  std::function<void(long step, const ControlDecision&)> on_step;
};

struct SimulationResult {
  SimulationTrace trace;
  KpiReport kpi;
  PlantState final_state;
  double max_mass_residual = 0.0;
  double max_kkt = 0.0;
  int solver_warnings = 0;
};

/**
 * Run one closed loop. The controller confidence is taken from
 * `uncertainty.gamma`; the plant starts in the dry-weather steady state of
 * the scenario's base flow, which also seeds the previous control.
 * Identical inputs and seed give bit-identical results.
 */
inline SimulationResult run_closed_loop(const NetworkSpec& spec, MpcConfig config,
                                        const CostWeights& weights,
                                        const UncertaintyModel& uncertainty,
                                        const RainfallScenario& scenario, std::uint64_t seed,
                                        const SimulationOptions& options = {}) {
  uncertainty.validate();
  config.gamma = uncertainty.gamma;
  config.validate();
  auto model = std::make_shared<const ControllerModel>(spec, config.horizon);
  const NetworkTopology& topo = model->topo;
  if (scenario.runoff.rows() != static_cast<Eigen::Index>(topo.n_runoff))
    throw std::invalid_argument("scenario does not match the network's runoff inputs");

  const Eigen::VectorXd w_dry =
      Eigen::VectorXd::Constant(static_cast<Eigen::Index>(topo.n_runoff), scenario.dry_weather);
  DryWeatherState dw = dry_weather_state(spec, topo, w_dry);
  Controller controller(model, config, weights, dw.q_u);
  PlantState plant = dw.state;

  SimulationResult res;
  SimulationTrace& tr = res.trace;
  tr.network = spec.name;
  tr.seed = seed;
  for (const auto& t : spec.tanks) tr.tank_ids.push_back(t.id);
  for (int i : topo.controlled_tanks) tr.control_ids.push_back(spec.tanks[static_cast<std::size_t>(i)].id);
  for (const auto& p : spec.pipe_csos) tr.pipe_ids.push_back(p.id);
  tr.runoff_ids = spec.runoff_inputs;

  const long steps = options.max_steps < 0 ? scenario.steps()
                                           : std::min<long>(options.max_steps, scenario.steps());
  for (long k = 0; k < steps; ++k) {
    const DisturbanceForecast forecast =
        make_forecast(scenario.window(static_cast<int>(k), config.horizon), uncertainty);
    StateMoments moments = StateMoments::zeros(topo);
    moments.mean_volumes = plant.volumes;
    moments.mean_delays = plant.delay_cells;

    const ControlDecision d = controller.step(moments, forecast);
    if (options.on_step) options.on_step(k, d);

    const Eigen::VectorXd w_real = sample_disturbance(scenario.runoff.col(k), uncertainty, seed,
                                                      static_cast<std::uint64_t>(k));
    PlantStepReport rep = plant_step(plant, d.q_u_first, w_real, spec, topo);
    if (rep.mass_residual > options.mass_tolerance)
      throw std::runtime_error("mass balance violated at step " + std::to_string(k));
    res.max_mass_residual = std::max(res.max_mass_residual, rep.mass_residual);
    res.max_kkt = std::max(res.max_kkt, d.solver.kkt_residuals.max());
    res.solver_warnings += d.warning ? 1 : 0;

    TraceRow row;
    row.step = k;
    row.time_s = static_cast<double>(k + 1) * spec.delta_t;
    row.volumes = rep.state.volumes;
    row.q_u_command = d.q_u_first;
    row.q_u_applied = rep.applied_q_u;
    row.tank_overflow = rep.tank_overflow;
    row.pipe_overflow = rep.pipe_overflow;
    row.w_realized = w_real;
    row.wwtp_flow = rep.wwtp_flow;
    row.solver_iterations = d.solver.iterations;
    row.kkt_max = d.solver.kkt_residuals.max();
    row.solver_warning = d.warning;
    tr.rows.push_back(std::move(row));
    plant = std::move(rep.state);
  }

  std::vector<double> cso(plant.cumulative_cso.data(),
                          plant.cumulative_cso.data() + plant.cumulative_cso.size());
  res.kpi = make_kpis(spec, cso, plant.wwtp_volume);
  res.kpi.scenario = scenario.name;
  res.kpi.seed = seed;
  res.final_state = std::move(plant);
  return res;
}

}  // namespace ccmpc
