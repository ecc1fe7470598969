#pragma once

/**
 * @file
 * Truth model for closed-loop simulation: the element dynamics with
 * physical clipping, capacity-limited pipe CSO points and volume
 * accounting.
 */

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "network.hpp"

namespace ccmpc {

struct PlantState {
  Eigen::VectorXd volumes;          // per tank [m3]
  Eigen::VectorXd delay_cells;      // per delay cell [m3/s]
  Eigen::VectorXd cumulative_cso;   // tanks then pipe CSO points [m3]
  double wwtp_volume = 0.0;         // [m3]
  long step = 0;

  static PlantState empty(const NetworkSpec& spec, const NetworkTopology& topo) {
    PlantState s;
    s.volumes = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(topo.n_tanks));
    s.delay_cells = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(topo.n_cells));
    s.cumulative_cso =
        Eigen::VectorXd::Zero(static_cast<Eigen::Index>(topo.n_tanks + spec.pipe_csos.size()));
    return s;
  }

  /// Stored water [m3]: tank volumes plus flows held in delay cells.
  double storage(double dt) const { return volumes.sum() + dt * delay_cells.sum(); }
};

struct PlantStepReport {
  PlantState state;
  Eigen::VectorXd applied_q_u;       // per control slot [m3/s]
  Eigen::VectorXd tank_overflow;     // per tank [m3/s]
  Eigen::VectorXd pipe_overflow;     // per pipe CSO point [m3/s]
  double wwtp_flow = 0.0;            // [m3/s]
  double mass_residual = 0.0;        // relative
};

namespace detail {

struct PipeIndex {
  std::vector<int> element_pipe;     // per element: pipe CSO index or -1
};

inline PipeIndex pipe_index(const NetworkSpec& spec, const NetworkTopology& topo) {
  PipeIndex pi;
  pi.element_pipe.assign(topo.element_ids.size(), -1);
  for (std::size_t p = 0; p < spec.pipe_csos.size(); ++p) {
    const auto it = std::find(topo.element_ids.begin(), topo.element_ids.end(),
                              spec.pipe_csos[p].element);
    if (it == topo.element_ids.end())
      throw std::invalid_argument("pipe CSO '" + spec.pipe_csos[p].id + "' references unknown element '" +
                                  spec.pipe_csos[p].element + "'");
    pi.element_pipe[static_cast<std::size_t>(it - topo.element_ids.begin())] = static_cast<int>(p);
  }
  return pi;
}

}  // namespace detail

/**
 * Advance the plant one sample. Elements are processed in topological
 * order; a pipe CSO point spills the part of its element's inflow above
 * capacity. Controlled outflows are min(q_u, beta V, V / dt) with q_u
 * clamped to [0, q_u_max].
 */
inline PlantStepReport plant_step(const PlantState& state, const Eigen::VectorXd& q_u,
                                  const Eigen::VectorXd& w_actual, const NetworkSpec& spec,
                                  const NetworkTopology& topo) {
  if (w_actual.size() != static_cast<Eigen::Index>(topo.n_runoff))
    throw std::invalid_argument("plant_step: runoff vector has wrong size");
  if (q_u.size() != static_cast<Eigen::Index>(topo.n_controlled))
    throw std::invalid_argument("plant_step: control vector has wrong size");
  for (Eigen::Index i = 0; i < w_actual.size(); ++i)
    if (!std::isfinite(w_actual(i)) || w_actual(i) < 0.0)
      throw std::invalid_argument("plant_step: runoff must be finite and >= 0");
  if (!q_u.allFinite()) throw std::invalid_argument("plant_step: control is not finite");

  const double dt = spec.delta_t;
  const auto pipes = detail::pipe_index(spec, topo);
  PlantStepReport rep;
  rep.state = state;
  PlantState& next = rep.state;
  rep.applied_q_u = Eigen::VectorXd::Zero(q_u.size());
  rep.tank_overflow = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(topo.n_tanks));
  rep.pipe_overflow = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(spec.pipe_csos.size()));

  std::vector<double> outflow(topo.element_ids.size(), 0.0);
  for (int e : topo.order) {
    double in = 0.0;
    for (const auto& src : topo.sources[static_cast<std::size_t>(e)])
      in += src.is_runoff ? w_actual(src.index) : outflow[static_cast<std::size_t>(src.index)];
    if (const int p = pipes.element_pipe[static_cast<std::size_t>(e)]; p >= 0) {
      const double spill = std::max(0.0, in - spec.pipe_csos[static_cast<std::size_t>(p)].capacity);
      rep.pipe_overflow(p) = spill;
      in -= spill;
    }
    if (topo.is_tank(e)) {
      const TankSpec& tank = spec.tanks[static_cast<std::size_t>(e)];
      const double v = state.volumes(e);
      double out;
      if (tank.kind == TankKind::Passive) {
        out = tank.beta * v;
      } else {
        const int j = topo.control_index[static_cast<std::size_t>(e)];
        const double cmd = std::clamp(q_u(j), 0.0, *tank.q_u_max);
        out = std::max(0.0, std::min({cmd, tank.beta * v, v / dt}));
        rep.applied_q_u(j) = out;
      }
      double v_next = v + dt * (in - out);
      if (v_next > tank.v_max) {
        rep.tank_overflow(e) = (v_next - tank.v_max) / dt;
        v_next = tank.v_max;
      }
      next.volumes(e) = std::max(v_next, 0.0);
      outflow[static_cast<std::size_t>(e)] = out;
    } else {
      const int d = topo.delay_of(e);
      const int off = topo.cell_offset[static_cast<std::size_t>(d)];
      const int len = spec.delays[static_cast<std::size_t>(d)].steps;
      outflow[static_cast<std::size_t>(e)] = state.delay_cells(off + len - 1);
      for (int c = len - 1; c > 0; --c) next.delay_cells(off + c) = state.delay_cells(off + c - 1);
      next.delay_cells(off) = in;
    }
  }
  rep.wwtp_flow = outflow[static_cast<std::size_t>(topo.sink)];

  const auto nt = static_cast<Eigen::Index>(topo.n_tanks);
  next.cumulative_cso.head(nt) += dt * rep.tank_overflow;
  next.cumulative_cso.tail(rep.pipe_overflow.size()) += dt * rep.pipe_overflow;
  next.wwtp_volume += dt * rep.wwtp_flow;
  next.step = state.step + 1;

  const double inflow = dt * w_actual.sum();
  const double lost = dt * (rep.wwtp_flow + rep.tank_overflow.sum() + rep.pipe_overflow.sum());
  const double imbalance = inflow - (next.storage(dt) - state.storage(dt)) - lost;
  const double scale = std::max({inflow, state.storage(dt), next.storage(dt), lost, 1.0});
  rep.mass_residual = std::abs(imbalance) / scale;
  return rep;
}

struct DryWeatherState {
  PlantState state;
  Eigen::VectorXd q_u;   // steady control per slot
};

/**
 * Steady state under constant runoff: delay cells carry their inflow,
 * every tank passes its inflow on at the smallest volume that allows it
 * (V = q_in / beta).
 */
inline DryWeatherState dry_weather_state(const NetworkSpec& spec, const NetworkTopology& topo,
                                         const Eigen::VectorXd& w_dry) {
  if (w_dry.size() != static_cast<Eigen::Index>(topo.n_runoff))
    throw std::invalid_argument("dry weather runoff has wrong size");
  DryWeatherState dw;
  dw.state = PlantState::empty(spec, topo);
  dw.q_u = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(topo.n_controlled));
  std::vector<double> outflow(topo.element_ids.size(), 0.0);
  for (int e : topo.order) {
    double in = 0.0;
    for (const auto& src : topo.sources[static_cast<std::size_t>(e)])
      in += src.is_runoff ? w_dry(src.index) : outflow[static_cast<std::size_t>(src.index)];
    if (topo.is_tank(e)) {
      const TankSpec& tank = spec.tanks[static_cast<std::size_t>(e)];
      double q = in;
      if (tank.kind == TankKind::Controlled) {
        q = std::min(in, *tank.q_u_max);
        dw.q_u(topo.control_index[static_cast<std::size_t>(e)]) = q;
      }
      dw.state.volumes(e) = std::min(q / tank.beta, tank.v_max);
      outflow[static_cast<std::size_t>(e)] = q;
    } else {
      const int d = topo.delay_of(e);
      const int off = topo.cell_offset[static_cast<std::size_t>(d)];
      for (int c = 0; c < spec.delays[static_cast<std::size_t>(d)].steps; ++c)
        dw.state.delay_cells(off + c) = in;
      outflow[static_cast<std::size_t>(e)] = in;
    }
  }
  return dw;
}

}  // namespace ccmpc
