#pragma once

/**
 * @file
 * Expectation and variance recursions for the network elements, and a
 * step-by-step propagator over a horizon. Uncertainty sources are treated
 * as independent; confluent flows add their variances.
 */

#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "network.hpp"

namespace ccmpc {

/// Moments of all states: tank volumes [m3, m6] and delay cells [m3/s, (m3/s)^2].
struct StateMoments {
  Eigen::VectorXd mean_volumes;
  Eigen::VectorXd var_volumes;
  Eigen::VectorXd mean_delays;
  Eigen::VectorXd var_delays;

  static StateMoments zeros(const NetworkTopology& topo) {
    StateMoments m;
    m.mean_volumes = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(topo.n_tanks));
    m.var_volumes = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(topo.n_tanks));
    m.mean_delays = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(topo.n_cells));
    m.var_delays = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(topo.n_cells));
    return m;
  }

  /// Stacked [volumes; delay cells] mean.
  Eigen::VectorXd mean_state() const {
    Eigen::VectorXd x(mean_volumes.size() + mean_delays.size());
    x << mean_volumes, mean_delays;
    return x;
  }
  Eigen::VectorXd var_state() const {
    Eigen::VectorXd x(var_volumes.size() + var_delays.size());
    x << var_volumes, var_delays;
    return x;
  }
};

struct ElementMoments {
  double mean_volume = 0.0;
  double var_volume = 0.0;
  double mean_outflow = 0.0;
  double var_outflow = 0.0;
};

namespace detail {
inline void require_nonnegative(double var_v, double var_qin) {
  if (var_v < 0.0 || var_qin < 0.0) throw std::invalid_argument("negative variance input");
}
}  // namespace detail

/// One step of a passive linear reservoir. Outflow moments refer to the
/// current volume; volume moments are the next sample.
inline ElementMoments step_passive_tank(double mean_v, double var_v, double mean_qin,
                                        double var_qin, double q_w, const TankSpec& tank,
                                        double dt) {
  if (tank.kind != TankKind::Passive) throw std::invalid_argument("tank is not passive");
  detail::require_nonnegative(var_v, var_qin);
  const double a = 1.0 - dt * tank.beta;
  return {a * mean_v + dt * (mean_qin - q_w), a * a * var_v + dt * dt * var_qin,
          tank.beta * mean_v, tank.beta * tank.beta * var_v};
}

/// One step of a tank with a controlled orifice; the outflow is the
/// deterministic control so its variance is exactly zero.
inline ElementMoments step_controlled_tank(double mean_v, double var_v, double mean_qin,
                                           double var_qin, double q_u, double q_w,
                                           const TankSpec& tank, double dt) {
  if (tank.kind != TankKind::Controlled) throw std::invalid_argument("tank is not controlled");
  detail::require_nonnegative(var_v, var_qin);
  return {mean_v + dt * (mean_qin - q_u - q_w), var_v + dt * dt * var_qin, q_u, 0.0};
}

/// Moments held in a delay chain; cell 0 is the most recent input.
struct DelayChainMoments {
  std::vector<double> mean;
  std::vector<double> var;
};

struct DelayStep {
  double mean_out = 0.0;
  double var_out = 0.0;
  DelayChainMoments state;
};

/// FIFO shift of a delay chain: the oldest cell leaves, the input enters.
inline DelayStep step_delay(double mean_in, double var_in, DelayChainMoments state) {
  if (state.mean.empty() || state.mean.size() != state.var.size())
    throw std::invalid_argument("delay chain must hold at least one cell");
  DelayStep out;
  out.mean_out = state.mean.back();
  out.var_out = state.var.back();
  for (std::size_t i = state.mean.size() - 1; i > 0; --i) {
    state.mean[i] = state.mean[i - 1];
    state.var[i] = state.var[i - 1];
  }
  state.mean[0] = mean_in;
  state.var[0] = var_in;
  out.state = std::move(state);
  return out;
}

/// Horizon inputs, stacked time-major (block k holds step k).
struct HorizonInputs {
  Eigen::VectorXd q_u;      // N * n_controlled
  Eigen::VectorXd q_w;      // N * n_tanks
  Eigen::VectorXd w_mean;   // N * n_runoff
  Eigen::VectorXd w_var;    // N * n_runoff
};

struct MomentTrajectory {
  std::vector<StateMoments> states;        // N + 1 entries, states[0] = initial
  Eigen::MatrixXd pre_overflow_mean;       // n_tanks x N
  Eigen::VectorXd sink_outflow_mean;       // N, outflow of the sink at step k
};

/**
 * Run the element recursions over `horizon` steps in topological order.
 * Each element's outflow at step k depends only on its own state (and
 * control), so sources are resolved before their consumers.
 */
inline MomentTrajectory propagate_moments(const NetworkSpec& spec, const NetworkTopology& topo,
                                          const StateMoments& initial, const HorizonInputs& in,
                                          int horizon) {
  const auto nt = static_cast<Eigen::Index>(topo.n_tanks);
  const auto nc = static_cast<Eigen::Index>(topo.n_controlled);
  const auto nw = static_cast<Eigen::Index>(topo.n_runoff);
  const double dt = spec.delta_t;
  const std::size_t n_elem = topo.element_ids.size();

  MomentTrajectory traj;
  traj.states.push_back(initial);
  traj.pre_overflow_mean = Eigen::MatrixXd::Zero(nt, horizon);
  traj.sink_outflow_mean = Eigen::VectorXd::Zero(horizon);

  std::vector<double> out_mean(n_elem), out_var(n_elem);
  for (int k = 0; k < horizon; ++k) {
    const StateMoments& cur = traj.states.back();
    StateMoments next = cur;
    for (int e : topo.order) {
      double in_mean = 0.0, in_var = 0.0;
      for (const auto& src : topo.sources[e]) {
        if (src.is_runoff) {
          in_mean += in.w_mean(k * nw + src.index);
          in_var += in.w_var(k * nw + src.index);
        } else {
          in_mean += out_mean[src.index];
          in_var += out_var[src.index];
        }
      }
      if (topo.is_tank(e)) {
        const TankSpec& tank = spec.tanks[e];
        const double qw = in.q_w(k * nt + e);
        ElementMoments m;
        if (tank.kind == TankKind::Passive) {
          m = step_passive_tank(cur.mean_volumes(e), cur.var_volumes(e), in_mean, in_var, qw,
                                tank, dt);
        } else {
          const double qu = in.q_u(k * nc + topo.control_index[e]);
          m = step_controlled_tank(cur.mean_volumes(e), cur.var_volumes(e), in_mean, in_var, qu,
                                   qw, tank, dt);
        }
        next.mean_volumes(e) = m.mean_volume;
        next.var_volumes(e) = m.var_volume;
        out_mean[e] = m.mean_outflow;
        out_var[e] = m.var_outflow;
        traj.pre_overflow_mean(e, k) = m.mean_volume + dt * qw;
      } else {
        const int d = topo.delay_of(e);
        const int off = topo.cell_offset[d];
        const int len = spec.delays[d].steps;
        DelayChainMoments chain;
        chain.mean.assign(cur.mean_delays.data() + off, cur.mean_delays.data() + off + len);
        chain.var.assign(cur.var_delays.data() + off, cur.var_delays.data() + off + len);
        DelayStep s = step_delay(in_mean, in_var, std::move(chain));
        for (int c = 0; c < len; ++c) {
          next.mean_delays(off + c) = s.state.mean[c];
          next.var_delays(off + c) = s.state.var[c];
        }
        out_mean[e] = s.mean_out;
        out_var[e] = s.var_out;
      }
    }
    traj.sink_outflow_mean(k) = out_mean[topo.sink];
    traj.states.push_back(std::move(next));
  }
  return traj;
}

}  // namespace ccmpc
