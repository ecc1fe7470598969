#pragma once

/**
 * @file
 * Condensed (state-eliminated) horizon prediction.
 *
 * Every predicted quantity is an affine function of the stacked controls
 * q^u, weir overflows q^w, initial state x_0 and runoff w:
 *
 *     y = on_u * q^u + on_qw * q^w + on_x0 * x_0 + on_w * w
 *
 * All stacked vectors are time-major (block k holds step k). The initial
 * state x_0 is [tank volumes; delay cells].
 */

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "network.hpp"

namespace ccmpc {

struct AffineMap {
  Eigen::MatrixXd on_u;
  Eigen::MatrixXd on_qw;
  Eigen::MatrixXd on_x0;
  Eigen::MatrixXd on_w;

  Eigen::Index rows() const { return on_u.rows(); }

  Eigen::VectorXd evaluate(const Eigen::VectorXd& q_u, const Eigen::VectorXd& q_w,
                           const Eigen::VectorXd& x0, const Eigen::VectorXd& w) const {
    return on_u * q_u + on_qw * q_w + on_x0 * x0 + on_w * w;
  }
};

/// Provenance of a constraint row.
enum class RowTag {
  TankLower,
  TankUpperAvoid,
  TankUpperExpected,
  ControlPipeMax,
  ControlBernoulli,
  SlackBoundS,
  SlackBoundC,
  Nonnegativity,
};

inline const char* to_string(RowTag t) {
  switch (t) {
    case RowTag::TankLower: return "TankLower";
    case RowTag::TankUpperAvoid: return "TankUpperAvoid";
    case RowTag::TankUpperExpected: return "TankUpperExpected";
    case RowTag::ControlPipeMax: return "ControlPipeMax";
    case RowTag::ControlBernoulli: return "ControlBernoulli";
    case RowTag::SlackBoundS: return "SlackBoundS";
    case RowTag::SlackBoundC: return "SlackBoundC";
    case RowTag::Nonnegativity: return "Nonnegativity";
  }
  return "?";
}

/// Which decision block a Nonnegativity row bounds.
enum class VariableBlock { ControlFlow, Overflow, SlackS, SlackC };

struct OmegaRow {
  int tank = 0;
  int step = 0;
  RowTag tag = RowTag::TankUpperExpected;
  VariableBlock block = VariableBlock::Overflow;   // meaningful for Nonnegativity only
};

struct CondensedPrediction {
  int horizon = 0;
  std::size_t n_controlled = 0;
  std::size_t n_tanks = 0;
  std::size_t n_state = 0;
  std::size_t n_runoff = 0;

  // Objective z, two rows per step k: [sink outflow at k; total tank overflow at k].
  Eigen::MatrixXd phi_con;
  Eigen::MatrixXd psi;
  Eigen::MatrixXd theta;
  Eigen::MatrixXd gamma;

  /// Pre-overflow next volume V_k + dt*(q_in - q_u) (controlled) or
  /// (1 - dt*beta) V_k + dt*q_in (passive); row tank*N + k.
  AffineMap pre_volume;
  /// Current volume V_k; row tank*N + k.
  AffineMap volume;

  // Deterministic inequality system
  //   omega_con q^u + omega_vol x_0 + omega_rain w + omega_weir q^w <= omega_rhs.
  Eigen::MatrixXd omega_con;
  Eigen::MatrixXd omega_vol;
  Eigen::MatrixXd omega_rain;
  Eigen::MatrixXd omega_weir;
  Eigen::VectorXd omega_rhs;
  std::vector<OmegaRow> omega_rows;

  // Row-variance propagation, elementwise squares of omega_vol / omega_rain.
  Eigen::MatrixXd xi_vol;
  Eigen::MatrixXd xi_rain;

  /// omega row of the upper volume limit / Bernoulli limit for tank*N + k
  /// (-1 where the tank has no such row).
  std::vector<Eigen::Index> upper_row;
  std::vector<Eigen::Index> bernoulli_row;

  Eigen::Index u_size() const { return horizon * static_cast<Eigen::Index>(n_controlled); }
  Eigen::Index qw_size() const { return horizon * static_cast<Eigen::Index>(n_tanks); }
  Eigen::Index w_size() const { return horizon * static_cast<Eigen::Index>(n_runoff); }

  /// Index of the omega row with the given tag for (tank, step); -1 if absent.
  Eigen::Index omega_row(int tank, int step, RowTag tag) const {
    for (std::size_t r = 0; r < omega_rows.size(); ++r) {
      const auto& o = omega_rows[r];
      if (o.tank == tank && o.step == step && o.tag == tag) return static_cast<Eigen::Index>(r);
    }
    return -1;
  }
};

inline constexpr std::size_t kDefaultPredictionLimit = 500000;

/**
 * Condense the network dynamics over `horizon` steps.
 *
 * Throws std::invalid_argument for horizon < 1 and std::length_error when
 * horizon * (states + elements) exceeds `size_limit`.
 */
inline CondensedPrediction condense(const NetworkSpec& spec, const NetworkTopology& topo,
                                    int horizon,
                                    std::size_t size_limit = kDefaultPredictionLimit) {
  using Eigen::Index;
  using Eigen::MatrixXd;
  using Eigen::RowVectorXd;
  if (horizon < 1) throw std::invalid_argument("condense: horizon must be >= 1");
  const std::size_t footprint =
      static_cast<std::size_t>(horizon) * (topo.n_state() + topo.element_ids.size());
  if (footprint > size_limit)
    throw std::length_error("condense: horizon x element count " + std::to_string(footprint) +
                            " exceeds limit " + std::to_string(size_limit));

  const Index N = horizon;
  const Index nc = static_cast<Index>(topo.n_controlled);
  const Index nt = static_cast<Index>(topo.n_tanks);
  const Index nx = static_cast<Index>(topo.n_state());
  const Index nw = static_cast<Index>(topo.n_runoff);
  const double dt = spec.delta_t;

  // Combined column space [u | qw | x0 | w].
  const Index c_u = 0, c_qw = N * nc, c_x0 = c_qw + N * nt, c_w = c_x0 + nx;
  const Index cols = c_w + N * nw;
  auto col_u = [&](Index k, Index j) { return c_u + k * nc + j; };
  auto col_qw = [&](Index k, Index i) { return c_qw + k * nt + i; };
  auto col_w = [&](Index k, Index r) { return c_w + k * nw + r; };

  MatrixXd X = MatrixXd::Zero(nx, cols);
  X.block(0, c_x0, nx, nx).setIdentity();

  MatrixXd z(2 * N, cols);
  MatrixXd pre(nt * N, cols);
  MatrixXd vol(nt * N, cols);
  const std::size_t n_elem = topo.element_ids.size();
  std::vector<RowVectorXd> outflow(n_elem, RowVectorXd::Zero(cols));

  for (Index k = 0; k < N; ++k) {
    MatrixXd next = X;
    for (int e : topo.order) {
      RowVectorXd in = RowVectorXd::Zero(cols);
      for (const auto& src : topo.sources[e]) {
        if (src.is_runoff) {
          in(col_w(k, src.index)) += 1.0;
        } else {
          in += outflow[src.index];
        }
      }
      if (topo.is_tank(e)) {
        const TankSpec& tank = spec.tanks[e];
        RowVectorXd p;
        if (tank.kind == TankKind::Passive) {
          outflow[e] = tank.beta * X.row(e);
          p = (1.0 - dt * tank.beta) * X.row(e) + dt * in;
        } else {
          outflow[e] = RowVectorXd::Zero(cols);
          outflow[e](col_u(k, topo.control_index[e])) = 1.0;
          p = X.row(e) + dt * in - dt * outflow[e];
        }
        pre.row(e * N + k) = p;
        vol.row(e * N + k) = X.row(e);
        next.row(e) = p;
        next(e, col_qw(k, e)) -= dt;
      } else {
        const int d = topo.delay_of(e);
        const int first = topo.state_of_cell(topo.cell_offset[d]);
        const int len = spec.delays[d].steps;
        outflow[e] = X.row(first + len - 1);
        for (int c = len - 1; c > 0; --c) next.row(first + c) = X.row(first + c - 1);
        next.row(first) = in;
      }
    }
    z.row(2 * k) = outflow[topo.sink];
    z.row(2 * k + 1).setZero();
    for (Index i = 0; i < nt; ++i) z(2 * k + 1, col_qw(k, i)) = 1.0;
    X = std::move(next);
  }

  auto split = [&](const MatrixXd& m) {
    AffineMap a;
    a.on_u = m.middleCols(c_u, N * nc);
    a.on_qw = m.middleCols(c_qw, N * nt);
    a.on_x0 = m.middleCols(c_x0, nx);
    a.on_w = m.middleCols(c_w, N * nw);
    return a;
  };

  CondensedPrediction cp;
  cp.horizon = horizon;
  cp.n_controlled = topo.n_controlled;
  cp.n_tanks = topo.n_tanks;
  cp.n_state = topo.n_state();
  cp.n_runoff = topo.n_runoff;
  {
    AffineMap zm = split(z);
    cp.phi_con = std::move(zm.on_u);
    cp.gamma = std::move(zm.on_qw);
    cp.psi = std::move(zm.on_x0);
    cp.theta = std::move(zm.on_w);
  }
  cp.pre_volume = split(pre);
  cp.volume = split(vol);

  // Deterministic system rows: tanks in topological order, steps inner.
  std::vector<RowVectorXd> rows;
  std::vector<double> rhs;
  for (int i : topo.tank_order) {
    const TankSpec& tank = spec.tanks[i];
    const bool controlled = tank.kind == TankKind::Controlled;
    auto push = [&](RowVectorXd row, double b, RowTag tag, int k,
                    VariableBlock block = VariableBlock::Overflow) {
      rows.push_back(std::move(row));
      rhs.push_back(b);
      cp.omega_rows.push_back({i, k, tag, block});
    };
    for (Index k = 0; k < N; ++k) {
      RowVectorXd next_v = pre.row(i * N + k);
      next_v(col_qw(k, i)) -= dt;
      push(next_v, tank.v_max, RowTag::TankUpperExpected, static_cast<int>(k));
    }
    for (Index k = 0; k < N; ++k) {
      RowVectorXd next_v = pre.row(i * N + k);
      next_v(col_qw(k, i)) -= dt;
      push(-next_v, 0.0, RowTag::TankLower, static_cast<int>(k));
    }
    if (controlled) {
      const Index j = topo.control_index[i];
      for (Index k = 0; k < N; ++k) {
        RowVectorXd r = RowVectorXd::Zero(cols);
        r(col_u(k, j)) = -1.0;
        push(r, 0.0, RowTag::Nonnegativity, static_cast<int>(k), VariableBlock::ControlFlow);
      }
      for (Index k = 0; k < N; ++k) {
        RowVectorXd r = RowVectorXd::Zero(cols);
        r(col_u(k, j)) = 1.0;
        push(r, *tank.q_u_max, RowTag::ControlPipeMax, static_cast<int>(k));
      }
      for (Index k = 0; k < N; ++k) {
        RowVectorXd r = -tank.beta * vol.row(i * N + k);
        r(col_u(k, j)) += 1.0;
        push(r, 0.0, RowTag::ControlBernoulli, static_cast<int>(k));
      }
    }
    for (Index k = 0; k < N; ++k) {
      RowVectorXd r = RowVectorXd::Zero(cols);
      r(col_qw(k, i)) = -1.0;
      push(r, 0.0, RowTag::Nonnegativity, static_cast<int>(k), VariableBlock::Overflow);
    }
  }

  MatrixXd omega(static_cast<Index>(rows.size()), cols);
  for (std::size_t r = 0; r < rows.size(); ++r) omega.row(static_cast<Index>(r)) = rows[r];
  AffineMap om = split(omega);
  cp.omega_con = std::move(om.on_u);
  cp.omega_weir = std::move(om.on_qw);
  cp.omega_vol = std::move(om.on_x0);
  cp.omega_rain = std::move(om.on_w);
  cp.omega_rhs = Eigen::Map<Eigen::VectorXd>(rhs.data(), static_cast<Index>(rhs.size()));
  cp.xi_vol = cp.omega_vol.cwiseAbs2();
  cp.xi_rain = cp.omega_rain.cwiseAbs2();

  cp.upper_row.assign(static_cast<std::size_t>(nt * N), -1);
  cp.bernoulli_row.assign(static_cast<std::size_t>(nt * N), -1);
  for (std::size_t r = 0; r < cp.omega_rows.size(); ++r) {
    const auto& o = cp.omega_rows[r];
    const auto slot = static_cast<std::size_t>(o.tank * N + o.step);
    if (o.tag == RowTag::TankUpperExpected) cp.upper_row[slot] = static_cast<Index>(r);
    if (o.tag == RowTag::ControlBernoulli) cp.bernoulli_row[slot] = static_cast<Index>(r);
  }
  return cp;
}

inline CondensedPrediction condense(const NetworkSpec& spec, int horizon,
                                    std::size_t size_limit = kDefaultPredictionLimit) {
  return condense(spec, analyze(spec), horizon, size_limit);
}

/**
 * Per-row standard deviation of the random part omega_vol x_0 + omega_rain w,
 * with independent entries: sqrt(xi_vol var(x_0) + xi_rain var(w)).
 * `var_w` is stacked time-major.
 */
inline Eigen::VectorXd row_std(const CondensedPrediction& p, const Eigen::VectorXd& var_x0,
                               const Eigen::VectorXd& var_w) {
  if ((var_x0.array() < 0.0).any() || (var_w.array() < 0.0).any())
    throw std::invalid_argument("row_std: negative variance");
  return (p.xi_vol * var_x0 + p.xi_rain * var_w).cwiseSqrt();
}

/// Overload taking var_w as [n_runoff x horizon] (column k = step k).
inline Eigen::VectorXd row_std(const CondensedPrediction& p, const Eigen::VectorXd& var_x0,
                               const Eigen::MatrixXd& var_w) {
  const Eigen::VectorXd stacked = Eigen::Map<const Eigen::VectorXd>(var_w.data(), var_w.size());
  return row_std(p, var_x0, stacked);
}

}  // namespace ccmpc
