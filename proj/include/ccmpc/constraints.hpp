#pragma once

/**
 * @file
 * Linear inequality systems A x <= b over the decision vector
 *
 *     x = [q^u | q^w]            (deterministic)
 *     x = [q^u | q^w | s | c]    (chance constrained)
 *
 * with every block stacked time-major. s and c hold one entry per
 * (tank, step) at index step * n_tanks + tank.
 */

#include <algorithm>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "condense.hpp"
#include "qp.hpp"
#include "quantile.hpp"

namespace ccmpc {

enum class RowKind { Expectation, Probabilistic };

inline const char* to_string(RowKind k) {
  return k == RowKind::Expectation ? "Expectation" : "Probabilistic";
}

struct ConstraintRow {
  int tank = 0;
  int step = 0;
  RowKind kind = RowKind::Expectation;
  RowTag tag = RowTag::TankUpperExpected;
  VariableBlock block = VariableBlock::Overflow;  // bounded block of Nonnegativity rows
  double rhs_base = 0.0;
  double tightening_std = 0.0;
  double rhs = 0.0;
};

struct InequalitySystem {
  VariableLayout layout;
  SparseRowMatrix matrix;
  Eigen::VectorXd rhs;
  std::vector<ConstraintRow> rows;
  int horizon = 0;
  std::size_t n_tanks = 0;
  std::size_t n_controlled = 0;
  double gamma = 0.5;
  double quantile = 0.0;

  bool has_slacks() const { return layout.find("s") != nullptr; }
  Eigen::Index n_vars() const { return layout.size(); }
  Eigen::Index u_col(int step, int control) const {
    return static_cast<Eigen::Index>(step) * static_cast<Eigen::Index>(n_controlled) + control;
  }
  Eigen::Index block_col(const char* block, int step, int tank) const {
    const auto* b = layout.find(block);
    if (!b) throw std::out_of_range(std::string("no variable block ") + block);
    return b->offset + static_cast<Eigen::Index>(step) * static_cast<Eigen::Index>(n_tanks) + tank;
  }
  Eigen::Index qw_col(int step, int tank) const { return block_col("q_w", step, tank); }
  Eigen::Index s_col(int step, int tank) const { return block_col("s", step, tank); }
  Eigen::Index c_col(int step, int tank) const { return block_col("c", step, tank); }
};

struct AssemblyOptions {
  /// Assemble controlled-tank lower limits in probabilistic form with the
  /// lower slack s. This reintroduces the slack coupling and exists only
  /// to exercise verify_decoupling.
  bool probabilistic_controlled_lower = false;
};

namespace detail {

class RowBuilder {
 public:
  explicit RowBuilder(Eigen::Index n_vars) : n_vars_(n_vars) {}

  Eigen::Index n_rows() const { return static_cast<Eigen::Index>(rows_.size()); }

  void add(Eigen::Index col, double v) {
    if (v != 0.0) trip_.emplace_back(n_rows(), col, v);
  }
  void add_dense(const Eigen::MatrixXd& m, Eigen::Index row, Eigen::Index col_offset,
                 double scale = 1.0) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) add(col_offset + c, scale * m(row, c));
  }
  void finish(ConstraintRow row) { rows_.push_back(row); }

  InequalitySystem build(VariableLayout layout) {
    InequalitySystem sys;
    sys.layout = std::move(layout);
    sys.matrix.resize(n_rows(), n_vars_);
    sys.matrix.setFromTriplets(trip_.begin(), trip_.end());
    sys.matrix.makeCompressed();
    sys.rhs.resize(n_rows());
    for (Eigen::Index r = 0; r < n_rows(); ++r) sys.rhs(r) = rows_[static_cast<std::size_t>(r)].rhs;
    sys.rows = std::move(rows_);
    return sys;
  }

 private:
  Eigen::Index n_vars_;
  std::vector<Eigen::Triplet<double>> trip_;
  std::vector<ConstraintRow> rows_;
};

inline void check_inputs(const CondensedPrediction& p, const Eigen::VectorXd& x0,
                         const Eigen::VectorXd& w) {
  if (x0.size() != static_cast<Eigen::Index>(p.n_state))
    throw std::invalid_argument("initial state has wrong dimension");
  if (w.size() != p.w_size()) throw std::invalid_argument("runoff vector has wrong dimension");
}

inline Eigen::VectorXd stack(const Eigen::MatrixXd& per_step) {
  return Eigen::Map<const Eigen::VectorXd>(per_step.data(), per_step.size());
}

}  // namespace detail

/**
 * Deterministic system: per tank and step 0 <= V_{k+1} <= V_max,
 * 0 <= q^u <= q^u_max, q^u <= beta V_k and q^w >= 0, with the initial state
 * and runoff absorbed into the right-hand side. Row order follows
 * CondensedPrediction::omega_rows.
 */
inline InequalitySystem assemble_deterministic(const CondensedPrediction& p,
                                               const Eigen::VectorXd& x0,
                                               const Eigen::VectorXd& w_mean) {
  detail::check_inputs(p, x0, w_mean);
  VariableLayout layout;
  const Eigen::Index off_u = layout.append("q_u", p.u_size());
  const Eigen::Index off_qw = layout.append("q_w", p.qw_size());
  const Eigen::VectorXd b = p.omega_rhs - p.omega_vol * x0 - p.omega_rain * w_mean;

  detail::RowBuilder rb(layout.size());
  for (Eigen::Index r = 0; r < static_cast<Eigen::Index>(p.omega_rows.size()); ++r) {
    rb.add_dense(p.omega_con, r, off_u);
    rb.add_dense(p.omega_weir, r, off_qw);
    const OmegaRow& o = p.omega_rows[static_cast<std::size_t>(r)];
    rb.finish({o.tank, o.step, RowKind::Expectation, o.tag, o.block, b(r), 0.0, b(r)});
  }
  InequalitySystem sys = rb.build(std::move(layout));
  sys.horizon = p.horizon;
  sys.n_tanks = p.n_tanks;
  sys.n_controlled = p.n_controlled;
  return sys;
}

inline InequalitySystem assemble_deterministic(const CondensedPrediction& p,
                                               const Eigen::VectorXd& x0,
                                               const Eigen::MatrixXd& w_mean) {
  return assemble_deterministic(p, x0, detail::stack(w_mean));
}

/**
 * Chance-constrained system with slacks. Probabilistic rows are tightened
 * by tightening_std * tightening_quantile(gamma). Passive tanks get a
 * probabilistic lower limit with slack s; controlled tanks keep the lower
 * limit as an expectation row and carry s on the Bernoulli limit instead.
 * Both kinds carry c on the overflow-avoidance row. The upper bound on s is
 * max(std * z, 0), so s vanishes whenever tightening does not shrink the
 * region.
 */
inline InequalitySystem assemble_chance(const CondensedPrediction& p, const NetworkSpec& spec,
                                        const NetworkTopology& topo, const Eigen::VectorXd& x0_mean,
                                        const Eigen::VectorXd& x0_var,
                                        const Eigen::VectorXd& w_mean,
                                        const Eigen::VectorXd& w_var, double gamma,
                                        AssemblyOptions options = {}) {
  detail::check_inputs(p, x0_mean, w_mean);
  detail::check_inputs(p, x0_var, w_var);
  const double z = tightening_quantile(gamma);
  const Eigen::VectorXd sigma = row_std(p, x0_var, w_var);

  const int N = p.horizon;
  const auto nt = static_cast<Eigen::Index>(p.n_tanks);
  const auto nc = static_cast<Eigen::Index>(p.n_controlled);
  const double dt = spec.delta_t;

  VariableLayout layout;
  const Eigen::Index off_u = layout.append("q_u", p.u_size());
  const Eigen::Index off_qw = layout.append("q_w", p.qw_size());
  const Eigen::Index off_s = layout.append("s", p.qw_size());
  const Eigen::Index off_c = layout.append("c", p.qw_size());
  auto qw = [&](int k, int i) { return off_qw + k * nt + i; };
  auto sc = [&](int k, int i) { return off_s + k * nt + i; };
  auto cc = [&](int k, int i) { return off_c + k * nt + i; };

  const Eigen::VectorXd pre_mean = p.pre_volume.on_x0 * x0_mean + p.pre_volume.on_w * w_mean;
  const Eigen::VectorXd vol_mean = p.volume.on_x0 * x0_mean + p.volume.on_w * w_mean;

  detail::RowBuilder rb(layout.size());
  auto pre_coeffs = [&](Eigen::Index r, double scale) {
    rb.add_dense(p.pre_volume.on_u, r, off_u, scale);
    rb.add_dense(p.pre_volume.on_qw, r, off_qw, scale);
  };
  auto prob = [&](int i, int k, RowTag tag, double base, double sd) {
    rb.finish({i, k, RowKind::Probabilistic, tag, VariableBlock::Overflow, base, sd, base - sd * z});
  };
  auto expect = [&](int i, int k, RowTag tag, double base,
                    VariableBlock block = VariableBlock::Overflow) {
    rb.finish({i, k, RowKind::Expectation, tag, block, base, 0.0, base});
  };
  auto nonneg = [&](int i, VariableBlock block, auto col) {
    for (int k = 0; k < N; ++k) {
      rb.add(col(k, i), -1.0);
      expect(i, k, RowTag::Nonnegativity, 0.0, block);
    }
  };

  for (int i : topo.tank_order) {
    const TankSpec& tank = spec.tanks[static_cast<std::size_t>(i)];
    const bool controlled = tank.kind == TankKind::Controlled;
    auto slot = [&](int k) { return static_cast<Eigen::Index>(i) * N + k; };
    auto sd_pre = [&](int k) {
      return sigma(p.upper_row[static_cast<std::size_t>(slot(k))]);
    };

    // Lower volume limit
    for (int k = 0; k < N; ++k) {
      const Eigen::Index r = slot(k);
      pre_coeffs(r, -1.0);
      rb.add(qw(k, i), dt);
      if (!controlled || options.probabilistic_controlled_lower) {
        rb.add(sc(k, i), -1.0);
        prob(i, k, RowTag::TankLower, pre_mean(r), sd_pre(k));
      } else {
        expect(i, k, RowTag::TankLower, pre_mean(r));
      }
    }
    // Overflow avoidance, pre-overflow volume below the limit
    for (int k = 0; k < N; ++k) {
      const Eigen::Index r = slot(k);
      pre_coeffs(r, 1.0);
      rb.add(cc(k, i), -1.0);
      prob(i, k, RowTag::TankUpperAvoid, tank.v_max - pre_mean(r), sd_pre(k));
    }
    // Expected overflow
    for (int k = 0; k < N; ++k) {
      const Eigen::Index r = slot(k);
      pre_coeffs(r, 1.0);
      rb.add(qw(k, i), -dt);
      expect(i, k, RowTag::TankUpperExpected, tank.v_max - pre_mean(r));
    }
    if (controlled) {
      const int j = topo.control_index[static_cast<std::size_t>(i)];
      for (int k = 0; k < N; ++k) {
        rb.add(off_u + k * nc + j, -1.0);
        expect(i, k, RowTag::Nonnegativity, 0.0, VariableBlock::ControlFlow);
      }
      for (int k = 0; k < N; ++k) {
        rb.add(off_u + k * nc + j, 1.0);
        expect(i, k, RowTag::ControlPipeMax, *tank.q_u_max);
      }
      for (int k = 0; k < N; ++k) {
        const Eigen::Index r = slot(k);
        rb.add_dense(p.volume.on_u, r, off_u, -tank.beta);
        rb.add_dense(p.volume.on_qw, r, off_qw, -tank.beta);
        rb.add(off_u + k * nc + j, 1.0);
        rb.add(sc(k, i), -1.0);
        prob(i, k, RowTag::ControlBernoulli, tank.beta * vol_mean(r),
             sigma(p.bernoulli_row[static_cast<std::size_t>(r)]));
      }
    }
    // Upper bound on s: it may cancel the tightening, never more.
    for (int k = 0; k < N; ++k) {
      const double sd = controlled && !options.probabilistic_controlled_lower
                            ? sigma(p.bernoulli_row[static_cast<std::size_t>(slot(k))])
                            : sd_pre(k);
      rb.add(sc(k, i), 1.0);
      expect(i, k, RowTag::SlackBoundS, std::max(sd * z, 0.0));
    }
    nonneg(i, VariableBlock::Overflow, qw);
    nonneg(i, VariableBlock::SlackS, sc);
    nonneg(i, VariableBlock::SlackC, cc);
  }

  InequalitySystem sys = rb.build(std::move(layout));
  sys.horizon = N;
  sys.n_tanks = p.n_tanks;
  sys.n_controlled = p.n_controlled;
  sys.gamma = gamma;
  sys.quantile = z;
  return sys;
}

inline InequalitySystem assemble_chance(const CondensedPrediction& p, const NetworkSpec& spec,
                                        const NetworkTopology& topo, const Eigen::VectorXd& x0_mean,
                                        const Eigen::VectorXd& x0_var,
                                        const Eigen::MatrixXd& w_mean,
                                        const Eigen::MatrixXd& w_var, double gamma,
                                        AssemblyOptions options = {}) {
  return assemble_chance(p, spec, topo, x0_mean, x0_var, detail::stack(w_mean),
                         detail::stack(w_var), gamma, options);
}

struct DecouplingReport {
  bool ok = true;
  std::vector<std::string> violations;
};

/**
 * Structural check that no controlled-tank lower volume limit carries a
 * slack column. Such a row combined with the overflow-avoidance row
 * couples s and c (s <= c + V_max - dt q^w), forcing c up whenever s is
 * large.
 */
inline DecouplingReport verify_decoupling(const InequalitySystem& sys, const NetworkSpec& spec) {
  DecouplingReport rep;
  const auto* s_block = sys.layout.find("s");
  const auto* c_block = sys.layout.find("c");
  if (!s_block || !c_block) return rep;
  for (Eigen::Index r = 0; r < sys.matrix.rows(); ++r) {
    const ConstraintRow& row = sys.rows[static_cast<std::size_t>(r)];
    if (row.tag != RowTag::TankLower) continue;
    if (spec.tanks[static_cast<std::size_t>(row.tank)].kind != TankKind::Controlled) continue;
    bool slack = row.kind == RowKind::Probabilistic;
    for (SparseRowMatrix::InnerIterator it(sys.matrix, r); it; ++it) {
      const Eigen::Index c = it.col();
      if (c >= s_block->offset && c < c_block->offset + c_block->size) slack = true;
    }
    if (slack) {
      rep.ok = false;
      rep.violations.push_back("tank " + spec.tanks[static_cast<std::size_t>(row.tank)].id +
                               " step " + std::to_string(row.step) +
                               ": lower limit carries a probabilistic slack");
    }
  }
  return rep;
}

/// Dump A (coordinate format) followed by b (array format), 1-based.
inline void write_matrix_market(std::ostream& os, const InequalitySystem& sys) {
  os.precision(17);
  os << "%%MatrixMarket matrix coordinate real general\n";
  os << "% columns:";
  for (const auto& b : sys.layout.blocks) os << ' ' << b.name << '[' << b.offset << ',' << b.size << ']';
  os << '\n' << sys.matrix.rows() << ' ' << sys.matrix.cols() << ' ' << sys.matrix.nonZeros() << '\n';
  for (Eigen::Index r = 0; r < sys.matrix.rows(); ++r)
    for (SparseRowMatrix::InnerIterator it(sys.matrix, r); it; ++it)
      os << r + 1 << ' ' << it.col() + 1 << ' ' << it.value() << '\n';
  os << "%%MatrixMarket matrix array real general\n";
  os << sys.rhs.size() << " 1\n";
  for (Eigen::Index r = 0; r < sys.rhs.size(); ++r) os << sys.rhs(r) << '\n';
}

}  // namespace ccmpc
