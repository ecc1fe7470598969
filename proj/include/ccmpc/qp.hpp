#pragma once

/**
 * @file
 * Convex QP in inequality form
 *
 *     min  1/2 x'Hx + g'x + constant    s.t.  A x <= b
 *
 * solved by a primal-dual interior point method with Mehrotra
 * predictor-corrector steps, plus a brute-force active-set enumerator
 * used as a test oracle for small instances.
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace ccmpc {

using SparseMatrix = Eigen::SparseMatrix<double>;
using SparseRowMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Named contiguous blocks of the decision vector.
struct VariableLayout {
  struct Block {
    std::string name;
    Eigen::Index offset = 0;
    Eigen::Index size = 0;
  };
  std::vector<Block> blocks;

  Eigen::Index size() const {
    return blocks.empty() ? 0 : blocks.back().offset + blocks.back().size;
  }
  Eigen::Index append(std::string name, Eigen::Index n) {
    const Eigen::Index off = size();
    blocks.push_back({std::move(name), off, n});
    return off;
  }
  const Block* find(const std::string& name) const {
    for (const auto& b : blocks)
      if (b.name == name) return &b;
    return nullptr;
  }
};

struct QpProblem {
  SparseMatrix hessian;
  Eigen::VectorXd linear_cost;
  SparseRowMatrix ineq_matrix;
  Eigen::VectorXd ineq_rhs;
  VariableLayout variable_layout;
  double constant = 0.0;

  Eigen::Index n() const { return linear_cost.size(); }
  Eigen::Index m() const { return ineq_rhs.size(); }

  double objective(const Eigen::VectorXd& x) const {
    return 0.5 * x.dot(hessian * x) + linear_cost.dot(x) + constant;
  }

  /// Throws std::invalid_argument on inconsistent sizes, an asymmetric
  /// Hessian, or a Hessian that fails the semidefinite factorization test.
  void validate() const {
    const Eigen::Index nv = n();
    if (hessian.rows() != nv || hessian.cols() != nv)
      throw std::invalid_argument("QpProblem: hessian size mismatch");
    if (ineq_matrix.cols() != nv || ineq_matrix.rows() != m())
      throw std::invalid_argument("QpProblem: constraint size mismatch");
    if (variable_layout.size() != 0 && variable_layout.size() != nv)
      throw std::invalid_argument("QpProblem: layout does not cover the variables");
    SparseMatrix diff = SparseMatrix(hessian.transpose()) - hessian;
    diff.prune(0.0);
    if (diff.nonZeros() != 0) throw std::invalid_argument("QpProblem: hessian is not symmetric");
    if (nv == 0 || hessian.nonZeros() == 0) return;

    double scale = 0.0;
    for (int k = 0; k < hessian.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(hessian, k); it; ++it)
        scale = std::max(scale, std::abs(it.value()));
    SparseMatrix shifted = hessian;
    for (Eigen::Index i = 0; i < nv; ++i) shifted.coeffRef(i, i) += 1e-10 * scale;
    Eigen::SimplicialLDLT<SparseMatrix> ldlt(shifted);
    if (ldlt.info() != Eigen::Success || (ldlt.vectorD().array() < -1e-10 * scale).any())
      throw std::invalid_argument("QpProblem: hessian is not positive semidefinite");
  }
};

/// Build a problem from dense data (convenient for small instances).
inline QpProblem make_qp(const Eigen::MatrixXd& H, const Eigen::VectorXd& g,
                         const Eigen::MatrixXd& A, const Eigen::VectorXd& b) {
  QpProblem p;
  p.hessian = H.sparseView();
  p.linear_cost = g;
  p.ineq_matrix = A.sparseView();
  p.ineq_rhs = b;
  p.validate();
  return p;
}

enum class QpStatus { Optimal, MaxIterations, Infeasible };

inline const char* to_string(QpStatus s) {
  switch (s) {
    case QpStatus::Optimal: return "optimal";
    case QpStatus::MaxIterations: return "max_iterations";
    case QpStatus::Infeasible: return "infeasible";
  }
  return "?";
}

struct KktResiduals {
  double stationarity = 0.0;     // ||Hx + g + A'lambda||_inf
  double primal = 0.0;           // ||max(Ax - b, 0)||_inf
  double complementarity = 0.0;  // |lambda'(Ax - b)|

  double max() const { return std::max({stationarity, primal, complementarity}); }
};

inline KktResiduals kkt_residuals(const QpProblem& p, const Eigen::VectorXd& x,
                                  const Eigen::VectorXd& lambda) {
  KktResiduals r;
  const Eigen::VectorXd ax_b = p.ineq_matrix * x - p.ineq_rhs;
  r.stationarity = p.n() == 0 ? 0.0
                              : (p.hessian * x + p.linear_cost +
                                 p.ineq_matrix.transpose() * lambda)
                                    .lpNorm<Eigen::Infinity>();
  r.primal = p.m() == 0 ? 0.0 : ax_b.cwiseMax(0.0).maxCoeff();
  r.complementarity = std::abs(lambda.dot(ax_b));
  return r;
}

struct QpSolution {
  Eigen::VectorXd primal;
  Eigen::VectorXd dual;
  QpStatus status = QpStatus::MaxIterations;
  KktResiduals kkt_residuals;
  int iterations = 0;
  double objective = std::numeric_limits<double>::quiet_NaN();
};

struct QpSettings {
  double tol = 1e-8;
  int max_iter = 100;
  /// Added to the Newton matrix for factorization only.
  double regularization = 1e-9;
  int refinement_steps = 2;
  /// Re-solve the equality KKT system on the active set found by the
  /// interior point iterations and keep it when it satisfies the tolerance.
  /// After reaching `tol` the iterations continue for up to
  /// `polish_extra_iter` steps while the active set is still ambiguous.
  bool polish = true;
  int polish_rounds = 4;
  int polish_extra_iter = 15;
};

/**
 * Primal-dual interior point solver. Holds factorization workspaces, so
 * use one instance per thread.
 *
 * Variables with no Hessian coupling that appear in at most one
 * multi-variable constraint row (slack-type variables) are eliminated
 * through a diagonal Schur complement; the remaining core block is
 * factored densely.
 */
class QpSolver {
 public:
  explicit QpSolver(QpSettings settings = {}) : settings_(settings) {}

  const QpSettings& settings() const { return settings_; }

  QpSolution solve(const QpProblem& problem,
                   const std::optional<Eigen::VectorXd>& warm_start = std::nullopt) {
    problem.validate();
    if (warm_start && warm_start->size() != problem.n())
      throw std::invalid_argument("QpSolver: warm start has wrong size");
    setup(problem);
    return iterate(problem, warm_start);
  }

 private:
  struct RowData {
    std::vector<int> core_idx;       // sorted core indices
    std::vector<double> core_val;
    int lo = 0;                      // span of core indices
    int hi = -1;
    Eigen::VectorXd dense;           // core coefficients over [lo, hi]
    int elim = -1;                   // eliminated variable in this row, if any
    double elim_coef = 0.0;
  };

  void setup(const QpProblem& p) {
    const Eigen::Index n = p.n();
    const Eigen::Index m = p.m();
    at_ = p.ineq_matrix.transpose();
    SparseMatrix a_col = p.ineq_matrix;   // column access

    std::vector<int> row_nnz(static_cast<std::size_t>(m), 0);
    bound_col_.assign(static_cast<std::size_t>(m), -1);
    bound_coef_.assign(static_cast<std::size_t>(m), 0.0);
    for (Eigen::Index r = 0; r < m; ++r) {
      for (SparseRowMatrix::InnerIterator it(p.ineq_matrix, r); it; ++it) {
        if (it.value() == 0.0) continue;
        ++row_nnz[static_cast<std::size_t>(r)];
        bound_col_[static_cast<std::size_t>(r)] = static_cast<int>(it.col());
        bound_coef_[static_cast<std::size_t>(r)] = it.value();
      }
      if (row_nnz[static_cast<std::size_t>(r)] != 1) bound_col_[static_cast<std::size_t>(r)] = -1;
    }
    row_nnz_ = row_nnz;

    std::vector<bool> offdiag(static_cast<std::size_t>(n), false);
    hdiag_ = Eigen::VectorXd::Zero(n);
    for (int k = 0; k < p.hessian.outerSize(); ++k) {
      for (SparseMatrix::InnerIterator it(p.hessian, k); it; ++it) {
        if (it.row() == it.col()) {
          hdiag_(it.row()) += it.value();
        } else if (it.value() != 0.0) {
          offdiag[static_cast<std::size_t>(it.row())] = true;
          offdiag[static_cast<std::size_t>(it.col())] = true;
        }
      }
    }

    std::vector<bool> row_has_elim(static_cast<std::size_t>(m), false);
    elim_.clear();
    is_elim_.assign(static_cast<std::size_t>(n), false);
    for (Eigen::Index j = 0; j < n; ++j) {
      if (offdiag[static_cast<std::size_t>(j)]) continue;
      int coupled = 0;
      bool clash = false;
      for (SparseMatrix::InnerIterator it(a_col, j); it; ++it) {
        if (it.value() == 0.0) continue;
        if (row_nnz[static_cast<std::size_t>(it.row())] > 1) ++coupled;
        if (row_has_elim[static_cast<std::size_t>(it.row())]) clash = true;
      }
      if (clash || coupled > 1) continue;
      is_elim_[static_cast<std::size_t>(j)] = true;
      elim_.push_back(static_cast<int>(j));
      for (SparseMatrix::InnerIterator it(a_col, j); it; ++it)
        row_has_elim[static_cast<std::size_t>(it.row())] = true;
    }

    core_of_.assign(static_cast<std::size_t>(n), -1);
    core_.clear();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (!is_elim_[static_cast<std::size_t>(j)]) {
        core_of_[static_cast<std::size_t>(j)] = static_cast<int>(core_.size());
        core_.push_back(static_cast<int>(j));
      }
    }
    elim_pos_.assign(static_cast<std::size_t>(n), -1);
    for (std::size_t k = 0; k < elim_.size(); ++k) elim_pos_[static_cast<std::size_t>(elim_[k])] = static_cast<int>(k);
    elim_rows_.assign(elim_.size(), {});

    rows_.assign(static_cast<std::size_t>(m), RowData{});
    for (Eigen::Index r = 0; r < m; ++r) {
      RowData& rd = rows_[static_cast<std::size_t>(r)];
      for (SparseRowMatrix::InnerIterator it(p.ineq_matrix, r); it; ++it) {
        if (it.value() == 0.0) continue;
        const int j = static_cast<int>(it.col());
        if (is_elim_[static_cast<std::size_t>(j)]) {
          rd.elim = j;
          rd.elim_coef = it.value();
          elim_rows_[static_cast<std::size_t>(elim_pos_[static_cast<std::size_t>(j)])].push_back(static_cast<int>(r));
        } else {
          rd.core_idx.push_back(core_of_[static_cast<std::size_t>(j)]);
          rd.core_val.push_back(it.value());
        }
      }
      if (!rd.core_idx.empty()) {
        // core_of_ is monotone in j and rows iterate j ascending
        rd.lo = rd.core_idx.front();
        rd.hi = rd.core_idx.back();
        rd.dense = Eigen::VectorXd::Zero(rd.hi - rd.lo + 1);
        for (std::size_t t = 0; t < rd.core_idx.size(); ++t)
          rd.dense(rd.core_idx[t] - rd.lo) = rd.core_val[t];
      }
    }

    hcore_ = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(core_.size()),
                                   static_cast<Eigen::Index>(core_.size()));
    for (int k = 0; k < p.hessian.outerSize(); ++k) {
      for (SparseMatrix::InnerIterator it(p.hessian, k); it; ++it) {
        const int ci = core_of_[static_cast<std::size_t>(it.row())];
        const int cj = core_of_[static_cast<std::size_t>(it.col())];
        if (ci >= 0 && cj >= 0) hcore_(ci, cj) += it.value();
      }
    }
  }

  /// Factor K = H + A' diag(d) A + delta I over the core block.
  bool factor(const Eigen::VectorXd& d, double delta) {
    const Eigen::Index nc = static_cast<Eigen::Index>(core_.size());
    elim_diag_.resize(static_cast<Eigen::Index>(elim_.size()));
    elim_rest_.resize(static_cast<Eigen::Index>(elim_.size()));
    for (std::size_t k = 0; k < elim_.size(); ++k) {
      const int j = elim_[k];
      double rest = hdiag_(j) + delta;
      double coupled = 0.0;
      for (int r : elim_rows_[k]) {
        const RowData& rd = rows_[static_cast<std::size_t>(r)];
        const double v = d(r) * rd.elim_coef * rd.elim_coef;
        if (rd.core_idx.empty()) {
          rest += v;
        } else {
          coupled += v;
        }
      }
      elim_rest_(static_cast<Eigen::Index>(k)) = rest;
      elim_diag_(static_cast<Eigen::Index>(k)) = rest + coupled;
    }

    kcore_ = hcore_;
    kcore_.diagonal().array() += delta;
    for (std::size_t r = 0; r < rows_.size(); ++r) {
      const RowData& rd = rows_[r];
      if (rd.core_idx.empty()) continue;
      double w = d(static_cast<Eigen::Index>(r));
      if (rd.elim >= 0) {
        // d - (d a_j)^2 / D_j, written without cancellation
        const auto k = static_cast<Eigen::Index>(elim_pos_[static_cast<std::size_t>(rd.elim)]);
        w = w * elim_rest_(k) / elim_diag_(k);
      }
      if (w == 0.0) continue;
      const Eigen::Index len = rd.hi - rd.lo + 1;
      kcore_.block(rd.lo, rd.lo, len, len).selfadjointView<Eigen::Lower>().rankUpdate(rd.dense,
                                                                                     w);
    }
    if (nc == 0) return true;
    llt_.compute(kcore_.selfadjointView<Eigen::Lower>());
    return llt_.info() == Eigen::Success;
  }

  /// Solve K dx = rhs using the current factorization.
  Eigen::VectorXd apply_inverse(const Eigen::VectorXd& d, const Eigen::VectorXd& rhs) const {
    const Eigen::Index nc = static_cast<Eigen::Index>(core_.size());
    Eigen::VectorXd rc(nc);
    for (Eigen::Index c = 0; c < nc; ++c) rc(c) = rhs(core_[static_cast<std::size_t>(c)]);
    // Eliminate: rc -= B D^{-1} r_s with B column j = sum_r d_r a_rj a_r,core
    for (std::size_t k = 0; k < elim_.size(); ++k) {
      const double coef = rhs(elim_[k]) / elim_diag_(static_cast<Eigen::Index>(k));
      for (int r : elim_rows_[k]) {
        const RowData& rd = rows_[static_cast<std::size_t>(r)];
        if (rd.core_idx.empty()) continue;
        const double f = d(r) * rd.elim_coef * coef;
        for (std::size_t t = 0; t < rd.core_idx.size(); ++t) rc(rd.core_idx[t]) -= f * rd.core_val[t];
      }
    }
    Eigen::VectorXd xc = nc > 0 ? Eigen::VectorXd(llt_.solve(rc)) : rc;
    Eigen::VectorXd dx(rhs.size());
    for (Eigen::Index c = 0; c < nc; ++c) dx(core_[static_cast<std::size_t>(c)]) = xc(c);
    for (std::size_t k = 0; k < elim_.size(); ++k) {
      double v = rhs(elim_[k]);
      for (int r : elim_rows_[k]) {
        const RowData& rd = rows_[static_cast<std::size_t>(r)];
        if (rd.core_idx.empty()) continue;
        double ax = 0.0;
        for (std::size_t t = 0; t < rd.core_idx.size(); ++t) ax += rd.core_val[t] * xc(rd.core_idx[t]);
        v -= d(r) * rd.elim_coef * ax;
      }
      dx(elim_[k]) = v / elim_diag_(static_cast<Eigen::Index>(k));
    }
    return dx;
  }

  Eigen::VectorXd newton_solve(const QpProblem& p, const Eigen::VectorXd& d,
                               const Eigen::VectorXd& rhs) const {
    Eigen::VectorXd dx = apply_inverse(d, rhs);
    for (int it = 0; it < settings_.refinement_steps; ++it) {
      const Eigen::VectorXd ad = p.ineq_matrix * dx;
      const Eigen::VectorXd res =
          rhs - (p.hessian * dx + at_ * d.cwiseProduct(ad));
      dx += apply_inverse(d, res);
    }
    return dx;
  }

  /// Equality-constrained solve with the rows in `active` held as
  /// equalities. Active single-variable rows fix their variable; the
  /// remaining KKT system is solved densely. Bound multipliers come from
  /// stationarity of the fixed variables.
  bool solve_active(const QpProblem& p, const std::vector<char>& active,
                    const Eigen::VectorXd& x_start, const Eigen::VectorXd& lam_start,
                    Eigen::VectorXd& x, Eigen::VectorXd& dual) const {
    const Eigen::Index n = p.n();
    const Eigen::Index m = p.m();
    x = Eigen::VectorXd::Zero(n);
    std::vector<int> fixed_by(static_cast<std::size_t>(n), -1);
    const double b_scale = 1.0 + p.ineq_rhs.lpNorm<Eigen::Infinity>();
    for (Eigen::Index r = 0; r < m; ++r) {
      const int j = bound_col_[static_cast<std::size_t>(r)];
      if (!active[static_cast<std::size_t>(r)] || j < 0) continue;
      const double v = p.ineq_rhs(r) / bound_coef_[static_cast<std::size_t>(r)];
      if (fixed_by[static_cast<std::size_t>(j)] >= 0) {
        if (std::abs(x(j) - v) > 1e-12 * b_scale) return false;
        continue;
      }
      fixed_by[static_cast<std::size_t>(j)] = static_cast<int>(r);
      x(j) = v;
    }
    std::vector<Eigen::Index> free_vars, gen_rows;
    std::vector<Eigen::Index> free_pos(static_cast<std::size_t>(n), -1);
    for (Eigen::Index j = 0; j < n; ++j) {
      if (fixed_by[static_cast<std::size_t>(j)] < 0) {
        free_pos[static_cast<std::size_t>(j)] = static_cast<Eigen::Index>(free_vars.size());
        free_vars.push_back(j);
      }
    }
    for (Eigen::Index r = 0; r < m; ++r)
      if (active[static_cast<std::size_t>(r)] && row_nnz_[static_cast<std::size_t>(r)] > 1)
        gen_rows.push_back(r);

    const auto nf = static_cast<Eigen::Index>(free_vars.size());
    const auto ng = static_cast<Eigen::Index>(gen_rows.size());
    if (ng > nf) return false;
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(nf + ng, nf + ng);
    Eigen::VectorXd rhs(nf + ng);
    const Eigen::VectorXd hx_fixed = p.hessian * x;
    for (Eigen::Index f = 0; f < nf; ++f) rhs(f) = -p.linear_cost(free_vars[static_cast<std::size_t>(f)]) -
                                                   hx_fixed(free_vars[static_cast<std::size_t>(f)]);
    for (int k = 0; k < p.hessian.outerSize(); ++k) {
      for (SparseMatrix::InnerIterator it(p.hessian, k); it; ++it) {
        const Eigen::Index fi = free_pos[static_cast<std::size_t>(it.row())];
        const Eigen::Index fj = free_pos[static_cast<std::size_t>(it.col())];
        if (fi >= 0 && fj >= 0) K(fi, fj) += it.value();
      }
    }
    for (Eigen::Index t = 0; t < ng; ++t) {
      const Eigen::Index r = gen_rows[static_cast<std::size_t>(t)];
      double b = p.ineq_rhs(r);
      for (SparseRowMatrix::InnerIterator it(p.ineq_matrix, r); it; ++it) {
        const Eigen::Index f = free_pos[static_cast<std::size_t>(it.col())];
        if (f >= 0) {
          K(nf + t, f) = it.value();
          K(f, nf + t) = it.value();
        } else {
          b -= it.value() * x(it.col());
        }
      }
      rhs(nf + t) = b;
    }

    // Minimum-norm correction from the interior point: directions the
    // active set leaves undetermined keep their interior values.
    Eigen::VectorXd sol(nf + ng);
    for (Eigen::Index f = 0; f < nf; ++f) sol(f) = x_start(free_vars[static_cast<std::size_t>(f)]);
    for (Eigen::Index t = 0; t < ng; ++t) sol(nf + t) = lam_start(gen_rows[static_cast<std::size_t>(t)]);
    if (nf + ng > 0) {
      const double r_tol = 1e-12 * (1.0 + rhs.lpNorm<Eigen::Infinity>());
      Eigen::PartialPivLU<Eigen::MatrixXd> lu(K);
      Eigen::VectorXd trial = sol + lu.solve(rhs - K * sol);
      for (int it = 0; it < settings_.refinement_steps; ++it) trial += lu.solve(rhs - K * trial);
      if (trial.allFinite() && (K * trial - rhs).lpNorm<Eigen::Infinity>() <= r_tol &&
          (trial - sol).lpNorm<Eigen::Infinity>() <= 1e3 * (1.0 + sol.lpNorm<Eigen::Infinity>())) {
        sol = std::move(trial);
      } else {
        Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(K);
        for (int it = 0; it <= settings_.refinement_steps; ++it) sol += cod.solve(rhs - K * sol);
        if (!sol.allFinite()) return false;
      }
    }
    for (Eigen::Index f = 0; f < nf; ++f) x(free_vars[static_cast<std::size_t>(f)]) = sol(f);

    dual = Eigen::VectorXd::Zero(m);
    for (Eigen::Index t = 0; t < ng; ++t) dual(gen_rows[static_cast<std::size_t>(t)]) = sol(nf + t);
    // A variable fixed by several active bound rows takes its multiplier on
    // the first row where it comes out nonnegative.
    const Eigen::VectorXd grad = p.hessian * x + p.linear_cost + at_ * dual;
    std::vector<char> assigned(static_cast<std::size_t>(n), 0);
    for (int pass = 0; pass < 2; ++pass) {
      for (Eigen::Index r = 0; r < m; ++r) {
        const int j = bound_col_[static_cast<std::size_t>(r)];
        if (!active[static_cast<std::size_t>(r)] || j < 0 || assigned[static_cast<std::size_t>(j)]) continue;
        const double l = -grad(j) / bound_coef_[static_cast<std::size_t>(r)];
        if (pass == 1 || l >= 0.0) {
          dual(r) = l;
          assigned[static_cast<std::size_t>(j)] = 1;
        }
      }
    }
    return true;
  }

  /// Active-set refinement from the interior iterate: start from
  /// {r : lambda_r > s_r}, then drop rows with negative multipliers and add
  /// violated rows until the equality solve is an exact KKT point.
  bool polish(const QpProblem& p, const Eigen::VectorXd& x_ipm, const Eigen::VectorXd& s,
              const Eigen::VectorXd& lam, QpSolution& out) const {
    const Eigen::Index m = p.m();
    std::vector<char> active(static_cast<std::size_t>(m), 0);
    for (Eigen::Index r = 0; r < m; ++r) active[static_cast<std::size_t>(r)] = lam(r) > s(r);
    const double b_scale = 1.0 + p.ineq_rhs.lpNorm<Eigen::Infinity>();
    const double g_scale = 1.0 + p.linear_cost.lpNorm<Eigen::Infinity>();
    const double eps_p = 1e-12 * b_scale;
    const double eps_d = 1e-13 * g_scale;

    bool found = false;
    double last = std::numeric_limits<double>::infinity();
    Eigen::VectorXd x, dual;
    for (int round = 0; round < settings_.polish_rounds; ++round) {
      if (!solve_active(p, active, x_ipm, lam, x, dual)) break;
      const Eigen::VectorXd viol = p.ineq_matrix * x - p.ineq_rhs;
      bool changed = false;
      for (Eigen::Index r = 0; r < m; ++r) {
        auto& a = active[static_cast<std::size_t>(r)];
        if (a && dual(r) < -eps_d) {
          a = 0;
          changed = true;
        } else if (!a && viol(r) > eps_p) {
          a = 1;
          changed = true;
        }
      }
      const Eigen::VectorXd d = dual.cwiseMax(0.0);
      const KktResiduals kkt = kkt_residuals(p, x, d);
      if (kkt.max() > last) break;
      last = kkt.max();
      if (kkt.max() <= settings_.tol && (!found || !changed)) {
        out.primal = x;
        out.dual = d;
        out.kkt_residuals = kkt;
        out.status = QpStatus::Optimal;
        found = true;
      }
      if (!changed) break;
    }
    return found;
  }

  static double max_step(const Eigen::VectorXd& v, const Eigen::VectorXd& dv) {
    double alpha = 1.0;
    for (Eigen::Index i = 0; i < v.size(); ++i)
      if (dv(i) < 0.0) alpha = std::min(alpha, -v(i) / dv(i));
    return alpha;
  }

  QpSolution iterate(const QpProblem& p, const std::optional<Eigen::VectorXd>& warm) {
    const Eigen::Index n = p.n();
    const Eigen::Index m = p.m();
    const Eigen::VectorXd& g = p.linear_cost;
    const Eigen::VectorXd& b = p.ineq_rhs;

    QpSolution best;
    best.status = QpStatus::MaxIterations;
    best_s_.resize(0);
    double best_merit = std::numeric_limits<double>::infinity();

    Eigen::VectorXd x = warm ? *warm : Eigen::VectorXd::Zero(n);
    if (m == 0) {
      // Unconstrained: one Newton step on the (regularized) Hessian.
      Eigen::VectorXd d = Eigen::VectorXd::Zero(0);
      factor(d, settings_.regularization);
      x = newton_solve(p, d, -(p.hessian * x + g) + p.hessian * x);
      best.primal = x;
      best.dual = Eigen::VectorXd::Zero(0);
      best.kkt_residuals = kkt_residuals(p, x, best.dual);
      best.status = best.kkt_residuals.max() <= settings_.tol ? QpStatus::Optimal
                                                              : QpStatus::MaxIterations;
      best.objective = p.objective(x);
      best.iterations = 1;
      return best;
    }

    Eigen::VectorXd s = (b - p.ineq_matrix * x).cwiseMax(1.0);
    Eigen::VectorXd lam = Eigen::VectorXd::Ones(m);
    const double scale_b = 1.0 + b.lpNorm<Eigen::Infinity>();
    QpSolution polished;
    std::vector<char> prev_guess, tried_guess;
    int converged_at = 0;

    for (int iter = 0; iter <= settings_.max_iter; ++iter) {
      const Eigen::VectorXd ax = p.ineq_matrix * x;
      const Eigen::VectorXd rd = p.hessian * x + g + at_ * lam;
      const Eigen::VectorXd rp = ax + s - b;
      const double mu = s.dot(lam) / static_cast<double>(m);

      KktResiduals kkt;
      kkt.stationarity = rd.lpNorm<Eigen::Infinity>();
      kkt.primal = (ax - b).cwiseMax(0.0).maxCoeff();
      kkt.complementarity = std::abs(lam.dot(ax - b));
      const double merit = kkt.max();
      if (merit < best_merit) {
        best_merit = merit;
        best.primal = x;
        best.dual = lam;
        best.kkt_residuals = kkt;
        best.iterations = iter;
        best_s_ = s;
      }
      if (merit <= settings_.tol) {
        if (best.status != QpStatus::Optimal) converged_at = iter;
        best.status = QpStatus::Optimal;
        if (!settings_.polish) break;
        // Polish once the active guess has settled and differs from the
        // last failed attempt.
        std::vector<char> guess(static_cast<std::size_t>(m));
        for (Eigen::Index r = 0; r < m; ++r) guess[static_cast<std::size_t>(r)] = lam(r) > s(r);
        if (guess == prev_guess && guess != tried_guess) {
          if (polish(p, x, s, lam, polished)) {
            polished.iterations = iter;
            best = std::move(polished);
            return finish(p, best);
          }
          tried_guess = guess;
        }
        prev_guess = std::move(guess);
      }
      if (best.status == QpStatus::Optimal &&
          (iter - converged_at >= settings_.polish_extra_iter || merit > 1e3 * best_merit))
        break;
      if (iter == settings_.max_iter) break;

      // Farkas-type certificate: A'y ~ 0, y >= 0, b'y < 0.
      const double lam_norm = lam.lpNorm<Eigen::Infinity>();
      if (lam_norm > 1e8) {
        const double aty = (at_ * lam).lpNorm<Eigen::Infinity>() / lam_norm;
        const double bty = b.dot(lam) / lam_norm;
        if (aty < 1e-6 && bty < -1e-6 * scale_b) {
          best.status = QpStatus::Infeasible;
          best.iterations = iter;
          break;
        }
      }

      const Eigen::VectorXd d = lam.cwiseQuotient(s);
      double delta = settings_.regularization;
      while (!factor(d, delta)) {
        delta *= 100.0;
        if (delta > 1e2) {
          best.iterations = iter;
          goto done;
        }
      }

      {
        // Predictor
        Eigen::VectorXd rc = s.cwiseProduct(lam);
        auto direction = [&](const Eigen::VectorXd& rcv, Eigen::VectorXd& dx, Eigen::VectorXd& ds,
                             Eigen::VectorXd& dl) {
          const Eigen::VectorXd t = (rcv - lam.cwiseProduct(rp)).cwiseQuotient(s);
          dx = newton_solve(p, d, -rd + at_ * t);
          ds = -rp - p.ineq_matrix * dx;
          dl = -(rcv + lam.cwiseProduct(ds)).cwiseQuotient(s);
        };
        Eigen::VectorXd dx, ds, dl;
        direction(rc, dx, ds, dl);
        const double a_aff = std::min(max_step(s, ds), max_step(lam, dl));
        const double mu_aff =
            (s + a_aff * ds).dot(lam + a_aff * dl) / static_cast<double>(m);
        const double sigma = std::pow(std::max(mu_aff, 0.0) / mu, 3.0);

        // Corrector
        rc = s.cwiseProduct(lam) + ds.cwiseProduct(dl);
        rc.array() -= sigma * mu;
        direction(rc, dx, ds, dl);
        const double a_max = std::min(max_step(s, ds), max_step(lam, dl));
        const double alpha = std::min(1.0, 0.995 * a_max);
        x += alpha * dx;
        s += alpha * ds;
        lam += alpha * dl;
        s = s.cwiseMax(1e-300);
        lam = lam.cwiseMax(1e-300);
      }
    }
  done:
    if (settings_.polish && best.status != QpStatus::Infeasible && best_s_.size() == m &&
        polish(p, best.primal, best_s_, best.dual, polished)) {
      polished.iterations = best.iterations;
      best = std::move(polished);
    }
    if (best.primal.size() != n) {
      best.primal = x;
      best.dual = lam;
    }
    return finish(p, best);
  }

  static QpSolution& finish(const QpProblem& p, QpSolution& sol) {
    if (sol.status != QpStatus::Infeasible) sol.objective = p.objective(sol.primal);
    return sol;
  }

  QpSettings settings_;
  SparseMatrix at_;
  Eigen::VectorXd hdiag_;
  std::vector<int> elim_;
  std::vector<bool> is_elim_;
  std::vector<int> elim_pos_;
  std::vector<std::vector<int>> elim_rows_;
  std::vector<int> core_;
  std::vector<int> core_of_;
  std::vector<RowData> rows_;
  std::vector<int> row_nnz_;
  std::vector<int> bound_col_;
  std::vector<double> bound_coef_;
  Eigen::VectorXd best_s_;
  Eigen::MatrixXd hcore_;
  Eigen::MatrixXd kcore_;
  Eigen::VectorXd elim_diag_;
  Eigen::VectorXd elim_rest_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
};

inline QpSolution solve(const QpProblem& problem, double tol = 1e-8, int max_iter = 100) {
  QpSettings s;
  s.tol = tol;
  s.max_iter = max_iter;
  return QpSolver(s).solve(problem);
}

/// Scaling applied by equilibrate(): rows of A and b multiplied by
/// row_scale, H and g multiplied by cost_scale.
struct Equilibration {
  Eigen::VectorXd row_scale;
  double cost_scale = 1.0;

  /// Multipliers of the original problem from those of the scaled one.
  Eigen::VectorXd unscale_dual(const Eigen::VectorXd& scaled) const {
    return scaled.cwiseProduct(row_scale) / cost_scale;
  }
};

/// Scale every constraint row to unit infinity norm and the cost so that
/// its largest coefficient is at most one. The minimizer is unchanged.
inline Equilibration equilibrate(QpProblem& p) {
  Equilibration eq;
  eq.row_scale = Eigen::VectorXd::Ones(p.m());
  for (Eigen::Index r = 0; r < p.m(); ++r) {
    double mx = 0.0;
    for (SparseRowMatrix::InnerIterator it(p.ineq_matrix, r); it; ++it)
      mx = std::max(mx, std::abs(it.value()));
    if (mx > 0.0) eq.row_scale(r) = 1.0 / mx;
  }
  p.ineq_matrix = eq.row_scale.asDiagonal() * p.ineq_matrix;
  p.ineq_rhs = p.ineq_rhs.cwiseProduct(eq.row_scale);
  double hmax = 0.0;
  for (int k = 0; k < p.hessian.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(p.hessian, k); it; ++it)
      hmax = std::max(hmax, std::abs(it.value()));
  const double gmax = p.n() > 0 ? p.linear_cost.lpNorm<Eigen::Infinity>() : 0.0;
  eq.cost_scale = 1.0 / std::max({gmax, hmax, 1.0});
  p.hessian *= eq.cost_scale;
  p.linear_cost *= eq.cost_scale;
  p.constant *= eq.cost_scale;
  return eq;
}

/**
 * Exact optimum of a small QP by enumerating every active set, solving its
 * equality-constrained KKT system and keeping the best feasible candidate
 * with nonnegative multipliers. Limited to 12 rows and 8 variables.
 */
inline QpSolution enumerate_small(const QpProblem& problem) {
  const Eigen::Index n = problem.n();
  const Eigen::Index m = problem.m();
  if (m > 12 || n > 8) throw std::length_error("enumerate_small: problem too large");
  const Eigen::MatrixXd H = Eigen::MatrixXd(problem.hessian);
  const Eigen::MatrixXd A = Eigen::MatrixXd(problem.ineq_matrix);
  const Eigen::VectorXd& g = problem.linear_cost;
  const Eigen::VectorXd& b = problem.ineq_rhs;
  constexpr double feas_tol = 1e-9;

  QpSolution best;
  best.status = QpStatus::Infeasible;
  double best_obj = std::numeric_limits<double>::infinity();

  for (std::uint32_t mask = 0; mask < (1u << m); ++mask) {
    std::vector<Eigen::Index> act;
    for (Eigen::Index r = 0; r < m; ++r)
      if (mask & (1u << r)) act.push_back(r);
    const auto na = static_cast<Eigen::Index>(act.size());
    if (na > n) continue;
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n + na, n + na);
    Eigen::VectorXd rhs(n + na);
    K.topLeftCorner(n, n) = H;
    rhs.head(n) = -g;
    for (Eigen::Index t = 0; t < na; ++t) {
      K.block(0, n + t, n, 1) = A.row(act[static_cast<std::size_t>(t)]).transpose();
      K.block(n + t, 0, 1, n) = A.row(act[static_cast<std::size_t>(t)]);
      rhs(n + t) = b(act[static_cast<std::size_t>(t)]);
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
    if (!lu.isInvertible()) continue;
    const Eigen::VectorXd sol = lu.solve(rhs);
    const Eigen::VectorXd x = sol.head(n);
    Eigen::VectorXd lam = Eigen::VectorXd::Zero(m);
    bool ok = true;
    for (Eigen::Index t = 0; t < na; ++t) {
      const double l = sol(n + t);
      if (l < -feas_tol) ok = false;
      lam(act[static_cast<std::size_t>(t)]) = std::max(l, 0.0);
    }
    if (!ok) continue;
    const Eigen::VectorXd viol = A * x - b;
    if (m > 0 && viol.maxCoeff() > feas_tol * (1.0 + b.lpNorm<Eigen::Infinity>())) continue;
    const double obj = problem.objective(x);
    if (obj < best_obj) {
      best_obj = obj;
      best.primal = x;
      best.dual = lam;
      best.objective = obj;
      best.status = QpStatus::Optimal;
    }
  }
  if (best.status == QpStatus::Optimal) {
    best.kkt_residuals = kkt_residuals(problem, best.primal, best.dual);
  } else {
    best.primal = Eigen::VectorXd::Zero(n);
    best.dual = Eigen::VectorXd::Zero(m);
  }
  return best;
}

}  // namespace ccmpc
