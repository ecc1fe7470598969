#pragma once

/**
 * @file
 * Receding-horizon controller. Each step assembles
 *
 *     min  sum_k |dq^u_k|^2_R + Q'z_k + W'V^w_k  (+ W_s's + W_c'c)
 *
 * over the condensed prediction, solves the QP and applies the first move.
 */

#include <algorithm>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <json.hpp>

#include "condense.hpp"
#include "constraints.hpp"
#include "moments.hpp"
#include "network.hpp"
#include "qp.hpp"
#include "uncertainty.hpp"

namespace ccmpc {

enum class ControlMode { Deterministic, ChanceConstrained };

inline const char* to_string(ControlMode m) {
  return m == ControlMode::Deterministic ? "det" : "cc";
}

struct MpcConfig {
  int horizon = 24;
  double gamma = 0.9;
  ControlMode mode = ControlMode::Deterministic;
  QpSettings solver;

  void validate() const {
    if (horizon < 1) throw std::invalid_argument("horizon must be >= 1");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("gamma must lie in (0, 1]");
  }
};

struct CostWeights {
  Eigen::VectorXd r_diag;       // per control slot
  double q_river = 2.0;         // per m3/s of total tank overflow
  double q_wwtp = -1.0;         // per m3/s of WWTP inflow
  Eigen::VectorXd w_overflow;   // per tank, on accumulated overflow volume
  double w_slack_s = 10.0;
  double w_slack_c = 10.0;

  static CostWeights defaults(const NetworkSpec& spec, const NetworkTopology& topo) {
    CostWeights w;
    w.r_diag = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(topo.n_controlled), 0.01);
    w.w_overflow.resize(static_cast<Eigen::Index>(spec.tanks.size()));
    for (std::size_t i = 0; i < spec.tanks.size(); ++i)
      w.w_overflow(static_cast<Eigen::Index>(i)) = spec.tanks[i].overflow_weight;
    return w;
  }

  void validate(const NetworkTopology& topo) const {
    if (r_diag.size() != static_cast<Eigen::Index>(topo.n_controlled) ||
        w_overflow.size() != static_cast<Eigen::Index>(topo.n_tanks))
      throw std::invalid_argument("cost weights do not match the network");
    if ((r_diag.array() <= 0.0).any()) throw std::invalid_argument("roughness weights must be > 0");
    if ((w_overflow.array() <= 0.0).any())
      throw std::invalid_argument("overflow weights must be > 0");
    if (w_slack_s < 0.0 || w_slack_c < 0.0)
      throw std::invalid_argument("slack weights must be >= 0");
  }
};

/// Quadratic and linear cost over [q^u | q^w (| s | c)].
struct CostTerms {
  SparseMatrix hessian;
  Eigen::VectorXd linear;
  double constant = 0.0;   // roughness term of the previous control
};

/**
 * Cost of one horizon. The roughness term penalizes q^u_k - q^u_{k-1} with
 * q^u_{-1} = previous_q_u. Accumulated overflow V^w_k = sum_{i<=k} dt q^w_i
 * summed over the horizon gives q^w at step j the weight W dt (N - j).
 */
inline CostTerms build_cost(const CondensedPrediction& p, const CostWeights& w,
                            const Eigen::VectorXd& previous_q_u, double dt, bool with_slacks) {
  const int N = p.horizon;
  const auto nc = static_cast<Eigen::Index>(p.n_controlled);
  const auto nt = static_cast<Eigen::Index>(p.n_tanks);
  if (previous_q_u.size() != nc) throw std::invalid_argument("previous control has wrong size");
  const Eigen::Index nu = p.u_size(), nq = p.qw_size();
  const Eigen::Index n = nu + nq + (with_slacks ? 2 * nq : 0);

  CostTerms c;
  std::vector<Eigen::Triplet<double>> trip;
  for (Eigen::Index j = 0; j < nc; ++j) {
    const double r = w.r_diag(j);
    for (int k = 0; k < N; ++k) {
      const Eigen::Index a = k * nc + j;
      trip.emplace_back(a, a, k + 1 < N ? 4.0 * r : 2.0 * r);
      if (k + 1 < N) {
        trip.emplace_back(a, a + nc, -2.0 * r);
        trip.emplace_back(a + nc, a, -2.0 * r);
      }
    }
  }
  c.hessian.resize(n, n);
  c.hessian.setFromTriplets(trip.begin(), trip.end());
  c.hessian.prune(0.0);

  c.linear = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd qz(2 * N);
  for (int k = 0; k < N; ++k) {
    qz(2 * k) = w.q_wwtp;
    qz(2 * k + 1) = w.q_river;
  }
  c.linear.head(nu) = p.phi_con.transpose() * qz;
  c.linear.segment(nu, nq) = p.gamma.transpose() * qz;
  for (int k = 0; k < N; ++k)
    for (Eigen::Index i = 0; i < nt; ++i)
      c.linear(nu + k * nt + i) += w.w_overflow(i) * dt * (N - k);
  for (Eigen::Index j = 0; j < nc; ++j) {
    c.linear(j) -= 2.0 * w.r_diag(j) * previous_q_u(j);
    c.constant += w.r_diag(j) * previous_q_u(j) * previous_q_u(j);
  }
  if (with_slacks) {
    c.linear.segment(nu + nq, nq).setConstant(w.w_slack_s);
    c.linear.segment(nu + 2 * nq, nq).setConstant(w.w_slack_c);
  }
  return c;
}

struct ControlDecision {
  Eigen::VectorXd q_u_first;
  Eigen::MatrixXd planned_controls;     // n_controlled x N
  Eigen::MatrixXd predicted_volumes;    // n_tanks x N, expected V_{k+1}
  Eigen::MatrixXd predicted_overflows;  // n_tanks x N, q^w_k
  QpSolution solver;                    // primal unscaled, duals of the original rows
  double objective_value = 0.0;
  bool warning = false;                 // iteration limit reached, best iterate used
  bool warm_started = false;
};

class SolverFailure : public std::runtime_error {
 public:
  SolverFailure(const std::string& what, long step) : std::runtime_error(what), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

/// Network data shared by every controller step (immutable).
struct ControllerModel {
  NetworkSpec spec;
  NetworkTopology topo;
  CondensedPrediction prediction;

  ControllerModel(NetworkSpec s, int horizon, std::size_t limit = kDefaultPredictionLimit)
      : spec(std::move(s)), topo(analyze(spec)), prediction(condense(spec, topo, horizon, limit)) {}
};

/// Shift a primal solution one step forward in every time-major block.
inline Eigen::VectorXd shift_primal(const Eigen::VectorXd& x, const VariableLayout& layout,
                                    int horizon) {
  Eigen::VectorXd out = x;
  for (const auto& b : layout.blocks) {
    if (b.size == 0) continue;
    const Eigen::Index w = b.size / horizon;
    for (int k = 0; k + 1 < horizon; ++k)
      out.segment(b.offset + k * w, w) = x.segment(b.offset + (k + 1) * w, w);
  }
  return out;
}

/**
 * One controller evaluation. `state` holds the current moments and
 * `forecast` the runoff moments (extended by holding its last column when
 * shorter than the horizon). The problem is equilibrated before solving;
 * reported KKT residuals refer to the equilibrated problem.
 */
inline ControlDecision mpc_step(const ControllerModel& model, const MpcConfig& config,
                                const StateMoments& state, const DisturbanceForecast& forecast,
                                const CostWeights& weights, const Eigen::VectorXd& previous_q_u,
                                QpSolver& solver,
                                const std::optional<Eigen::VectorXd>& warm_start = std::nullopt,
                                long step_index = 0) {
  config.validate();
  const CondensedPrediction& p = model.prediction;
  if (p.horizon != config.horizon)
    throw std::invalid_argument("controller model was condensed for a different horizon");
  if (forecast.mean.rows() != static_cast<Eigen::Index>(model.topo.n_runoff))
    throw std::invalid_argument("forecast does not match the runoff inputs");
  const int N = config.horizon;
  const auto nc = static_cast<Eigen::Index>(p.n_controlled);
  const auto nt = static_cast<Eigen::Index>(p.n_tanks);
  const bool cc = config.mode == ControlMode::ChanceConstrained;

  const Eigen::VectorXd x0 = state.mean_state();
  const Eigen::VectorXd w_mean = forecast.stacked_mean(N);
  const InequalitySystem sys =
      cc ? assemble_chance(p, model.spec, model.topo, x0, state.var_state(), w_mean,
                           forecast.stacked_var(N), config.gamma)
         : assemble_deterministic(p, x0, w_mean);
  const CostTerms cost = build_cost(p, weights, previous_q_u, model.spec.delta_t, cc);

  QpProblem qp;
  qp.hessian = cost.hessian;
  qp.linear_cost = cost.linear;
  qp.ineq_matrix = sys.matrix;
  qp.ineq_rhs = sys.rhs;
  qp.variable_layout = sys.layout;
  const Equilibration eq = equilibrate(qp);

  ControlDecision d;
  QpSolution sol;
  if (warm_start && warm_start->size() == qp.n()) {
    sol = solver.solve(qp, warm_start);
    d.warm_started = true;
  }
  if (!d.warm_started || sol.status != QpStatus::Optimal) {
    QpSolution cold = solver.solve(qp);
    if (!d.warm_started || cold.status == QpStatus::Optimal ||
        cold.kkt_residuals.max() < sol.kkt_residuals.max())
      sol = std::move(cold);
  }
  if (sol.status == QpStatus::Infeasible)
    throw SolverFailure("QP infeasible at step " + std::to_string(step_index), step_index);
  d.warning = sol.status != QpStatus::Optimal;
  sol.dual = eq.unscale_dual(sol.dual);

  const Eigen::VectorXd& x = sol.primal;
  const Eigen::VectorXd u = x.head(p.u_size());
  const Eigen::VectorXd qw = x.segment(p.u_size(), p.qw_size());
  d.planned_controls = Eigen::Map<const Eigen::MatrixXd>(u.data(), nc, N);
  d.predicted_overflows = Eigen::Map<const Eigen::MatrixXd>(qw.data(), nt, N);
  d.q_u_first = u.head(nc);
  for (Eigen::Index j = 0; j < nc; ++j) {
    const TankSpec& tank =
        model.spec.tanks[static_cast<std::size_t>(model.topo.controlled_tanks[static_cast<std::size_t>(j)])];
    d.q_u_first(j) = std::clamp(d.q_u_first(j), 0.0, *tank.q_u_max);
  }
  const Eigen::VectorXd pre = p.pre_volume.evaluate(u, qw, x0, w_mean);
  d.predicted_volumes.resize(nt, N);
  for (Eigen::Index i = 0; i < nt; ++i)
    for (int k = 0; k < N; ++k)
      d.predicted_volumes(i, k) = pre(i * N + k) - model.spec.delta_t * qw(k * nt + i);

  Eigen::VectorXd qz(2 * N);
  for (int k = 0; k < N; ++k) {
    qz(2 * k) = weights.q_wwtp;
    qz(2 * k + 1) = weights.q_river;
  }
  const double z_const = qz.dot(p.psi * x0 + p.theta * w_mean);
  d.objective_value =
      0.5 * x.dot(cost.hessian * x) + cost.linear.dot(x) + cost.constant + z_const;
  d.solver = std::move(sol);
  return d;
}

/// Resumable controller state.
struct ControllerCheckpoint {
  long step = 0;
  Eigen::VectorXd previous_q_u;
  StateMoments moments;
  Eigen::VectorXd warm_start;   // empty when absent
};

namespace detail {
inline nlohmann::json vec_json(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}
inline Eigen::VectorXd json_vec(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}
}  // namespace detail

inline nlohmann::json checkpoint_to_json(const ControllerCheckpoint& c) {
  return {{"step", c.step},
          {"previous_q_u", detail::vec_json(c.previous_q_u)},
          {"mean_volumes", detail::vec_json(c.moments.mean_volumes)},
          {"var_volumes", detail::vec_json(c.moments.var_volumes)},
          {"mean_delays", detail::vec_json(c.moments.mean_delays)},
          {"var_delays", detail::vec_json(c.moments.var_delays)},
          {"warm_start", detail::vec_json(c.warm_start)}};
}

inline ControllerCheckpoint checkpoint_from_json(const nlohmann::json& j) {
  ControllerCheckpoint c;
  c.step = j.at("step").get<long>();
  c.previous_q_u = detail::json_vec(j.at("previous_q_u"));
  c.moments.mean_volumes = detail::json_vec(j.at("mean_volumes"));
  c.moments.var_volumes = detail::json_vec(j.at("var_volumes"));
  c.moments.mean_delays = detail::json_vec(j.at("mean_delays"));
  c.moments.var_delays = detail::json_vec(j.at("var_delays"));
  c.warm_start = detail::json_vec(j.at("warm_start"));
  return c;
}

/// Stateful wrapper: keeps the previous control and the shifted previous
/// solution for warm starting.
class Controller {
 public:
  Controller(std::shared_ptr<const ControllerModel> model, MpcConfig config, CostWeights weights,
             Eigen::VectorXd initial_q_u)
      : model_(std::move(model)),
        config_(config),
        weights_(std::move(weights)),
        solver_(config.solver),
        previous_q_u_(std::move(initial_q_u)) {
    config_.validate();
    weights_.validate(model_->topo);
    if (previous_q_u_.size() != static_cast<Eigen::Index>(model_->topo.n_controlled))
      throw std::invalid_argument("initial control has wrong size");
  }

  ControlDecision step(const StateMoments& state, const DisturbanceForecast& forecast) {
    std::optional<Eigen::VectorXd> warm;
    if (warm_.size() > 0) warm = warm_;
    ControlDecision d = mpc_step(*model_, config_, state, forecast, weights_, previous_q_u_,
                                 solver_, warm, step_);
    warm_ = shift_primal(d.solver.primal, layout_for(d.solver.primal.size()), config_.horizon);
    previous_q_u_ = d.q_u_first;
    ++step_;
    return d;
  }

  ControllerCheckpoint checkpoint(const StateMoments& moments) const {
    return {step_, previous_q_u_, moments, warm_};
  }
  void restore(const ControllerCheckpoint& c) {
    step_ = c.step;
    previous_q_u_ = c.previous_q_u;
    warm_ = c.warm_start;
  }

  const MpcConfig& config() const { return config_; }
  const ControllerModel& model() const { return *model_; }
  long step_index() const { return step_; }
  const Eigen::VectorXd& previous_q_u() const { return previous_q_u_; }

 private:
  VariableLayout layout_for(Eigen::Index n) const {
    const CondensedPrediction& p = model_->prediction;
    VariableLayout l;
    l.append("q_u", p.u_size());
    l.append("q_w", p.qw_size());
    if (n > l.size()) {
      l.append("s", p.qw_size());
      l.append("c", p.qw_size());
    }
    return l;
  }

  std::shared_ptr<const ControllerModel> model_;
  MpcConfig config_;
  CostWeights weights_;
  QpSolver solver_;
  Eigen::VectorXd previous_q_u_;
  Eigen::VectorXd warm_;
  long step_ = 0;
};

}  // namespace ccmpc
