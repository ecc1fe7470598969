#pragma once

// Shared fixtures and oracles for the unit tests.

#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ccmpc/network.hpp"

namespace testing_support {

inline std::string read_text(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string data_path(const std::string& file) { return std::string(CCMPC_DATA_DIR) + "/" + file; }

inline ccmpc::NetworkSpec astlingen() { return ccmpc::parse_network(read_text(data_path("astlingen.json"))); }

/// One tank fed by runoff input "w", draining to the WWTP.
inline ccmpc::NetworkSpec single_tank(ccmpc::TankKind kind, double v_max, double beta,
                                      double q_u_max = 0.0, double weight = 1000.0) {
  ccmpc::NetworkSpec s;
  s.name = "single";
  s.delta_t = 300.0;
  ccmpc::TankSpec t;
  t.id = "T";
  t.kind = kind;
  t.v_max = v_max;
  t.beta = beta;
  if (kind == ccmpc::TankKind::Controlled) t.q_u_max = q_u_max;
  t.overflow_weight = weight;
  s.tanks.push_back(t);
  s.inflows["T"] = {"w"};
  s.runoff_inputs = {"w"};
  s.wwtp_sink = "T";
  return s;
}

/**
 * Random in-tree network: every element except the last drains into a
 * later element, the last one is the sink. Tanks are passive or
 * controlled, delays hold 1 to 3 cells, every runoff input feeds a random
 * element.
 */
inline ccmpc::NetworkSpec random_network(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> n_elem_d(1, 7), n_in_d(1, 4), steps_d(1, 3);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  ccmpc::NetworkSpec s;
  s.name = "random";
  s.delta_t = 300.0;
  const int n = n_elem_d(rng);
  std::vector<std::string> ids(static_cast<std::size_t>(n));
  std::vector<bool> is_tank(static_cast<std::size_t>(n));
  for (int e = 0; e < n; ++e) {
    is_tank[static_cast<std::size_t>(e)] = e == n - 1 || u01(rng) < 0.6;
    ids[static_cast<std::size_t>(e)] = (is_tank[static_cast<std::size_t>(e)] ? "T" : "D") + std::to_string(e);
  }
  for (int e = 0; e < n; ++e) {
    const auto& id = ids[static_cast<std::size_t>(e)];
    if (is_tank[static_cast<std::size_t>(e)]) {
      ccmpc::TankSpec t;
      t.id = id;
      t.kind = u01(rng) < 0.5 ? ccmpc::TankKind::Controlled : ccmpc::TankKind::Passive;
      t.v_max = 500.0 + 3000.0 * u01(rng);
      t.beta = (0.05 + 0.9 * u01(rng)) / s.delta_t;
      if (t.kind == ccmpc::TankKind::Controlled) t.q_u_max = 0.1 + u01(rng);
      t.overflow_weight = 1000.0;
      s.tanks.push_back(t);
    } else {
      s.delays.push_back({id, steps_d(rng)});
    }
    s.inflows[id];
  }
  for (int e = 0; e + 1 < n; ++e) {
    const int target = std::uniform_int_distribution<int>(e + 1, n - 1)(rng);
    s.inflows[ids[static_cast<std::size_t>(target)]].push_back(ids[static_cast<std::size_t>(e)]);
  }
  const int n_in = n_in_d(rng);
  for (int r = 0; r < n_in; ++r) {
    const std::string w = "w" + std::to_string(r);
    s.runoff_inputs.push_back(w);
    s.inflows[ids[std::uniform_int_distribution<int>(0, n - 1)(rng)]].push_back(w);
  }
  for (auto it = s.inflows.begin(); it != s.inflows.end();)
    it = it->second.empty() ? s.inflows.erase(it) : std::next(it);
  s.wwtp_sink = ids.back();
  return s;
}

/// Per-step values produced by the recursion oracle.
struct RecursionResult {
  std::vector<std::map<std::string, double>> volume;       // V_k per tank id
  std::vector<std::map<std::string, double>> pre_volume;   // before weir overflow
  std::vector<double> sink_outflow;
  std::vector<double> total_overflow;
  std::map<std::string, double> final_volume;
  std::map<std::string, std::vector<double>> final_cells;
};

/**
 * Linear model stepped sample by sample, keyed by element id. Every
 * outflow depends on the current state only, so all outflows of a step
 * are computed before any inflow and no ordering is needed.
 * Stacked vectors are time-major as in the condensed form; x0 lists tank
 * volumes then delay cells in declaration order.
 */
inline RecursionResult simulate_linear(const ccmpc::NetworkSpec& spec, int horizon,
                                       const Eigen::VectorXd& q_u, const Eigen::VectorXd& q_w,
                                       const Eigen::VectorXd& x0, const Eigen::VectorXd& w) {
  const double dt = spec.delta_t;
  const std::size_t nt = spec.tanks.size(), nw = spec.runoff_inputs.size();
  std::size_t nc = 0;
  for (const auto& t : spec.tanks) nc += t.kind == ccmpc::TankKind::Controlled ? 1 : 0;

  std::map<std::string, double> vol;
  std::map<std::string, std::vector<double>> cells;
  Eigen::Index pos = 0;
  for (const auto& t : spec.tanks) vol[t.id] = x0(pos++);
  for (const auto& d : spec.delays) {
    auto& c = cells[d.id];
    for (int i = 0; i < d.steps; ++i) c.push_back(x0(pos++));
  }
  std::map<std::string, int> runoff;
  for (std::size_t r = 0; r < nw; ++r) runoff[spec.runoff_inputs[r]] = static_cast<int>(r);

  RecursionResult res;
  for (int k = 0; k < horizon; ++k) {
    std::map<std::string, double> out;
    std::size_t j = 0;
    for (const auto& t : spec.tanks) {
      if (t.kind == ccmpc::TankKind::Controlled)
        out[t.id] = q_u(static_cast<Eigen::Index>(k * nc + j++));
      else
        out[t.id] = t.beta * vol[t.id];
    }
    for (const auto& d : spec.delays) out[d.id] = cells[d.id].back();

    auto inflow = [&](const std::string& id) {
      double s = 0.0;
      auto it = spec.inflows.find(id);
      if (it == spec.inflows.end()) return s;
      for (const auto& src : it->second)
        s += runoff.count(src) ? w(static_cast<Eigen::Index>(k * nw) + runoff[src]) : out[src];
      return s;
    };

    std::map<std::string, double> next_vol, pre;
    double overflow = 0.0;
    for (std::size_t i = 0; i < nt; ++i) {
      const auto& t = spec.tanks[i];
      const double p = vol[t.id] + dt * (inflow(t.id) - out[t.id]);
      const double qw = q_w(static_cast<Eigen::Index>(k * nt + i));
      pre[t.id] = p;
      next_vol[t.id] = p - dt * qw;
      overflow += qw;
    }
    for (const auto& d : spec.delays) {
      auto& c = cells[d.id];
      const double in = inflow(d.id);
      for (std::size_t i = c.size() - 1; i > 0; --i) c[i] = c[i - 1];
      c[0] = in;
    }
    res.volume.push_back(vol);
    res.pre_volume.push_back(pre);
    res.sink_outflow.push_back(out[spec.wwtp_sink]);
    res.total_overflow.push_back(overflow);
    vol = next_vol;
  }
  res.final_volume = vol;
  res.final_cells = cells;
  return res;
}

inline Eigen::VectorXd random_vector(std::mt19937_64& rng, Eigen::Index n, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = d(rng);
  return v;
}

/// |a - b| <= tol * max(1, |b|)
inline bool close_rel(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max(1.0, std::abs(b));
}

}  // namespace testing_support
