#pragma once

/**
 * @file
 * Drainage network description: tanks, delay pipes, interconnections and
 * runoff inputs, plus the strict JSON reader/writer and the derived
 * topology used by the prediction, control and simulation layers.
 */

#include <algorithm>
#include <cstddef>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace ccmpc {

enum class TankKind { Passive, Controlled };
enum class ReceivingWater { River, Creek };

/// Linear reservoir tank. `beta` is the volume-flow coefficient q_out_max / v_max.
struct TankSpec {
  std::string id;
  TankKind kind = TankKind::Passive;
  double v_max = 0.0;                  // [m3]
  double beta = 0.0;                   // [1/s]
  std::optional<double> q_u_max;       // [m3/s], controlled tanks only
  double overflow_weight = 0.0;
  ReceivingWater receiving_water = ReceivingWater::River;

  bool operator==(const TankSpec&) const = default;
};

/// Pipe delay, expanded into a cascade of `steps` single-sample delays.
struct DelaySpec {
  std::string id;
  int steps = 1;

  bool operator==(const DelaySpec&) const = default;
};

/// Plant-only CSO structure on the inflow of an element: flow above
/// `capacity` spills to the receiving water. Invisible to the controller.
struct PipeCsoSpec {
  std::string id;
  std::string element;
  double capacity = 0.0;               // [m3/s]
  ReceivingWater receiving_water = ReceivingWater::River;

  bool operator==(const PipeCsoSpec&) const = default;
};

struct NetworkSpec {
  std::string name;
  double delta_t = 300.0;              // [s]
  std::vector<TankSpec> tanks;
  std::vector<DelaySpec> delays;
  /// element id -> upstream sources (element ids and/or runoff input ids)
  std::map<std::string, std::vector<std::string>> inflows;
  std::vector<std::string> runoff_inputs;
  std::string wwtp_sink;
  std::vector<PipeCsoSpec> pipe_csos;

  bool operator==(const NetworkSpec&) const = default;
};

/// Raised by the reader and validator. Each failure class has its own kind.
class ConfigError : public std::runtime_error {
 public:
  enum class Kind {
    Syntax,
    Schema,
    UnknownKey,
    DuplicateId,
    DanglingReference,
    Cycle,
    UnstableCoefficient,
    InvalidValue,
    Disconnected,
  };

  ConfigError(Kind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

inline const char* to_string(ConfigError::Kind k) {
  switch (k) {
    case ConfigError::Kind::Syntax: return "syntax error";
    case ConfigError::Kind::Schema: return "schema error";
    case ConfigError::Kind::UnknownKey: return "unknown key";
    case ConfigError::Kind::DuplicateId: return "duplicate id";
    case ConfigError::Kind::DanglingReference: return "dangling reference";
    case ConfigError::Kind::Cycle: return "cycle detected";
    case ConfigError::Kind::UnstableCoefficient: return "unstable coefficient";
    case ConfigError::Kind::InvalidValue: return "invalid value";
    case ConfigError::Kind::Disconnected: return "disconnected element";
  }
  return "config error";
}

namespace detail {

[[noreturn]] inline void fail(ConfigError::Kind kind, const std::string& what) {
  throw ConfigError(kind, std::string(to_string(kind)) + ": " + what);
}

inline std::pair<std::size_t, std::size_t> line_column(const std::string& text,
                                                       std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

inline void check_keys(const nlohmann::json& obj, const std::set<std::string>& allowed,
                       const std::string& where) {
  if (!obj.is_object()) fail(ConfigError::Kind::Schema, where + " must be an object");
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) fail(ConfigError::Kind::UnknownKey, "'" + key + "' in " + where);
  }
}

template <typename T>
T required(const nlohmann::json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end())
    fail(ConfigError::Kind::Schema, std::string("missing '") + key + "' in " + where);
  try {
    return it->template get<T>();
  } catch (const nlohmann::json::exception&) {
    fail(ConfigError::Kind::Schema, std::string("wrong type for '") + key + "' in " + where);
  }
}

inline ReceivingWater parse_water(const std::string& s, const std::string& where) {
  if (s == "river") return ReceivingWater::River;
  if (s == "creek") return ReceivingWater::Creek;
  fail(ConfigError::Kind::Schema, "receiving_water must be 'river' or 'creek' in " + where);
}

inline const char* water_name(ReceivingWater w) {
  return w == ReceivingWater::River ? "river" : "creek";
}

}  // namespace detail

/**
 * Derived, index-based view of a validated NetworkSpec.
 *
 * Elements are numbered tanks first (declaration order) then delays.
 * Delay chains are expanded into cells; cell 0 of a chain receives the
 * inflow and the last cell is the chain's outflow. The state vector used
 * throughout is [tank volumes..., delay cells...].
 */
struct NetworkTopology {
  struct Source {
    bool is_runoff = false;
    int index = 0;                    // element index or runoff input index

    bool operator==(const Source&) const = default;
  };

  std::size_t n_tanks = 0;
  std::size_t n_delays = 0;
  std::size_t n_runoff = 0;
  std::size_t n_controlled = 0;
  std::size_t n_cells = 0;

  std::vector<std::string> element_ids;
  std::vector<std::vector<Source>> sources;       // per element
  std::vector<int> downstream;                    // per element, -1 for the sink
  std::vector<int> order;                         // topological order of elements
  std::vector<int> tank_order;                    // tanks only, topological
  std::vector<int> control_index;                 // per tank, -1 if passive
  std::vector<int> controlled_tanks;              // tank index per control slot
  std::vector<int> cell_offset;                   // per delay: first cell index
  std::vector<int> runoff_target;                 // element fed by each runoff input
  int sink = -1;

  bool is_tank(int element) const { return element < static_cast<int>(n_tanks); }
  int delay_of(int element) const { return element - static_cast<int>(n_tanks); }
  std::size_t n_state() const { return n_tanks + n_cells; }
  int state_of_cell(int cell) const { return static_cast<int>(n_tanks) + cell; }
};

/**
 * Validate the semantic invariants of a spec and build its topology.
 * Throws ConfigError on the first violation.
 */
inline NetworkTopology analyze(const NetworkSpec& spec) {
  using K = ConfigError::Kind;
  using detail::fail;
  NetworkTopology topo;

  if (!(spec.delta_t > 0.0)) fail(K::InvalidValue, "delta_t_s must be positive");

  std::map<std::string, int> element_index;
  std::map<std::string, int> runoff_index;
  std::set<std::string> all_ids;
  auto claim = [&](const std::string& id) {
    if (id.empty()) fail(K::Schema, "empty id");
    if (!all_ids.insert(id).second) fail(K::DuplicateId, "'" + id + "'");
  };

  for (const auto& tank : spec.tanks) {
    claim(tank.id);
    if (!(tank.v_max > 0.0)) fail(K::InvalidValue, "v_max_m3 of '" + tank.id + "' must be > 0");
    if (!(tank.beta > 0.0)) fail(K::InvalidValue, "beta_per_s of '" + tank.id + "' must be > 0");
    if (tank.beta * spec.delta_t > 1.0)
      fail(K::UnstableCoefficient, "beta*delta_t > 1 for '" + tank.id + "'");
    if (!(tank.overflow_weight > 0.0))
      fail(K::InvalidValue, "overflow_weight of '" + tank.id + "' must be > 0");
    if (tank.kind == TankKind::Controlled) {
      if (!tank.q_u_max || !(*tank.q_u_max > 0.0))
        fail(K::InvalidValue, "controlled tank '" + tank.id + "' needs q_u_max_m3s > 0");
    } else if (tank.q_u_max) {
      fail(K::InvalidValue, "passive tank '" + tank.id + "' must not set q_u_max_m3s");
    }
    element_index[tank.id] = static_cast<int>(topo.element_ids.size());
    topo.element_ids.push_back(tank.id);
  }
  for (const auto& delay : spec.delays) {
    claim(delay.id);
    if (delay.steps < 1) fail(K::InvalidValue, "steps of '" + delay.id + "' must be >= 1");
    element_index[delay.id] = static_cast<int>(topo.element_ids.size());
    topo.element_ids.push_back(delay.id);
  }
  for (const auto& input : spec.runoff_inputs) {
    claim(input);
    runoff_index[input] = static_cast<int>(runoff_index.size());
  }
  for (const auto& cso : spec.pipe_csos) {
    claim(cso.id);
    if (!(cso.capacity > 0.0)) fail(K::InvalidValue, "capacity of '" + cso.id + "' must be > 0");
    if (!element_index.count(cso.element))
      fail(K::DanglingReference, "pipe CSO '" + cso.id + "' sits on unknown element '" +
                                     cso.element + "'");
  }

  topo.n_tanks = spec.tanks.size();
  topo.n_delays = spec.delays.size();
  topo.n_runoff = spec.runoff_inputs.size();
  const std::size_t n_elem = topo.element_ids.size();
  if (n_elem == 0) fail(K::Schema, "network has no elements");

  topo.sources.assign(n_elem, {});
  topo.downstream.assign(n_elem, -1);
  topo.runoff_target.assign(topo.n_runoff, -1);
  std::vector<int> consumer(n_elem, -1);

  for (const auto& [target, srcs] : spec.inflows) {
    auto t = element_index.find(target);
    if (t == element_index.end())
      fail(K::DanglingReference, "inflows entry for unknown element '" + target + "'");
    for (const auto& src : srcs) {
      if (auto e = element_index.find(src); e != element_index.end()) {
        if (consumer[e->second] != -1)
          fail(K::DuplicateId, "outflow of '" + src + "' is routed to more than one element");
        consumer[e->second] = t->second;
        topo.sources[t->second].push_back({false, e->second});
      } else if (auto r = runoff_index.find(src); r != runoff_index.end()) {
        if (topo.runoff_target[r->second] != -1)
          fail(K::DuplicateId, "runoff input '" + src + "' feeds more than one element");
        topo.runoff_target[r->second] = t->second;
        topo.sources[t->second].push_back({true, r->second});
      } else {
        fail(K::DanglingReference, "'" + src + "' feeding '" + target + "'");
      }
    }
  }

  // Kahn with declaration order as tie-break keeps the order reproducible.
  std::vector<int> indegree(n_elem, 0);
  for (std::size_t e = 0; e < n_elem; ++e)
    for (const auto& s : topo.sources[e])
      if (!s.is_runoff) ++indegree[e];
  std::priority_queue<int, std::vector<int>, std::greater<>> ready;
  for (std::size_t e = 0; e < n_elem; ++e)
    if (indegree[e] == 0) ready.push(static_cast<int>(e));
  while (!ready.empty()) {
    int e = ready.top();
    ready.pop();
    topo.order.push_back(e);
    if (consumer[e] >= 0 && --indegree[consumer[e]] == 0) ready.push(consumer[e]);
  }
  if (topo.order.size() != n_elem) {
    std::string members;
    for (std::size_t e = 0; e < n_elem; ++e)
      if (indegree[e] > 0) members += (members.empty() ? "" : ", ") + topo.element_ids[e];
    fail(K::Cycle, "elements on a cycle: " + members);
  }

  auto sink = element_index.find(spec.wwtp_sink);
  if (sink == element_index.end())
    fail(K::DanglingReference, "wwtp_sink '" + spec.wwtp_sink + "' is not an element");
  topo.sink = sink->second;
  if (consumer[topo.sink] != -1)
    fail(K::Schema, "wwtp_sink '" + spec.wwtp_sink + "' must not feed another element");
  for (std::size_t e = 0; e < n_elem; ++e) {
    if (static_cast<int>(e) != topo.sink && consumer[e] == -1)
      fail(K::Disconnected, "outflow of '" + topo.element_ids[e] + "' does not reach the sink");
  }
  for (std::size_t r = 0; r < topo.n_runoff; ++r) {
    if (topo.runoff_target[r] == -1)
      fail(K::Disconnected, "runoff input '" + spec.runoff_inputs[r] + "' feeds nothing");
  }
  topo.downstream = consumer;

  topo.control_index.assign(topo.n_tanks, -1);
  for (std::size_t i = 0; i < topo.n_tanks; ++i) {
    if (spec.tanks[i].kind == TankKind::Controlled) {
      topo.control_index[i] = static_cast<int>(topo.controlled_tanks.size());
      topo.controlled_tanks.push_back(static_cast<int>(i));
    }
  }
  topo.n_controlled = topo.controlled_tanks.size();
  for (int e : topo.order)
    if (topo.is_tank(e)) topo.tank_order.push_back(e);

  int cells = 0;
  for (const auto& delay : spec.delays) {
    topo.cell_offset.push_back(cells);
    cells += delay.steps;
  }
  topo.n_cells = static_cast<std::size_t>(cells);
  return topo;
}

/// Element ids in topological order (every element after all its sources).
inline std::vector<std::string> topological_order(const NetworkSpec& spec) {
  const auto topo = analyze(spec);
  std::vector<std::string> out;
  out.reserve(topo.order.size());
  for (int e : topo.order) out.push_back(topo.element_ids[e]);
  return out;
}

/// Parse and validate a network document. Unknown keys are rejected.
inline NetworkSpec parse_network(const std::string& text) {
  using K = ConfigError::Kind;
  using detail::fail;
  using detail::required;
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    auto [line, col] = detail::line_column(text, e.byte > 0 ? e.byte - 1 : 0);
    fail(K::Syntax, "line " + std::to_string(line) + ", column " + std::to_string(col) + ": " +
                        e.what());
  }

  detail::check_keys(doc,
                     {"name", "delta_t_s", "tanks", "delays", "inflows", "runoff_inputs",
                      "wwtp_sink", "pipe_csos", "comment"},
                     "network");
  NetworkSpec spec;
  spec.name = doc.value("name", std::string{});
  spec.delta_t = required<double>(doc, "delta_t_s", "network");

  auto tanks = doc.find("tanks");
  if (tanks == doc.end() || !tanks->is_array()) fail(K::Schema, "'tanks' must be an array");
  for (const auto& t : *tanks) {
    detail::check_keys(t,
                       {"id", "kind", "v_max_m3", "beta_per_s", "q_u_max_m3s", "overflow_weight",
                        "receiving_water"},
                       "tank");
    TankSpec tank;
    tank.id = required<std::string>(t, "id", "tank");
    const std::string where = "tank '" + tank.id + "'";
    const auto kind = required<std::string>(t, "kind", where);
    if (kind == "passive") {
      tank.kind = TankKind::Passive;
    } else if (kind == "controlled") {
      tank.kind = TankKind::Controlled;
    } else {
      fail(K::Schema, "kind must be 'passive' or 'controlled' in " + where);
    }
    tank.v_max = required<double>(t, "v_max_m3", where);
    tank.beta = required<double>(t, "beta_per_s", where);
    if (t.contains("q_u_max_m3s")) tank.q_u_max = required<double>(t, "q_u_max_m3s", where);
    tank.overflow_weight = required<double>(t, "overflow_weight", where);
    tank.receiving_water = detail::parse_water(required<std::string>(t, "receiving_water", where),
                                               where);
    spec.tanks.push_back(std::move(tank));
  }

  if (doc.contains("delays")) {
    if (!doc["delays"].is_array()) fail(K::Schema, "'delays' must be an array");
    for (const auto& d : doc["delays"]) {
      detail::check_keys(d, {"id", "steps"}, "delay");
      DelaySpec delay;
      delay.id = required<std::string>(d, "id", "delay");
      delay.steps = required<int>(d, "steps", "delay '" + delay.id + "'");
      spec.delays.push_back(std::move(delay));
    }
  }

  auto inflows = doc.find("inflows");
  if (inflows == doc.end() || !inflows->is_object())
    fail(K::Schema, "'inflows' must be an object");
  for (const auto& [target, srcs] : inflows->items()) {
    if (!srcs.is_array()) fail(K::Schema, "inflows of '" + target + "' must be an array");
    std::vector<std::string> list;
    for (const auto& s : srcs) {
      if (!s.is_string()) fail(K::Schema, "inflow source of '" + target + "' must be a string");
      list.push_back(s.get<std::string>());
    }
    spec.inflows.emplace(target, std::move(list));
  }

  spec.runoff_inputs = required<std::vector<std::string>>(doc, "runoff_inputs", "network");
  spec.wwtp_sink = required<std::string>(doc, "wwtp_sink", "network");

  if (doc.contains("pipe_csos")) {
    if (!doc["pipe_csos"].is_array()) fail(K::Schema, "'pipe_csos' must be an array");
    for (const auto& p : doc["pipe_csos"]) {
      detail::check_keys(p, {"id", "element", "capacity_m3s", "receiving_water"}, "pipe_cso");
      PipeCsoSpec cso;
      cso.id = required<std::string>(p, "id", "pipe_cso");
      const std::string where = "pipe_cso '" + cso.id + "'";
      cso.element = required<std::string>(p, "element", where);
      cso.capacity = required<double>(p, "capacity_m3s", where);
      cso.receiving_water =
          detail::parse_water(required<std::string>(p, "receiving_water", where), where);
      spec.pipe_csos.push_back(std::move(cso));
    }
  }

  analyze(spec);
  return spec;
}

inline nlohmann::json to_json(const NetworkSpec& spec) {
  nlohmann::json out;
  out["name"] = spec.name;
  out["delta_t_s"] = spec.delta_t;
  out["tanks"] = nlohmann::json::array();
  for (const auto& t : spec.tanks) {
    nlohmann::json j;
    j["id"] = t.id;
    j["kind"] = t.kind == TankKind::Passive ? "passive" : "controlled";
    j["v_max_m3"] = t.v_max;
    j["beta_per_s"] = t.beta;
    if (t.q_u_max) j["q_u_max_m3s"] = *t.q_u_max;
    j["overflow_weight"] = t.overflow_weight;
    j["receiving_water"] = detail::water_name(t.receiving_water);
    out["tanks"].push_back(j);
  }
  out["delays"] = nlohmann::json::array();
  for (const auto& d : spec.delays) out["delays"].push_back({{"id", d.id}, {"steps", d.steps}});
  out["inflows"] = nlohmann::json::object();
  for (const auto& [target, srcs] : spec.inflows) out["inflows"][target] = srcs;
  out["runoff_inputs"] = spec.runoff_inputs;
  out["wwtp_sink"] = spec.wwtp_sink;
  out["pipe_csos"] = nlohmann::json::array();
  for (const auto& p : spec.pipe_csos) {
    out["pipe_csos"].push_back({{"id", p.id},
                                {"element", p.element},
                                {"capacity_m3s", p.capacity},
                                {"receiving_water", detail::water_name(p.receiving_water)}});
  }
  return out;
}

inline std::string serialize_network(const NetworkSpec& spec) { return to_json(spec).dump(2); }

}  // namespace ccmpc
