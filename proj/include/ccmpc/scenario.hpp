#pragma once

/**
 * @file
 * Rainfall scenarios: runoff series per input, either listed explicitly or
 * generated from a dry-weather base plus storm pulses.
 *
 *     {
 *       "name": "storm1", "delta_t_s": 300, "steps": 288,
 *       "dry_weather_m3s": 0.01,
 *       "storms": [{"start_step": 60, "duration_steps": 36,
 *                   "peak_m3s": {"w1": 0.5, "w2": 0.4}}],
 *       "series": {"w3": [0.01, 0.02, ...]}
 *     }
 *
 * A storm adds peak * sin^2 over its duration. A "peak_m3s" number applies
 * to every input. Explicit series replace the generated values of their
 * input and must have `steps` entries.
 */

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "network.hpp"

namespace ccmpc {

struct StormPulse {
  int start_step = 0;
  int duration_steps = 1;
  std::vector<double> peak;   // per runoff input [m3/s]
};

struct RainfallScenario {
  std::string name;
  double delta_t = 300.0;
  double dry_weather = 0.01;   // per input [m3/s]
  Eigen::MatrixXd runoff;      // n_runoff x steps [m3/s]

  int steps() const { return static_cast<int>(runoff.cols()); }

  /// Columns [first, first + n), holding the last column past the end.
  Eigen::MatrixXd window(int first, int n) const {
    Eigen::MatrixXd out(runoff.rows(), n);
    for (int k = 0; k < n; ++k) out.col(k) = runoff.col(std::min(first + k, steps() - 1));
    return out;
  }
};

/// Dry-weather base plus sin^2 storm pulses.
inline Eigen::MatrixXd generate_runoff(std::size_t n_inputs, int steps, double dry_weather,
                                       const std::vector<StormPulse>& storms) {
  Eigen::MatrixXd w = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(n_inputs), steps, dry_weather);
  for (const auto& s : storms) {
    for (int k = std::max(s.start_step, 0); k < std::min(s.start_step + s.duration_steps, steps); ++k) {
      const double phase = std::numbers::pi * (k - s.start_step + 0.5) / s.duration_steps;
      const double shape = std::sin(phase) * std::sin(phase);
      for (std::size_t r = 0; r < n_inputs; ++r) w(static_cast<Eigen::Index>(r), k) += s.peak[r] * shape;
    }
  }
  return w;
}

inline RainfallScenario parse_scenario(const std::string& text, const NetworkSpec& spec) {
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
                     {"name", "delta_t_s", "steps", "dry_weather_m3s", "storms", "series", "comment"},
                     "scenario");
  RainfallScenario sc;
  sc.name = doc.value("name", std::string{});
  sc.delta_t = doc.contains("delta_t_s") ? required<double>(doc, "delta_t_s", "scenario") : spec.delta_t;
  if (sc.delta_t != spec.delta_t)
    fail(K::InvalidValue, "scenario delta_t_s " + std::to_string(sc.delta_t) +
                              " differs from the network's " + std::to_string(spec.delta_t));
  const int steps = required<int>(doc, "steps", "scenario");
  if (steps < 1) fail(K::InvalidValue, "scenario steps must be >= 1");
  sc.dry_weather = doc.contains("dry_weather_m3s")
                       ? required<double>(doc, "dry_weather_m3s", "scenario")
                       : 0.01;
  if (!(sc.dry_weather >= 0.0)) fail(K::InvalidValue, "dry_weather_m3s must be >= 0");

  const std::size_t nw = spec.runoff_inputs.size();
  auto input_index = [&](const std::string& id, const std::string& where) {
    for (std::size_t r = 0; r < nw; ++r)
      if (spec.runoff_inputs[r] == id) return r;
    fail(K::DanglingReference, where + " references unknown runoff input '" + id + "'");
  };

  std::vector<StormPulse> storms;
  if (doc.contains("storms")) {
    if (!doc["storms"].is_array()) fail(K::Schema, "'storms' must be an array");
    for (const auto& s : doc["storms"]) {
      detail::check_keys(s, {"start_step", "duration_steps", "peak_m3s"}, "storm");
      StormPulse p;
      p.start_step = required<int>(s, "start_step", "storm");
      p.duration_steps = required<int>(s, "duration_steps", "storm");
      if (p.duration_steps < 1) fail(K::InvalidValue, "storm duration_steps must be >= 1");
      p.peak.assign(nw, 0.0);
      const auto it = s.find("peak_m3s");
      if (it == s.end()) fail(K::Schema, "storm is missing 'peak_m3s'");
      if (it->is_number()) {
        p.peak.assign(nw, it->get<double>());
      } else if (it->is_object()) {
        for (const auto& [id, v] : it->items()) {
          if (!v.is_number()) fail(K::Schema, "storm peak for '" + id + "' must be a number");
          p.peak[input_index(id, "storm")] = v.get<double>();
        }
      } else {
        fail(K::Schema, "storm 'peak_m3s' must be a number or an object");
      }
      for (double v : p.peak)
        if (!(v >= 0.0)) fail(K::InvalidValue, "storm peaks must be >= 0");
      storms.push_back(std::move(p));
    }
  }
  sc.runoff = generate_runoff(nw, steps, sc.dry_weather, storms);

  if (doc.contains("series")) {
    if (!doc["series"].is_object()) fail(K::Schema, "'series' must be an object");
    for (const auto& [id, arr] : doc["series"].items()) {
      const std::size_t r = input_index(id, "series");
      if (!arr.is_array() || static_cast<int>(arr.size()) != steps)
        fail(K::Schema, "series '" + id + "' must be an array of " + std::to_string(steps) + " numbers");
      for (int k = 0; k < steps; ++k) {
        if (!arr[static_cast<std::size_t>(k)].is_number())
          fail(K::Schema, "series '" + id + "' must hold numbers");
        const double v = arr[static_cast<std::size_t>(k)].get<double>();
        if (!(v >= 0.0)) fail(K::InvalidValue, "series '" + id + "' has a negative entry");
        sc.runoff(static_cast<Eigen::Index>(r), k) = v;
      }
    }
  }
  return sc;
}

}  // namespace ccmpc
