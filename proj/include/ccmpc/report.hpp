#pragma once

/**
 * @file
 * CSO and treated-water indicators of a simulation run, their relative
 * deviations against a baseline, and the table/JSON renderings.
 */

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "network.hpp"

namespace ccmpc {

struct KpiReport {
  struct Element {
    std::string id;
    ReceivingWater water = ReceivingWater::River;
    double volume = 0.0;   // [m3]
  };
  std::string network;
  std::string scenario;
  std::uint64_t seed = 0;
  std::vector<Element> elements;   // tanks in declaration order, then pipe CSO points
  double river_total = 0.0;
  double creek_total = 0.0;
  double grand_total = 0.0;
  double wwtp_volume = 0.0;
};

/// Build a report from cumulative volumes (tanks then pipe CSO points).
inline KpiReport make_kpis(const NetworkSpec& spec, const std::vector<double>& cumulative_cso,
                           double wwtp_volume) {
  if (cumulative_cso.size() != spec.tanks.size() + spec.pipe_csos.size())
    throw std::invalid_argument("make_kpis: one volume per CSO point expected");
  KpiReport k;
  k.network = spec.name;
  std::size_t i = 0;
  for (const auto& t : spec.tanks) k.elements.push_back({t.id, t.receiving_water, cumulative_cso[i++]});
  for (const auto& p : spec.pipe_csos)
    k.elements.push_back({p.id, p.receiving_water, cumulative_cso[i++]});
  for (const auto& e : k.elements) (e.water == ReceivingWater::River ? k.river_total : k.creek_total) += e.volume;
  k.grand_total = k.river_total + k.creek_total;
  k.wwtp_volume = wwtp_volume;
  return k;
}

/// Relative deviations in percent; nullopt where the baseline is zero.
struct KpiDeviations {
  std::optional<double> river_pct;
  std::optional<double> creek_pct;
  std::optional<double> total_pct;
  std::optional<double> wwtp_pct;
};

namespace detail {
/// Reduction (positive when the candidate spills less).
inline std::optional<double> reduction_pct(double candidate, double baseline) {
  if (baseline == 0.0) return std::nullopt;
  return (baseline - candidate) / baseline * 100.0;
}
}  // namespace detail

inline KpiDeviations kpi_deviations(const KpiReport& candidate, const KpiReport& baseline) {
  KpiDeviations d;
  d.river_pct = detail::reduction_pct(candidate.river_total, baseline.river_total);
  d.creek_pct = detail::reduction_pct(candidate.creek_total, baseline.creek_total);
  d.total_pct = detail::reduction_pct(candidate.grand_total, baseline.grand_total);
  if (baseline.wwtp_volume != 0.0)
    d.wwtp_pct = (candidate.wwtp_volume - baseline.wwtp_volume) / baseline.wwtp_volume * 100.0;
  return d;
}

inline constexpr const char* kUndefined = "n/a";

inline double round_volume(double v) { return std::round(v * 1000.0) / 1000.0; }

/// JSON with volumes rounded to 1e-3 m3. Controller settings are not part
/// of the document so that equivalent runs compare equal byte for byte.
inline nlohmann::ordered_json kpi_to_json(const KpiReport& k) {
  nlohmann::ordered_json j;
  j["network"] = k.network;
  j["scenario"] = k.scenario;
  j["seed"] = k.seed;
  nlohmann::ordered_json cso = nlohmann::ordered_json::object();
  for (const auto& e : k.elements) cso[e.id] = round_volume(e.volume);
  j["cso_m3"] = cso;
  j["river_total_m3"] = round_volume(k.river_total);
  j["creek_total_m3"] = round_volume(k.creek_total);
  j["grand_total_m3"] = round_volume(k.grand_total);
  j["wwtp_volume_m3"] = round_volume(k.wwtp_volume);
  return j;
}

inline std::string format_pct(const std::optional<double>& v) {
  if (!v) return kUndefined;
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << *v << '%';
  return os.str();
}

/**
 * Aligned text table: per-element CSO rows, River/Creek/Total, the
 * deviation rows R.%, C.%, Tot.% against `baseline_column`, then WWTP
 * volume and Imp.%. The baseline column shows blank deviations.
 */
inline std::string kpi_table(const std::vector<std::string>& headers,
                             const std::vector<KpiReport>& columns, std::size_t baseline_column = 0) {
  if (headers.size() != columns.size()) throw std::invalid_argument("kpi_table: header count mismatch");
  std::vector<std::vector<std::string>> rows;
  auto vol = [](double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(0) << v;
    return os.str();
  };
  std::vector<std::string> head{"Tank & Pipes"};
  head.insert(head.end(), headers.begin(), headers.end());
  rows.push_back(head);
  rows.push_back({});
  if (!columns.empty()) {
    for (std::size_t e = 0; e < columns[0].elements.size(); ++e) {
      std::vector<std::string> r{columns[0].elements[e].id};
      for (const auto& c : columns) r.push_back(vol(c.elements.at(e).volume));
      rows.push_back(r);
    }
  }
  rows.push_back({});
  auto total_row = [&](const char* name, double KpiReport::*field) {
    std::vector<std::string> r{name};
    for (const auto& c : columns) r.push_back(vol(c.*field));
    rows.push_back(r);
  };
  total_row("River", &KpiReport::river_total);
  total_row("Creek", &KpiReport::creek_total);
  total_row("Total", &KpiReport::grand_total);
  rows.push_back({});
  auto dev_row = [&](const char* name, std::optional<double> KpiDeviations::*field) {
    std::vector<std::string> r{name};
    for (std::size_t c = 0; c < columns.size(); ++c)
      r.push_back(c == baseline_column
                      ? std::string{}
                      : format_pct(kpi_deviations(columns[c], columns[baseline_column]).*field));
    rows.push_back(r);
  };
  dev_row("R. %", &KpiDeviations::river_pct);
  dev_row("C. %", &KpiDeviations::creek_pct);
  dev_row("Tot. %", &KpiDeviations::total_pct);
  rows.push_back({});
  total_row("WWTP Vol.", &KpiReport::wwtp_volume);
  dev_row("Imp. %", &KpiDeviations::wwtp_pct);

  std::vector<std::size_t> width(headers.size() + 1, 0);
  for (const auto& r : rows)
    for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
  std::size_t total_width = 0;
  for (auto w : width) total_width += w + 2;
  std::ostringstream os;
  for (const auto& r : rows) {
    if (r.empty()) {
      os << std::string(total_width, '-') << '\n';
      continue;
    }
    for (std::size_t c = 0; c < r.size(); ++c) {
      if (c == 0) {
        os << std::left << std::setw(static_cast<int>(width[c] + 2)) << r[c];
      } else {
        os << std::right << std::setw(static_cast<int>(width[c] + 2)) << r[c];
      }
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace ccmpc
