#pragma once

/**
 * @file
 * Disturbance forecasts and realizations.
 *
 * The actual runoff w drives the plant through a truncated normal
 * realization N(w, (p w / 3)^2) restricted to [0, w + p w]. The controller
 * sees a forecast with mean a w + b and standard deviation p w / 3.
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>

#include <Eigen/Dense>

namespace ccmpc {

struct UncertaintyModel {
  double bound_pct = 0.5;    // p
  double scale_bias = 1.0;   // a
  double offset_bias = 0.0;  // b [m3/s]
  double gamma = 0.9;

  void validate() const {
    if (!(bound_pct >= 0.0)) throw std::invalid_argument("uncertainty bound p must be >= 0");
    if (!(scale_bias > 0.0)) throw std::invalid_argument("scale bias a must be > 0");
    if (!(offset_bias >= 0.0)) throw std::invalid_argument("offset bias b must be >= 0");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("gamma must lie in (0, 1]");
  }
};

/// Forecast over a horizon; column k is step k, row r is runoff input r.
struct DisturbanceForecast {
  Eigen::MatrixXd mean;
  Eigen::MatrixXd std_dev;

  int horizon() const { return static_cast<int>(mean.cols()); }

  /// Stacked time-major means and variances, extended to `n` steps by
  /// holding the last column.
  Eigen::VectorXd stacked_mean(int n) const { return stack(mean, n, false); }
  Eigen::VectorXd stacked_var(int n) const { return stack(std_dev, n, true); }

 private:
  static Eigen::VectorXd stack(const Eigen::MatrixXd& m, int n, bool square) {
    if (m.cols() == 0) throw std::invalid_argument("forecast has no steps");
    Eigen::VectorXd out(m.rows() * n);
    for (int k = 0; k < n; ++k) {
      const Eigen::Index c = std::min<Eigen::Index>(k, m.cols() - 1);
      for (Eigen::Index r = 0; r < m.rows(); ++r) {
        const double v = m(r, c);
        out(k * m.rows() + r) = square ? v * v : v;
      }
    }
    return out;
  }
};

inline DisturbanceForecast make_forecast(const Eigen::MatrixXd& w_actual_window,
                                         const UncertaintyModel& model) {
  if ((w_actual_window.array() < 0.0).any() || !w_actual_window.allFinite())
    throw std::invalid_argument("make_forecast: runoff must be finite and >= 0");
  DisturbanceForecast f;
  f.mean = (model.scale_bias * w_actual_window).array() + model.offset_bias;
  f.std_dev = model.bound_pct / 3.0 * w_actual_window;
  return f;
}

/// splitmix64 finalizer.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent generator for one (seed, step, input) triple, so draws do
/// not depend on evaluation order or thread placement.
inline std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t step, std::uint64_t input) {
  const std::uint64_t key = splitmix64(splitmix64(splitmix64(seed) ^ step) ^ (input + 1));
  return std::mt19937_64(key);
}

inline constexpr int kMaxRejections = 100;

/// One truncated normal draw on [0, w + p w] around w with sigma = p w / 3.
/// After kMaxRejections rejections the last proposal is clamped.
template <class Rng>
double sample_truncated(double w, double p, Rng& rng) {
  if (!std::isfinite(w) || w < 0.0) throw std::invalid_argument("runoff must be finite and >= 0");
  const double sigma = p * w / 3.0;
  if (sigma == 0.0) return w;
  const double upper = w + p * w;
  std::normal_distribution<double> normal(w, sigma);
  double x = 0.0;
  for (int i = 0; i < kMaxRejections; ++i) {
    x = normal(rng);
    if (x >= 0.0 && x <= upper) return x;
  }
  return std::clamp(x, 0.0, upper);
}

template <class Rng>
Eigen::VectorXd sample_disturbance(const Eigen::VectorXd& w_actual, const UncertaintyModel& model,
                                   Rng& rng) {
  Eigen::VectorXd out(w_actual.size());
  for (Eigen::Index i = 0; i < w_actual.size(); ++i)
    out(i) = sample_truncated(w_actual(i), model.bound_pct, rng);
  return out;
}

/// Realization for one simulation step using per-input streams.
inline Eigen::VectorXd sample_disturbance(const Eigen::VectorXd& w_actual,
                                          const UncertaintyModel& model, std::uint64_t seed,
                                          std::uint64_t step) {
  Eigen::VectorXd out(w_actual.size());
  for (Eigen::Index i = 0; i < w_actual.size(); ++i) {
    auto rng = stream_rng(seed, step, static_cast<std::uint64_t>(i));
    out(i) = sample_truncated(w_actual(i), model.bound_pct, rng);
  }
  return out;
}

}  // namespace ccmpc
