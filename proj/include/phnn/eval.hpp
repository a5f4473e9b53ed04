#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "phnn/datagen.hpp"
#include "phnn/errors.hpp"
#include "phnn/integrate.hpp"
#include "phnn/models.hpp"
#include "phnn/parallel.hpp"
#include "phnn/systems.hpp"

// Post-training assessment: rollouts from unseen initial conditions, state and
// energy mean squared errors, recovered force/damping curves, learned-
// Hamiltonian surfaces, and stroboscopic Poincare sections with a histogram
// similarity score.

namespace phnn::eval {

// RK4 rollout with the model as the vector field, one step per stored point.
// With a period given, the model sees time folded into [0, T).
inline ode::Trajectory rollout_model(const model::InferenceModel& im,
                                     const std::vector<double>& state0, double dt, double t_max,
                                     std::optional<double> period = std::nullopt) {
  if (static_cast<int>(state0.size()) != im.state_dim())
    fail(errc::shape, "rollout: initial state size does not match the model");
  auto rhs = [&](const double* y, double t, double* d) {
    const double tt = period ? std::fmod(t, *period) : t;
    im.rhs(y, tt, d);
  };
  ode::Trajectory traj = ode::integrate(rhs, state0, 0.0, dt, t_max, 1);
  traj.derivs.clear();  // predictions carry no analytic derivatives
  return traj;
}

namespace detail {

inline void require_same_grid(const ode::Trajectory& a, const ode::Trajectory& b) {
  if (a.dim != b.dim || a.points() != b.points())
    fail(errc::shape, "trajectory lengths differ: " + std::to_string(a.points()) + " vs " +
                          std::to_string(b.points()));
}

}  // namespace detail

// mean over the rolled-out points (the initial condition is shared and
// excluded, matching N = T_max / dt) of the squared state difference
inline double mse_state(const ode::Trajectory& pred, const ode::Trajectory& truth) {
  detail::require_same_grid(pred, truth);
  const std::size_t n = pred.points() - 1;
  if (n == 0) return 0.0;
  double total = 0;
  for (std::size_t i = 1; i <= n; ++i) {
    const double* a = pred.state(i);
    const double* b = truth.state(i);
    for (std::size_t j = 0; j < pred.dim; ++j) {
      const double d = a[j] - b[j];
      total += d * d;
    }
  }
  return total / static_cast<double>(n);
}

// energy error under the system's stationary Hamiltonian evaluated on both
// trajectories
inline double mse_energy(const sys::SystemSpec& system, const ode::Trajectory& pred,
                         const ode::Trajectory& truth) {
  detail::require_same_grid(pred, truth);
  const auto m = static_cast<std::size_t>(system.dim());
  if (pred.dim != 2 * m) fail(errc::shape, "trajectory dimension does not match the system");
  const std::size_t n = pred.points() - 1;
  if (n == 0) return 0.0;
  double total = 0;
  for (std::size_t i = 1; i <= n; ++i) {
    const double ha = system.stationary_hamiltonian(pred.state(i), pred.state(i) + m);
    const double hb = system.stationary_hamiltonian(truth.state(i), truth.state(i) + m);
    total += (ha - hb) * (ha - hb);
  }
  return total / static_cast<double>(n);
}

// --- per-test-set evaluation ---------------------------------------------------

struct RolloutReport {
  std::vector<ode::Trajectory> predicted;
  std::vector<double> mse_state_per_ic;
  std::vector<double> mse_energy_per_ic;
  double state_mean = 0, state_std = 0;
  double energy_mean = 0, energy_std = 0;
};

namespace detail {

inline void mean_std(const std::vector<double>& v, double& mean, double& sd) {
  mean = 0;
  sd = 0;
  if (v.empty()) return;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  if (v.size() < 2) return;
  double acc = 0;
  for (double x : v) acc += (x - mean) * (x - mean);
  sd = std::sqrt(acc / static_cast<double>(v.size() - 1));
}

}  // namespace detail

// rollout every test trajectory's initial state and score against the stored
// ground truth; parallel across initial conditions, merged by index
inline RolloutReport evaluate_rollouts(const model::InferenceModel& im,
                                       const data::Dataset& test_set,
                                       std::optional<double> period = std::nullopt,
                                       unsigned jobs = 0) {
  const auto system = test_set.system();
  RolloutReport report;
  const std::size_t n = test_set.trajectories.size();
  report.predicted.resize(n);
  report.mse_state_per_ic.resize(n);
  report.mse_energy_per_ic.resize(n);
  parallel_for(
      n,
      [&](std::size_t i) {
        const auto& truth = test_set.trajectories[i];
        const std::vector<double> ic(truth.state(0), truth.state(0) + truth.dim);
        model::InferenceModel local(im.params());
        ode::Trajectory pred = rollout_model(local, ic, test_set.dt, test_set.t_max, period);
        report.mse_state_per_ic[i] = mse_state(pred, truth);
        report.mse_energy_per_ic[i] = mse_energy(system, pred, truth);
        report.predicted[i] = std::move(pred);
      },
      jobs);
  detail::mean_std(report.mse_state_per_ic, report.state_mean, report.state_std);
  detail::mean_std(report.mse_energy_per_ic, report.energy_mean, report.energy_std);
  return report;
}

// --- force and damping recovery -------------------------------------------------

struct ForceCurve {
  std::vector<double> times;
  std::vector<double> force;  // times.size() x M
};

struct DampingCurve {
  std::vector<double> times;
  std::vector<double> contribution;  // N * dH/dp along the reference trajectory
};

inline ForceCurve recover_force(const model::InferenceModel& im,
                                const std::vector<double>& times) {
  ForceCurve curve;
  curve.times = times;
  const auto m = static_cast<std::size_t>(im.params().space_dim);
  curve.force.resize(times.size() * m);
  for (std::size_t i = 0; i < times.size(); ++i)
    im.force(times[i], curve.force.data() + i * m);
  return curve;
}

inline DampingCurve recover_damping(const model::InferenceModel& im,
                                    const ode::Trajectory& reference) {
  const double n = im.damping();
  const auto m = static_cast<std::size_t>(im.params().space_dim);
  if (reference.dim != 2 * m) fail(errc::shape, "reference trajectory does not match the model");
  DampingCurve curve;
  curve.times = reference.times;
  curve.contribution.resize(reference.points() * m);
  std::vector<double> dq(m), dp(m);
  for (std::size_t i = 0; i < reference.points(); ++i) {
    im.stat_gradient(reference.state(i), reference.times[i], dq.data(), dp.data());
    for (std::size_t j = 0; j < m; ++j) curve.contribution[i * m + j] = n * dp[j];
  }
  return curve;
}

// --- learned Hamiltonian surface -------------------------------------------------

struct SurfaceGrid {
  std::size_t resolution = 0;
  double q_lo = 0, q_hi = 0, p_lo = 0, p_hi = 0;
  double t_fixed = 0;
  std::vector<double> values;  // resolution x resolution, q-major rows
};

// H provider: callable(q, p, t) -> double
template <typename HFn>
SurfaceGrid hamiltonian_surface_of(const HFn& h, double q_lo, double q_hi, double p_lo,
                                   double p_hi, std::size_t resolution, double t_fixed) {
  if (resolution < 2) fail(errc::config, "surface resolution must be at least 2");
  SurfaceGrid grid;
  grid.resolution = resolution;
  grid.q_lo = q_lo;
  grid.q_hi = q_hi;
  grid.p_lo = p_lo;
  grid.p_hi = p_hi;
  grid.t_fixed = t_fixed;
  grid.values.resize(resolution * resolution);
  const double dq = (q_hi - q_lo) / static_cast<double>(resolution - 1);
  const double dp = (p_hi - p_lo) / static_cast<double>(resolution - 1);
  for (std::size_t i = 0; i < resolution; ++i) {
    const double q = q_lo + static_cast<double>(i) * dq;
    for (std::size_t j = 0; j < resolution; ++j) {
      const double p = p_lo + static_cast<double>(j) * dp;
      grid.values[i * resolution + j] = h(q, p, t_fixed);
    }
  }
  return grid;
}

inline SurfaceGrid hamiltonian_surface(const model::InferenceModel& im, double q_lo, double q_hi,
                                       double p_lo, double p_hi, std::size_t resolution,
                                       double t_fixed) {
  if (im.params().space_dim != 1)
    fail(errc::config, "phase-plane surfaces are defined for one-dimensional systems");
  auto h = [&](double q, double p, double t) {
    const double y[2] = {q, p};
    return im.hamiltonian(y, t);
  };
  return hamiltonian_surface_of(h, q_lo, q_hi, p_lo, p_hi, resolution, t_fixed);
}

// --- Poincare sections ------------------------------------------------------------

struct Histogram2D {
  std::size_t bins = 0;
  double lo0 = 0, hi0 = 0, lo1 = 0, hi1 = 0;
  std::vector<double> counts;  // bins x bins
  double total = 0;            // in-window points

  bool same_geometry(const Histogram2D& o) const {
    return bins == o.bins && lo0 == o.lo0 && hi0 == o.hi0 && lo1 == o.lo1 && hi1 == o.hi1;
  }
};

struct PoincareSection {
  std::vector<double> points;  // count x 2
  std::size_t count = 0;
  Histogram2D histogram;
  std::string source;
  bool truncated = false;  // the rollout diverged; the section is partial
};

constexpr std::size_t kPoincareBins = 50;
constexpr double kPoincareWindow = 2.0;  // [-2, 2] in both q and p

inline Histogram2D build_histogram(const std::vector<double>& points, std::size_t count,
                                   std::size_t bins = kPoincareBins,
                                   double window = kPoincareWindow) {
  Histogram2D h;
  h.bins = bins;
  h.lo0 = -window;
  h.hi0 = window;
  h.lo1 = -window;
  h.hi1 = window;
  h.counts.assign(bins * bins, 0.0);
  const double w0 = (h.hi0 - h.lo0) / static_cast<double>(bins);
  const double w1 = (h.hi1 - h.lo1) / static_cast<double>(bins);
  for (std::size_t i = 0; i < count; ++i) {
    const double q = points[2 * i], p = points[2 * i + 1];
    if (q < h.lo0 || q >= h.hi0 || p < h.lo1 || p >= h.hi1) continue;
    const auto bq = static_cast<std::size_t>((q - h.lo0) / w0);
    const auto bp = static_cast<std::size_t>((p - h.lo1) / w1);
    h.counts[bq * bins + bp] += 1.0;
    h.total += 1.0;
  }
  return h;
}

// Samples (q, p) after every full forcing period. The rhs is called with the
// local phase time when normalize_time is set (trained models only know one
// period); the ground-truth field sees absolute time.
template <typename Rhs>
PoincareSection poincare_core(const Rhs& rhs, const std::vector<double>& state0, double period,
                              std::size_t n_periods, double dt, bool normalize_time,
                              const std::string& source) {
  if (state0.size() != 2) fail(errc::config, "poincare sections are defined in the phase plane");
  if (n_periods < 1) fail(errc::config, "need at least one period");
  const auto steps_per_period = static_cast<std::size_t>(std::llround(period / dt));
  if (steps_per_period == 0 ||
      std::fabs(static_cast<double>(steps_per_period) * dt - period) > 1e-12 * std::max(1.0, period))
    fail(errc::config, "dt must divide the period to within 1e-12");

  PoincareSection section;
  section.source = source;
  section.points.reserve(2 * n_periods);
  std::vector<double> state = state0;
  std::vector<double> work;
  for (std::size_t k = 0; k < n_periods; ++k) {
    const double t_base = static_cast<double>(k) * period;
    for (std::size_t j = 0; j < steps_per_period; ++j) {
      const double local = static_cast<double>(j) * dt;
      const double t = normalize_time ? local : t_base + local;
      try {
        ode::rk4_step(rhs, state.data(), 2, t, dt, work);
      } catch (const error&) {
        section.truncated = true;
        section.histogram = build_histogram(section.points, section.count);
        return section;
      }
    }
    section.points.push_back(state[0]);
    section.points.push_back(state[1]);
    ++section.count;
  }
  section.histogram = build_histogram(section.points, section.count);
  return section;
}

inline PoincareSection poincare(const sys::SystemSpec& system, const std::vector<double>& state0,
                                double period, std::size_t n_periods, double dt) {
  auto rhs = [&](const double* y, double t, double* d) { system.rhs(y, t, d); };
  return poincare_core(rhs, state0, period, n_periods, dt, false, system.name());
}

inline PoincareSection poincare(const model::InferenceModel& im,
                                const std::vector<double>& state0, double period,
                                std::size_t n_periods, double dt) {
  auto rhs = [&](const double* y, double t, double* d) { im.rhs(y, t, d); };
  return poincare_core(rhs, state0, period, n_periods, dt, true,
                       model::arch_name(im.params().arch));
}

// mean over bins of squared differences of unit-mass histograms, scaled by
// bins^2; invariant to duplicating every sample
inline double histogram_mse(const PoincareSection& a, const PoincareSection& b) {
  const Histogram2D& ha = a.histogram;
  const Histogram2D& hb = b.histogram;
  if (!ha.same_geometry(hb)) fail(errc::config, "histogram geometries differ");
  if (ha.total <= 0 || hb.total <= 0) fail(errc::config, "empty histogram in comparison");
  const std::size_t n = ha.counts.size();
  double acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = ha.counts[i] / ha.total - hb.counts[i] / hb.total;
    acc += d * d;
  }
  const double mean = acc / static_cast<double>(n);
  return mean * static_cast<double>(ha.bins) * static_cast<double>(ha.bins);
}

}  // namespace phnn::eval
