#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "phnn/autodiff.hpp"
#include "phnn/errors.hpp"
#include "phnn/io.hpp"

// Fixed-step classical RK4. Ground truth uses many substeps per stored point
// so that doubling the substep count moves the trajectory by less than 1e-10
// relative; model rollouts step once per stored point, matching how the
// training targets were defined.

namespace phnn::ode {

struct Trajectory {
  std::size_t dim = 0;          // state size, 2M
  std::vector<double> times;    // N+1
  std::vector<double> states;   // (N+1) x dim, row-major
  std::vector<double> derivs;   // analytic rhs at stored points; empty for rollouts

  std::size_t points() const { return times.size(); }
  const double* state(std::size_t i) const { return states.data() + i * dim; }
  const double* deriv(std::size_t i) const { return derivs.data() + i * dim; }
};

inline bool all_finite(const double* v, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    if (!std::isfinite(v[i])) return false;
  return true;
}

// One classical four-stage step, in place. f(state, t, dstate).
template <typename Rhs>
void rk4_step(const Rhs& f, double* state, std::size_t dim, double t, double dt,
              std::vector<double>& work) {
  work.resize(5 * dim);
  double* k1 = work.data();
  double* k2 = k1 + dim;
  double* k3 = k2 + dim;
  double* k4 = k3 + dim;
  double* tmp = k4 + dim;
  const double half = dt / 2.0;
  f(state, t, k1);
  for (std::size_t i = 0; i < dim; ++i) tmp[i] = state[i] + half * k1[i];
  f(tmp, t + half, k2);
  for (std::size_t i = 0; i < dim; ++i) tmp[i] = state[i] + half * k2[i];
  f(tmp, t + half, k3);
  for (std::size_t i = 0; i < dim; ++i) tmp[i] = state[i] + dt * k3[i];
  f(tmp, t + dt, k4);
  const double sixth = dt / 6.0;
  for (std::size_t i = 0; i < dim; ++i)
    state[i] += sixth * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  if (!all_finite(state, dim))
    fail(errc::numeric, "non-finite state after step from t=" + fmt17(t));
}

template <typename Rhs>
std::vector<double> rk4_step(const Rhs& f, const std::vector<double>& state, double t, double dt) {
  std::vector<double> out = state;
  std::vector<double> work;
  rk4_step(f, out.data(), out.size(), t, dt, work);
  return out;
}

inline std::size_t step_count(double dt, double t_max) {
  if (dt <= 0) fail(errc::config, "dt must be positive");
  const double n = t_max / dt;
  const auto rounded = static_cast<std::size_t>(std::llround(n));
  if (rounded == 0) fail(errc::config, "t_max shorter than one step");
  return rounded;
}

// Integrates from t0 storing points at spacing dt, stepping internally at
// dt/substeps. Stored derivs are the analytic rhs at the stored points.
template <typename Rhs>
Trajectory integrate(const Rhs& f, const std::vector<double>& state0, double t0, double dt,
                     double t_max, int substeps = 1) {
  if (substeps < 1) fail(errc::config, "substeps must be >= 1");
  const std::size_t dim = state0.size();
  const std::size_t n = step_count(dt, t_max);
  Trajectory traj;
  traj.dim = dim;
  traj.times.reserve(n + 1);
  traj.states.reserve((n + 1) * dim);
  traj.derivs.reserve((n + 1) * dim);

  std::vector<double> state = state0;
  std::vector<double> deriv(dim);
  std::vector<double> work;
  const double h = dt / substeps;
  for (std::size_t i = 0; i <= n; ++i) {
    const double t = t0 + static_cast<double>(i) * dt;
    if (!all_finite(state.data(), dim))
      fail(errc::numeric, "non-finite state at t=" + fmt17(t));
    f(state.data(), t, deriv.data());
    traj.times.push_back(t);
    traj.states.insert(traj.states.end(), state.begin(), state.end());
    traj.derivs.insert(traj.derivs.end(), deriv.begin(), deriv.end());
    if (i == n) break;
    if (substeps == 1) {
      rk4_step(f, state.data(), dim, t, dt, work);
    } else {
      for (int s = 0; s < substeps; ++s)
        rk4_step(f, state.data(), dim, t + static_cast<double>(s) * h, h, work);
    }
  }
  return traj;
}

// ---------------------------------------------------------------------------
// Differentiable step: the same four-stage update recorded on a graph.
// The rhs builder receives the state var and the stage-time var and must
// record its output on the same graph.

using RecordedRhs = std::function<ad::Var(ad::Var state, ad::Var t)>;

inline ad::Var rk4_step_recorded(ad::Graph& g, const RecordedRhs& f, ad::Var state,
                                 const std::vector<double>& t, double dt) {
  const std::size_t rows = state.shape().rank == 2 ? state.shape().d0 : 1;
  if (t.size() != rows) fail(errc::shape, "rk4_step_recorded: one time per state row");
  auto time_node = [&](double offset) {
    std::vector<double> v(t);
    for (double& x : v) x += offset;
    return g.constant(Shape::mat(rows, 1), std::move(v));
  };
  ad::Var t0 = time_node(0.0);
  ad::Var th = time_node(dt / 2.0);
  ad::Var t1 = time_node(dt);
  ad::Var k1 = f(state, t0);
  ad::Var k2 = f(ad::add(state, ad::scale(k1, dt / 2.0)), th);
  ad::Var k3 = f(ad::add(state, ad::scale(k2, dt / 2.0)), th);
  ad::Var k4 = f(ad::add(state, ad::scale(k3, dt)), t1);
  ad::Var acc = ad::add(ad::add(k1, ad::scale(ad::add(k2, k3), 2.0)), k4);
  return ad::add(state, ad::scale(acc, dt / 6.0));
}

inline ad::Var rk4_step_recorded(ad::Graph& g, const RecordedRhs& f, ad::Var state, double t,
                                 double dt) {
  const std::size_t rows = state.shape().rank == 2 ? state.shape().d0 : 1;
  return rk4_step_recorded(g, f, state, std::vector<double>(rows, t), dt);
}

}  // namespace phnn::ode
