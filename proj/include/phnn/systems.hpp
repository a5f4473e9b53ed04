#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "phnn/errors.hpp"

// Analytic benchmark systems. Each spec carries the full time-dependent
// Hamiltonian where one exists, the stationary (conservative) part, the
// external force, a damping scalar, and a hand-coded right-hand side.
//
// Damping convention: rhs assembles as
//   q' = dH_stat/dp,   p' = -dH_stat/dq + N * dH_stat/dp + F(t)
// so a textbook friction term -delta*q' corresponds to N = -delta.

namespace phnn::sys {

struct SystemParams {
  double k = 1.0;      // spring constant
  double m = 1.0;      // mass
  double nu = 0.3;     // mass-spring damping coefficient
  double alpha = 1.0;  // quadratic potential coefficient
  double beta = 1.0;   // quartic potential coefficient
  double delta = 0.0;  // duffing damping coefficient
  double gamma = 0.2;  // drive amplitude (duffing family)
  double omega = 1.2;  // drive frequency
  double f0 = 1.0;     // drive amplitude (forced mass-spring; scales the coupled drive)
  double c = 1.0;      // speed of light
  double m0 = 1.0;     // rest mass
};

enum class SystemKind {
  mass_spring,
  damped_mass_spring,
  forced_one,
  forced_two,
  duffing,
  relativistic_duffing,
  coupled_two_body,
};

inline const std::map<std::string, SystemKind>& system_names() {
  static const std::map<std::string, SystemKind> names = {
      {"mass_spring", SystemKind::mass_spring},
      {"damped_mass_spring", SystemKind::damped_mass_spring},
      {"forced_I", SystemKind::forced_one},
      {"forced_II", SystemKind::forced_two},
      {"duffing", SystemKind::duffing},
      {"relativistic_duffing", SystemKind::relativistic_duffing},
      {"coupled_two_body", SystemKind::coupled_two_body},
  };
  return names;
}

class SystemSpec {
 public:
  SystemSpec(SystemKind kind, std::string name, SystemParams params)
      : kind_(kind), name_(std::move(name)), params_(params) {}

  SystemKind kind() const { return kind_; }
  const std::string& name() const { return name_; }
  const SystemParams& params() const { return params_; }

  // number of position coordinates
  int dim() const { return kind_ == SystemKind::coupled_two_body ? 2 : 1; }
  int state_dim() const { return 2 * dim(); }

  bool has_forcing() const {
    switch (kind_) {
      case SystemKind::forced_one:
      case SystemKind::forced_two:
      case SystemKind::duffing:
      case SystemKind::relativistic_duffing:
      case SystemKind::coupled_two_body:
        return true;
      default:
        return false;
    }
  }

  double forcing_frequency() const {
    if (!has_forcing()) fail(errc::config, name_ + " has no forcing term");
    return kind_ == SystemKind::coupled_two_body ? 1.0 : params_.omega;
  }

  // conservative time-independent part of the energy
  double stationary_hamiltonian(const double* q, const double* p) const {
    const SystemParams& c = params_;
    switch (kind_) {
      case SystemKind::mass_spring:
      case SystemKind::damped_mass_spring:
      case SystemKind::forced_one:
      case SystemKind::forced_two:
        return 0.5 * c.k * q[0] * q[0] + p[0] * p[0] / (2.0 * c.m);
      case SystemKind::duffing:
        return p[0] * p[0] / (2.0 * c.m) + c.alpha * q[0] * q[0] / 2.0 +
               c.beta * q[0] * q[0] * q[0] * q[0] / 4.0;
      case SystemKind::relativistic_duffing:
        return c.c * std::sqrt(p[0] * p[0] + c.m0 * c.m0 * c.c * c.c) +
               c.alpha * q[0] * q[0] / 2.0 + c.beta * q[0] * q[0] * q[0] * q[0] / 4.0;
      case SystemKind::coupled_two_body:
        return p[0] * p[0] / (2.0 * c.m) + p[1] * p[1] / (2.0 * c.m) + c.k * q[0] * q[0] +
               c.k * q[1] * q[1] - c.k * q[0] * q[1];
    }
    fail(errc::config, "bad system kind");
  }

  // full Hamiltonian including the forcing potential; for damped systems no
  // scalar Hamiltonian exists and this returns the conservative part
  double hamiltonian(const double* q, const double* p, double t) const {
    double h = stationary_hamiltonian(q, p);
    std::vector<double> f(static_cast<std::size_t>(dim()));
    force(t, f.data());
    for (int i = 0; i < dim(); ++i) h -= q[i] * f[i];
    return h;
  }

  // external force entering p'; one channel per momentum coordinate
  void force(double t, double* out) const {
    const SystemParams& c = params_;
    switch (kind_) {
      case SystemKind::mass_spring:
      case SystemKind::damped_mass_spring:
        out[0] = 0.0;
        return;
      case SystemKind::forced_one:
        out[0] = c.f0 * std::sin(c.omega * t);
        return;
      case SystemKind::forced_two:
        out[0] = c.f0 * std::sin(c.omega * t) * std::sin(2.0 * c.omega * t);
        return;
      case SystemKind::duffing:
      case SystemKind::relativistic_duffing:
        out[0] = c.gamma * std::sin(c.omega * t);
        return;
      case SystemKind::coupled_two_body:
        // drive acts on the first mass only
        out[0] = c.f0 * std::cos(t);
        out[1] = 0.0;
        return;
    }
    fail(errc::config, "bad system kind");
  }

  // the N scalar of the rhs decomposition (0 for undamped systems)
  double damping_coefficient() const {
    switch (kind_) {
      case SystemKind::damped_mass_spring:
        return -params_.nu;
      case SystemKind::duffing:
        return -params_.delta;
      default:
        return 0.0;
    }
  }

  // partials of the stationary Hamiltonian
  void stationary_partials(const double* q, const double* p, double* dq, double* dp) const {
    const SystemParams& c = params_;
    switch (kind_) {
      case SystemKind::mass_spring:
      case SystemKind::damped_mass_spring:
      case SystemKind::forced_one:
      case SystemKind::forced_two:
        dq[0] = c.k * q[0];
        dp[0] = p[0] / c.m;
        return;
      case SystemKind::duffing:
        dq[0] = c.alpha * q[0] + c.beta * q[0] * q[0] * q[0];
        dp[0] = p[0] / c.m;
        return;
      case SystemKind::relativistic_duffing:
        dq[0] = c.alpha * q[0] + c.beta * q[0] * q[0] * q[0];
        dp[0] = c.c * p[0] / std::sqrt(p[0] * p[0] + c.m0 * c.m0 * c.c * c.c);
        return;
      case SystemKind::coupled_two_body:
        dq[0] = 2.0 * c.k * q[0] - c.k * q[1];
        dq[1] = 2.0 * c.k * q[1] - c.k * q[0];
        dp[0] = p[0] / c.m;
        dp[1] = p[1] / c.m;
        return;
    }
    fail(errc::config, "bad system kind");
  }

  // partials of the full Hamiltonian: dH/dq picks up -F(t)
  void hamiltonian_partials(const double* q, const double* p, double t, double* dq,
                            double* dp) const {
    stationary_partials(q, p, dq, dp);
    std::vector<double> f(static_cast<std::size_t>(dim()));
    force(t, f.data());
    for (int i = 0; i < dim(); ++i) dq[i] -= f[i];
  }

  // hand-coded equations of motion; state is (q..., p...)
  void rhs(const double* state, double t, double* dstate) const {
    const SystemParams& c = params_;
    const double* q = state;
    const double* p = state + dim();
    double* qd = dstate;
    double* pd = dstate + dim();
    switch (kind_) {
      case SystemKind::mass_spring:
        qd[0] = p[0] / c.m;
        pd[0] = -c.k * q[0];
        return;
      case SystemKind::damped_mass_spring:
        qd[0] = p[0] / c.m;
        pd[0] = -c.k * q[0] - c.nu * p[0] / c.m;
        return;
      case SystemKind::forced_one:
        qd[0] = p[0] / c.m;
        pd[0] = -c.k * q[0] + c.f0 * std::sin(c.omega * t);
        return;
      case SystemKind::forced_two:
        qd[0] = p[0] / c.m;
        pd[0] = -c.k * q[0] + c.f0 * std::sin(c.omega * t) * std::sin(2.0 * c.omega * t);
        return;
      case SystemKind::duffing:
        qd[0] = p[0] / c.m;
        pd[0] = -c.alpha * q[0] - c.beta * q[0] * q[0] * q[0] - c.delta * p[0] / c.m +
                c.gamma * std::sin(c.omega * t);
        return;
      case SystemKind::relativistic_duffing:
        qd[0] = c.c * p[0] / std::sqrt(p[0] * p[0] + c.m0 * c.m0 * c.c * c.c);
        pd[0] = -c.alpha * q[0] - c.beta * q[0] * q[0] * q[0] + c.gamma * std::sin(c.omega * t);
        return;
      case SystemKind::coupled_two_body:
        qd[0] = p[0] / c.m;
        qd[1] = p[1] / c.m;
        pd[0] = -2.0 * c.k * q[0] + c.k * q[1] + c.f0 * std::cos(t);
        pd[1] = -2.0 * c.k * q[1] + c.k * q[0];
        return;
    }
    fail(errc::config, "bad system kind");
  }

 private:
  SystemKind kind_;
  std::string name_;
  SystemParams params_;
};

// Paper parameter sets per system name.
inline SystemParams default_params(SystemKind kind) {
  SystemParams p;
  switch (kind) {
    case SystemKind::mass_spring:
      break;
    case SystemKind::damped_mass_spring:
      p.nu = 0.3;
      break;
    case SystemKind::forced_one:
    case SystemKind::forced_two:
      p.f0 = 1.0;
      p.omega = 3.0;
      break;
    case SystemKind::duffing:
      // non-chaotic regime; the chaotic preset overrides these
      p.alpha = -1.0;
      p.beta = 1.0;
      p.delta = 0.3;
      p.gamma = 0.2;
      p.omega = 1.2;
      break;
    case SystemKind::relativistic_duffing:
      p.alpha = 1.0;
      p.beta = 1.0;
      p.delta = 0.0;
      p.gamma = 0.2;
      p.omega = 1.2;
      p.c = 1.0;
      p.m0 = 1.0;
      break;
    case SystemKind::coupled_two_body:
      p.k = 1.0;
      p.m = 1.0;
      break;
  }
  return p;
}

inline SystemParams chaotic_duffing_params() {
  SystemParams p;
  p.alpha = 1.0;
  p.beta = 1.0;
  p.delta = 0.1;
  p.gamma = 0.39;
  p.omega = 1.4;
  return p;
}

inline SystemSpec make_system(const std::string& name, const SystemParams& params) {
  const auto& names = system_names();
  auto it = names.find(name);
  if (it == names.end()) fail(errc::config, "unknown system '" + name + "'");
  const SystemKind kind = it->second;
  if (params.m <= 0) fail(errc::config, name + ": mass must be positive");
  if (kind == SystemKind::relativistic_duffing && (params.c <= 0 || params.m0 <= 0))
    fail(errc::config, name + ": c and m0 must be positive");
  if (kind == SystemKind::duffing && params.delta < 0)
    fail(errc::config, name + ": delta must be nonnegative");
  return SystemSpec(kind, name, params);
}

inline SystemSpec make_system(const std::string& name) {
  const auto& names = system_names();
  auto it = names.find(name);
  if (it == names.end()) fail(errc::config, "unknown system '" + name + "'");
  return make_system(name, default_params(it->second));
}

// period of the external drive, 2*pi/omega
inline double duffing_period(const SystemSpec& spec) {
  const double omega = spec.forcing_frequency();
  if (omega <= 0) fail(errc::config, spec.name() + ": forcing frequency must be positive");
  return 2.0 * 3.14159265358979323846264338327950288 / omega;
}

}  // namespace phnn::sys
