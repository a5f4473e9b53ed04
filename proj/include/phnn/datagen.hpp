#pragma once

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "phnn/errors.hpp"
#include "phnn/integrate.hpp"
#include "phnn/io.hpp"
#include "phnn/parallel.hpp"
#include "phnn/rng.hpp"
#include "phnn/systems.hpp"

// Dataset construction mirroring the per-experiment recipes: initial-condition
// samplers, high-accuracy ground-truth trajectories, optional Gaussian input
// noise (targets stay clean), and a text serialization whose bytes are the
// determinism contract.

namespace phnn::data {

constexpr int kGroundTruthSubsteps = 100;

struct SamplerSpec {
  enum class Kind { ring, box } kind = Kind::box;
  double r_min = 1.0, r_max = 4.5;              // ring
  std::vector<double> lo, hi;                   // box, per state coordinate
};

inline SamplerSpec ring_sampler(double r_min, double r_max) {
  if (!(r_min >= 0) || r_max < r_min) fail(errc::config, "ring sampler: invalid radius bounds");
  SamplerSpec s;
  s.kind = SamplerSpec::Kind::ring;
  s.r_min = r_min;
  s.r_max = r_max;
  return s;
}

inline SamplerSpec box_sampler(std::vector<double> lo, std::vector<double> hi) {
  if (lo.size() != hi.size() || lo.empty()) fail(errc::config, "box sampler: bound sizes differ");
  for (std::size_t i = 0; i < lo.size(); ++i)
    if (lo[i] > hi[i]) fail(errc::config, "box sampler: lo > hi");
  SamplerSpec s;
  s.kind = SamplerSpec::Kind::box;
  s.lo = std::move(lo);
  s.hi = std::move(hi);
  return s;
}

inline SamplerSpec box_sampler(double lo, double hi, int state_dim) {
  return box_sampler(std::vector<double>(static_cast<std::size_t>(state_dim), lo),
                     std::vector<double>(static_cast<std::size_t>(state_dim), hi));
}

// n states; ring draws radius uniform in [r_min, r_max] and angle in [0, 2pi)
inline std::vector<std::vector<double>> sample_initial_conditions(const SamplerSpec& sampler,
                                                                  int n, std::uint64_t seed,
                                                                  int state_dim = 2) {
  if (n < 1) fail(errc::config, "need at least one initial condition");
  rng r(seed);
  std::vector<std::vector<double>> out;
  out.reserve(static_cast<std::size_t>(n));
  if (sampler.kind == SamplerSpec::Kind::ring) {
    if (state_dim != 2) fail(errc::config, "ring sampler only defined for one-dimensional systems");
    for (int i = 0; i < n; ++i) {
      const double radius = r.uniform(sampler.r_min, sampler.r_max);
      const double angle = r.uniform(0.0, 6.283185307179586476925286766559);
      out.push_back({radius * std::cos(angle), radius * std::sin(angle)});
    }
  } else {
    if (static_cast<int>(sampler.lo.size()) != state_dim)
      fail(errc::config, "box sampler dimension does not match the system");
    for (int i = 0; i < n; ++i) {
      std::vector<double> state(static_cast<std::size_t>(state_dim));
      for (int j = 0; j < state_dim; ++j)
        state[static_cast<std::size_t>(j)] =
            r.uniform(sampler.lo[static_cast<std::size_t>(j)], sampler.hi[static_cast<std::size_t>(j)]);
      out.push_back(std::move(state));
    }
  }
  return out;
}

struct Dataset {
  std::string system_name;
  sys::SystemParams params;
  SamplerSpec sampler;
  std::uint64_t seed = 0;
  double dt = 0.0, t_max = 0.0;
  double noise_sigma = 0.0;
  double split_ratio = 0.0;
  std::vector<ode::Trajectory> trajectories;

  sys::SystemSpec system() const { return sys::make_system(system_name, params); }
  int space_dim() const { return system().dim(); }

  std::size_t validation_count() const {
    return static_cast<std::size_t>(
        std::ceil(split_ratio * static_cast<double>(trajectories.size())));
  }
  std::size_t training_count() const { return trajectories.size() - validation_count(); }
};

// Ground-truth trajectories with optional N(0, sigma) noise on the stored
// (q, p) inputs. Derivative targets keep the clean analytic values; the noise
// stream is separate from the initial-condition stream so targets do not
// depend on sigma.
inline Dataset build_dataset(const sys::SystemSpec& system, const SamplerSpec& sampler,
                             int n_trajectories, double dt, double t_max, double sigma,
                             std::uint64_t seed, double split_ratio = 0.0) {
  if (sigma < 0) fail(errc::config, "noise sigma must be nonnegative");
  Dataset ds;
  ds.system_name = system.name();
  ds.params = system.params();
  ds.sampler = sampler;
  ds.seed = seed;
  ds.dt = dt;
  ds.t_max = t_max;
  ds.noise_sigma = sigma;
  ds.split_ratio = split_ratio;

  const auto ics = sample_initial_conditions(sampler, n_trajectories, seed, system.state_dim());
  ds.trajectories.resize(static_cast<std::size_t>(n_trajectories));
  parallel_for(static_cast<std::size_t>(n_trajectories), [&](std::size_t i) {
    auto rhs = [&](const double* y, double t, double* d) { system.rhs(y, t, d); };
    try {
      ds.trajectories[i] = ode::integrate(rhs, ics[i], 0.0, dt, t_max, kGroundTruthSubsteps);
    } catch (const error& e) {
      fail(e.code(), "trajectory " + std::to_string(i) + ": " + e.what());
    }
  });

  if (sigma > 0) {
    rng noise(derive_seed(seed, 0x6e6f6973));  // independent noise stream
    for (auto& traj : ds.trajectories)
      for (double& x : traj.states) x += noise.gaussian(sigma);
  }
  return ds;
}

// --- serialization ----------------------------------------------------------
// A dataset is a directory: metadata.json plus one CSV per trajectory with
// header t,q...,p...,dq...,dp... and 17-significant-digit values.

inline std::string trajectory_csv(const ode::Trajectory& traj, int m) {
  std::string out = "t";
  for (int i = 0; i < m; ++i) out += ",q" + std::to_string(i);
  for (int i = 0; i < m; ++i) out += ",p" + std::to_string(i);
  for (int i = 0; i < m; ++i) out += ",dq" + std::to_string(i);
  for (int i = 0; i < m; ++i) out += ",dp" + std::to_string(i);
  out += "\n";
  for (std::size_t row = 0; row < traj.points(); ++row) {
    out += fmt17(traj.times[row]);
    const double* s = traj.state(row);
    for (std::size_t j = 0; j < traj.dim; ++j) out += "," + fmt17(s[j]);
    const double* d = traj.deriv(row);
    for (std::size_t j = 0; j < traj.dim; ++j) out += "," + fmt17(d[j]);
    out += "\n";
  }
  return out;
}

inline nlohmann::json params_to_json(const sys::SystemParams& p) {
  return nlohmann::json{{"k", p.k},        {"m", p.m},     {"nu", p.nu},   {"alpha", p.alpha},
                        {"beta", p.beta},  {"delta", p.delta}, {"gamma", p.gamma},
                        {"omega", p.omega}, {"f0", p.f0},  {"c", p.c},     {"m0", p.m0}};
}

inline sys::SystemParams params_from_json(const nlohmann::json& j) {
  sys::SystemParams p;
  p.k = j.at("k");
  p.m = j.at("m");
  p.nu = j.at("nu");
  p.alpha = j.at("alpha");
  p.beta = j.at("beta");
  p.delta = j.at("delta");
  p.gamma = j.at("gamma");
  p.omega = j.at("omega");
  p.f0 = j.at("f0");
  p.c = j.at("c");
  p.m0 = j.at("m0");
  return p;
}

inline nlohmann::json sampler_to_json(const SamplerSpec& s) {
  if (s.kind == SamplerSpec::Kind::ring)
    return nlohmann::json{{"kind", "ring"}, {"r_min", s.r_min}, {"r_max", s.r_max}};
  return nlohmann::json{{"kind", "box"}, {"lo", s.lo}, {"hi", s.hi}};
}

inline SamplerSpec sampler_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind");
  if (kind == "ring") return ring_sampler(j.at("r_min"), j.at("r_max"));
  if (kind == "box")
    return box_sampler(j.at("lo").get<std::vector<double>>(), j.at("hi").get<std::vector<double>>());
  fail(errc::io, "unknown sampler kind '" + kind + "'");
}

inline void save_dataset(const Dataset& ds, const fs::path& dir) {
  fs::create_directories(dir);
  nlohmann::json meta{
      {"format", 1},
      {"system", ds.system_name},
      {"params", params_to_json(ds.params)},
      {"sampler", sampler_to_json(ds.sampler)},
      {"seed", ds.seed},
      {"dt", ds.dt},
      {"t_max", ds.t_max},
      {"noise_sigma", ds.noise_sigma},
      {"split_ratio", ds.split_ratio},
      {"n_trajectories", ds.trajectories.size()},
  };
  write_file(dir / "metadata.json", meta.dump(2) + "\n");
  const int m = ds.space_dim();
  for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "traj_%04zu.csv", i);
    write_file(dir / name, trajectory_csv(ds.trajectories[i], m));
  }
}

inline ode::Trajectory trajectory_from_csv(const std::string& text, int m, const std::string& what) {
  ode::Trajectory traj;
  traj.dim = static_cast<std::size_t>(2 * m);
  const auto lines = split(text, '\n');
  if (lines.size() < 2) fail(errc::io, what + ": empty trajectory file");
  const std::size_t cols = 1 + 2 * traj.dim;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    if (lines[li].empty()) continue;
    const auto cells = split(lines[li], ',');
    if (cells.size() != cols) fail(errc::io, what + ": bad column count in row " + std::to_string(li));
    traj.times.push_back(parse_double(cells[0], what));
    for (std::size_t j = 0; j < traj.dim; ++j)
      traj.states.push_back(parse_double(cells[1 + j], what));
    for (std::size_t j = 0; j < traj.dim; ++j)
      traj.derivs.push_back(parse_double(cells[1 + traj.dim + j], what));
  }
  return traj;
}

inline Dataset load_dataset(const fs::path& dir) {
  const fs::path meta_path = dir / "metadata.json";
  if (!fs::exists(meta_path)) fail(errc::missing, "no dataset at " + dir.string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_file(meta_path));
  } catch (const nlohmann::json::exception& e) {
    fail(errc::io, "corrupt dataset metadata: " + std::string(e.what()));
  }
  if (meta.value("format", 0) != 1) fail(errc::io, "unsupported dataset format in " + dir.string());
  Dataset ds;
  ds.system_name = meta.at("system");
  ds.params = params_from_json(meta.at("params"));
  ds.sampler = sampler_from_json(meta.at("sampler"));
  ds.seed = meta.at("seed");
  ds.dt = meta.at("dt");
  ds.t_max = meta.at("t_max");
  ds.noise_sigma = meta.at("noise_sigma");
  ds.split_ratio = meta.at("split_ratio");
  const std::size_t n = meta.at("n_trajectories");
  const int m = ds.space_dim();
  ds.trajectories.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "traj_%04zu.csv", i);
    ds.trajectories.push_back(trajectory_from_csv(read_file(dir / name), m, name));
  }
  return ds;
}

}  // namespace phnn::data
