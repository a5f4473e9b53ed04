// End-to-end acceptance runs. Every case prints one PASS/FAIL line; the
// trained comparisons use the desk-scale settings (3000 iterations, width 64)
// unless ACCEPT_FULL is set in the environment, which switches to the full
// preset scale. Orderings and tolerances are identical in both modes except
// where the desk-scale relaxation is stated.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "phnn/cli.hpp"
#include "phnn/eval.hpp"
#include "phnn/train.hpp"
#include "testing_util.hpp"

using namespace phnn;
using model::Arch;

namespace {

constexpr double kPi = 3.14159265358979323846264338327950288;

bool full_scale() { return std::getenv("ACCEPT_FULL") != nullptr; }

// Desk scale drops the width to 64. The damped runs also use the fast
// 3000-iteration profile (ample for them); the minibatch presets keep the
// full 20000 iterations, which they need to converge.
void scale_config(cli::ExperimentConfig& cfg, bool keep_iterations = false) {
  if (!full_scale()) {
    const int iterations = cfg.train.iterations;
    cli::apply_fast_mode(cfg);
    if (keep_iterations) cfg.train.iterations = iterations;
  }
  cfg.jobs = 2;
}

void announce(int criterion, const std::string& name, bool pass, const std::string& detail) {
  std::printf("[ACCEPT] criterion %02d %-28s %s  %s\n", criterion, name.c_str(),
              pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3e", v);
  return buf;
}

struct TrainedModel {
  model::ModelParams params;
  training::TrainReport report;
  eval::RolloutReport rollout;
};

// the pipeline recipe run in-process: dataset, per-arch training, test rollouts
std::map<Arch, TrainedModel> run_experiment(const cli::ExperimentConfig& cfg,
                                            const std::vector<Arch>& archs) {
  const auto system = cfg.system_spec();
  auto train_set = data::build_dataset(system, cfg.sampler, cfg.n_train, cfg.dt, cfg.t_max,
                                       cfg.noise_sigma, cfg.seed_data);
  auto test_set = data::build_dataset(system, cfg.sampler, cfg.n_test, cfg.dt, cfg.t_max, 0.0,
                                      cfg.seed_data + cli::kTestSeedOffset);
  std::map<Arch, TrainedModel> out;
  for (Arch arch : archs) {
    training::TrainConfig tc = cfg.train;
    tc.seed = cfg.seed_shuffle;
    if (arch != Arch::phnn) {
      tc.lambda_force = 0.0;
      tc.lambda_damping = 0.0;
    }
    auto init = model::init_params(arch, system.dim(), cfg.activation,
                                   cli::arch_init_seed(cfg, arch), cfg.width, cfg.depth);
    auto [trained, report] = training::train(init, train_set, tc);
    model::InferenceModel im(trained);
    auto rollout = eval::evaluate_rollouts(im, test_set, std::nullopt, cfg.jobs);
    std::printf("    trained %-8s final loss %s  state mse %s  (%.0fs)\n",
                model::arch_name(arch), fmt(report.loss_series.back()).c_str(),
                fmt(rollout.state_mean).c_str(), report.wall_time_seconds);
    std::fflush(stdout);
    // smoke property on every run: the loss trend is downward
    auto median_of = [](std::vector<double> v) {
      std::sort(v.begin(), v.end());
      return v[v.size() / 2];
    };
    const std::size_t tenth = report.loss_series.size() / 10;
    CHECK(median_of({report.loss_series.end() - tenth, report.loss_series.end()}) <
          median_of({report.loss_series.begin(), report.loss_series.begin() + tenth}));
    out.emplace(arch, TrainedModel{std::move(trained), std::move(report), std::move(rollout)});
  }
  return out;
}

}  // namespace

TEST_CASE("criterion 01: gradients match finite differences") {
  bool pass = true;
  double worst = 0;
  auto system = sys::make_system("mass_spring");
  auto ds = data::build_dataset(system, data::ring_sampler(1.0, 2.0), 2, 0.1, 0.6, 0.0, 19);
  for (Arch arch : {Arch::baseline, Arch::hnn, Arch::tdhnn, Arch::phnn}) {
    for (training::TrainMode mode :
         {training::TrainMode::derivative, training::TrainMode::embedded_rk4}) {
      model::ModelParams mp = model::init_params(arch, 1, model::Activation::tanh, 23, 4, 3);
      rng r(29);
      for (auto& v : mp.theta) v += r.uniform(-0.3, 0.3);
      const double lf = 1e-2, ln = 1e-2;

      auto loss_and_grad = [&](const model::ModelParams& probe,
                               std::vector<double>* grad) -> double {
        ad::Graph g;
        auto pv = model::record_params(g, probe);
        ad::Var loss;
        if (mode == training::TrainMode::derivative) {
          auto s = training::derivative_samples(ds, 0, ds.trajectories.size());
          const std::size_t rows = 6;
          ad::Var x = g.leaf(Shape::mat(rows, 2), s.x.data());
          ad::Var t = g.constant(Shape::mat(rows, 1), s.t.data());
          ad::Var y = g.constant(Shape::mat(rows, 2), s.y.data());
          auto fw = model::forward_recorded(g, probe, pv, x, t);
          loss = training::loss_derivative_mode(g, fw, y, lf, ln);
        } else {
          auto s = training::embedded_pairs(ds, 0, ds.trajectories.size());
          training::PairSet batch;
          batch.m = s.m;
          batch.dt = s.dt;
          batch.count = 6;
          batch.x0.assign(s.x0.begin(), s.x0.begin() + 12);
          batch.t.assign(s.t.begin(), s.t.begin() + 6);
          batch.x1.assign(s.x1.begin(), s.x1.begin() + 12);
          auto fwd = [&](ad::Var state, ad::Var time) {
            return model::forward_recorded(g, probe, pv, state, time);
          };
          loss = training::loss_embedded_mode(g, fwd, batch, batch.dt, lf, ln);
        }
        if (grad) {
          auto grads = ad::backward(
              g, loss, std::span<const ad::Var>(pv.tensors.data(), pv.tensors.size()));
          grad->assign(probe.theta.size(), 0.0);
          for (std::size_t k = 0; k < grads.size(); ++k)
            std::copy(grads[k].data.begin(), grads[k].data.end(),
                      grad->begin() + static_cast<std::ptrdiff_t>(pv.offsets[k]));
        }
        return loss.scalar();
      };

      std::vector<double> analytic;
      loss_and_grad(mp, &analytic);
      auto fd = testutil::fd_gradient(
          [&](const std::vector<double>& theta) {
            model::ModelParams probe = mp;
            probe.theta = theta;
            return loss_and_grad(probe, nullptr);
          },
          mp.theta);
      const double err = testutil::max_rel_err(analytic, fd);
      worst = std::max(worst, err);
      if (err > 1e-4) pass = false;
    }
  }
  announce(1, "autodiff gradients", pass, "max rel err " + fmt(worst) + " (tol 1e-4)");
  CHECK(pass);
}

TEST_CASE("criterion 02: integrator order and energy drift") {
  auto rhs = [](const double* y, double, double* d) {
    d[0] = y[1];
    d[1] = -y[0];
  };
  auto err_at = [&](double dt) {
    auto traj = ode::integrate(rhs, {1.0, 0.0}, 0.0, dt, 1.0, 1);
    const double* last = traj.state(traj.points() - 1);
    return std::hypot(last[0] - std::cos(traj.times.back()),
                      last[1] + std::sin(traj.times.back()));
  };
  const double e1 = err_at(0.1), e2 = err_at(0.05), e3 = err_at(0.025);
  const double order = std::min(std::log2(e1 / e2), std::log2(e2 / e3));

  auto system = sys::make_system("mass_spring");
  auto srhs = [&](const double* y, double t, double* d) { system.rhs(y, t, d); };
  auto traj = ode::integrate(srhs, {1.5, -0.5}, 0.0, 0.05, 3.05, 100);
  const double h0 = system.stationary_hamiltonian(traj.state(0), traj.state(0) + 1);
  double drift = 0;
  for (std::size_t i = 0; i < traj.points(); ++i) {
    const double h = system.stationary_hamiltonian(traj.state(i), traj.state(i) + 1);
    drift = std::max(drift, std::fabs(h - h0) / h0);
  }
  const bool pass = order >= 3.9 && drift <= 1e-10;
  announce(2, "integrator order + drift", pass,
           "order " + fmt(order) + " (>= 3.9), drift " + fmt(drift) + " (<= 1e-10)");
  CHECK(order >= 3.9);
  CHECK(drift <= 1e-10);
}

TEST_CASE("criterion 03: hnn family is divergence-free") {
  bool pass = true;
  double worst = 0;
  const double h = 1e-5;
  for (Arch arch : {Arch::hnn, Arch::tdhnn}) {
    model::InferenceModel im(model::init_params(arch, 1, model::Activation::tanh, 21, 64, 3));
    rng r(22);
    for (int trial = 0; trial < 100; ++trial) {
      const double t = r.uniform(0, 5);
      const double q = r.uniform(-2, 2), p = r.uniform(-2, 2);
      auto rhs_at = [&](double qq, double pp, int comp) {
        const double y[2] = {qq, pp};
        double d[2];
        im.rhs(y, t, d);
        return d[comp];
      };
      const double div = (rhs_at(q + h, p, 0) - rhs_at(q - h, p, 0)) / (2 * h) +
                         (rhs_at(q, p + h, 1) - rhs_at(q, p - h, 1)) / (2 * h);
      worst = std::max(worst, std::fabs(div));
      if (std::fabs(div) > 1e-6) pass = false;
    }
  }
  announce(3, "divergence-free fields", pass, "max |div| " + fmt(worst) + " (tol 1e-6)");
  CHECK(pass);
}

TEST_CASE("criterion 04: damped mass-spring ordering and damping recovery") {
  cli::ExperimentConfig cfg = cli::preset_config("damped");
  scale_config(cfg);
  auto results = run_experiment(cfg, {Arch::phnn, Arch::hnn, Arch::tdhnn});
  const double phnn_mse = results.at(Arch::phnn).rollout.state_mean;
  const double hnn_mse = results.at(Arch::hnn).rollout.state_mean;
  const double tdhnn_mse = results.at(Arch::tdhnn).rollout.state_mean;
  const double damping = *results.at(Arch::phnn).report.learned_damping;
  const double phnn_bound = full_scale() ? 1e-4 : 1e-3;  // desk-scale relaxation per the plan
  bool pass = phnn_mse <= phnn_bound && hnn_mse >= 1e-2 && tdhnn_mse >= 1e-2 &&
              std::fabs(damping - (-0.3)) <= 0.05;
  if (full_scale()) pass = pass && hnn_mse / phnn_mse >= 100.0 && tdhnn_mse / phnn_mse >= 100.0;
  announce(4, "damped ordering + recovery", pass,
           "phnn " + fmt(phnn_mse) + " (<= " + fmt(phnn_bound) + "), hnn " + fmt(hnn_mse) +
               ", tdhnn " + fmt(tdhnn_mse) + " (>= 1e-2), damping " + fmt(damping) +
               " (target -0.3 +- 0.05)");
  CHECK(phnn_mse <= phnn_bound);
  CHECK(hnn_mse >= 1e-2);
  CHECK(tdhnn_mse >= 1e-2);
  CHECK(std::fabs(damping + 0.3) <= 0.05);
}

TEST_CASE("criterion 05: forced-system ordering and force recovery") {
  bool ordering = true;
  std::string detail;
  double force_err = 0;
  for (const char* preset : {"forced_I", "forced_II"}) {
    cli::ExperimentConfig cfg = cli::preset_config(preset);
    scale_config(cfg, /*keep_iterations=*/true);
    auto results =
        run_experiment(cfg, {Arch::phnn, Arch::baseline, Arch::hnn, Arch::tdhnn});
    const double phnn_mse = results.at(Arch::phnn).rollout.state_mean;
    for (Arch other : {Arch::baseline, Arch::hnn, Arch::tdhnn}) {
      if (!(phnn_mse < results.at(other).rollout.state_mean)) ordering = false;
    }
    detail += std::string(preset) + ": phnn " + fmt(phnn_mse) + " vs baseline " +
              fmt(results.at(Arch::baseline).rollout.state_mean) + "; ";
    if (std::string(preset) == "forced_I") {
      model::InferenceModel im(results.at(Arch::phnn).params);
      const auto n = ode::step_count(cfg.dt, cfg.t_max);
      for (std::size_t i = 0; i <= n; ++i) {
        const double t = static_cast<double>(i) * cfg.dt;
        double f;
        im.force(t, &f);
        force_err = std::max(force_err, std::fabs(f - std::sin(3.0 * t)));
      }
    }
  }
  const bool pass = ordering && force_err <= 0.1;
  announce(5, "forced ordering + recovery", pass,
           detail + "max force err " + fmt(force_err) + " (tol 0.1)");
  CHECK(ordering);
  CHECK(force_err <= 0.1);
}

TEST_CASE("criterion 06: non-chaotic duffing margins and surface invariance") {
  cli::ExperimentConfig cfg = cli::preset_config("duffing");
  scale_config(cfg, /*keep_iterations=*/true);
  auto results = run_experiment(cfg, {Arch::phnn, Arch::baseline, Arch::hnn, Arch::tdhnn});
  const double phnn_mse = results.at(Arch::phnn).rollout.state_mean;
  double best_other = 1e300;
  for (Arch other : {Arch::baseline, Arch::hnn, Arch::tdhnn})
    best_other = std::min(best_other, results.at(other).rollout.state_mean);
  model::InferenceModel im(results.at(Arch::phnn).params);
  auto s0 = eval::hamiltonian_surface(im, -2, 2, -2, 2, 101, 0.0);
  auto s1 = eval::hamiltonian_surface(im, -2, 2, -2, 2, 101, 1.0);
  const bool surface_ok = s0.values == s1.values;
  const bool pass = phnn_mse <= 1e-2 && phnn_mse * 10.0 <= best_other && surface_ok;
  announce(6, "duffing margins + surface", pass,
           "phnn " + fmt(phnn_mse) + " (<= 1e-2), best other " + fmt(best_other) +
               " (>= 10x), surface t-invariant: " + (surface_ok ? "yes" : "no"));
  CHECK(phnn_mse <= 1e-2);
  CHECK(phnn_mse * 10.0 <= best_other);
  CHECK(surface_ok);
}

TEST_CASE("criterion 07: chaotic poincare ordering") {
  cli::ExperimentConfig cfg = cli::preset_config("duffing_chaotic");
  scale_config(cfg);
  cfg.train.iterations = 20000;  // pinned by the criterion regardless of scale
  const auto system = cfg.system_spec();
  const double period = sys::duffing_period(system);

  auto train_set = data::build_dataset(system, cfg.sampler, cfg.n_train, cfg.dt, cfg.t_max, 0.0,
                                       cfg.seed_data);
  auto samples = training::derivative_samples(train_set, 0, train_set.trajectories.size());
  REQUIRE(samples.count == 2000);  // the criterion's stated training-point count

  auto test_ics = data::sample_initial_conditions(cfg.sampler, 1,
                                                  cfg.seed_data + cli::kTestSeedOffset, 2);
  const std::vector<double>& ic = test_ics[0];
  const auto n_periods = static_cast<std::size_t>(std::floor(cfg.poincare_t_max / period));
  auto truth = eval::poincare(system, ic, period, n_periods, cfg.dt);

  std::map<Arch, double> scores;
  for (Arch arch : {Arch::phnn, Arch::baseline}) {
    training::TrainConfig tc = cfg.train;
    tc.seed = cfg.seed_shuffle;
    if (arch != Arch::phnn) {
      tc.lambda_force = 0.0;
      tc.lambda_damping = 0.0;
    }
    auto init = model::init_params(arch, 1, cfg.activation, cli::arch_init_seed(cfg, arch),
                                   cfg.width, cfg.depth);
    auto [trained, report] = training::train(init, train_set, tc);
    model::InferenceModel im(trained);
    auto section = eval::poincare(im, ic, period, n_periods, cfg.dt);
    // an orbit that leaves the histogram window scores as unboundedly bad
    scores[arch] = section.histogram.total > 0 ? eval::histogram_mse(section, truth)
                                               : std::numeric_limits<double>::infinity();
    std::printf("    %-8s final loss %s  histogram mse %.4f  points %zu%s\n",
                model::arch_name(arch), fmt(report.loss_series.back()).c_str(), scores[arch],
                section.count, section.truncated ? " (truncated)" : "");
    std::fflush(stdout);
  }
  const bool pass = scores.at(Arch::phnn) < scores.at(Arch::baseline);
  announce(7, "chaotic poincare ordering", pass,
           "phnn " + fmt(scores.at(Arch::phnn)) + " < baseline " +
               fmt(scores.at(Arch::baseline)) + " at B=50 over " +
               std::to_string(n_periods) + " periods");
  CHECK(pass);
}

TEST_CASE("criterion 08: noise robustness on the damped preset") {
  cli::ExperimentConfig cfg = cli::preset_config("damped");
  scale_config(cfg);
  cfg.noise_sigma = 0.1;
  auto results = run_experiment(cfg, {Arch::phnn, Arch::baseline, Arch::hnn, Arch::tdhnn});
  const double phnn_mse = results.at(Arch::phnn).rollout.state_mean;
  bool pass = true;
  std::string detail = "phnn " + fmt(phnn_mse);
  for (Arch other : {Arch::baseline, Arch::hnn, Arch::tdhnn}) {
    const double v = results.at(other).rollout.state_mean;
    detail += std::string(", ") + model::arch_name(other) + " " + fmt(v);
    if (!(phnn_mse < v)) pass = false;
  }
  announce(8, "noise robustness (sigma 0.1)", pass, detail);
  CHECK(pass);
}

TEST_CASE("criterion 09: metric identities") {
  auto system = sys::make_system("mass_spring");
  auto rhs = [&](const double* y, double t, double* d) { system.rhs(y, t, d); };
  auto traj = ode::integrate(rhs, {1.0, 0.3}, 0.0, 0.05, 3.05, 100);
  const bool mse_ok =
      eval::mse_state(traj, traj) == 0.0 && eval::mse_energy(system, traj, traj) == 0.0;

  auto duffing = sys::make_system("duffing", sys::chaotic_duffing_params());
  const double period = sys::duffing_period(duffing);
  auto a = eval::poincare(duffing, {0.5, 0.3}, period, 60, period / 100.0);
  const bool hist_zero = eval::histogram_mse(a, a) == 0.0;

  eval::PoincareSection b, b2;
  rng r(17);
  for (int i = 0; i < 120; ++i) {
    b.points.push_back(r.uniform(-2, 2));
    b.points.push_back(r.uniform(-2, 2));
  }
  b.count = 120;
  b2.points = b.points;
  b2.points.insert(b2.points.end(), b.points.begin(), b.points.end());
  b2.count = 240;
  b.histogram = eval::build_histogram(b.points, b.count);
  b2.histogram = eval::build_histogram(b2.points, b2.count);
  const bool dup_ok =
      std::fabs(eval::histogram_mse(a, b) - eval::histogram_mse(a, b2)) <= 1e-12;

  auto periodic = eval::poincare(system, {1.2, 0.0}, 2.0 * kPi, 5, 2.0 * kPi / 1000.0);
  bool point_ok = true;
  for (std::size_t k = 0; k < periodic.count; ++k) {
    if (std::fabs(periodic.points[2 * k] - 1.2) > 1e-8 ||
        std::fabs(periodic.points[2 * k + 1]) > 1e-8)
      point_ok = false;
  }
  const bool pass = mse_ok && hist_zero && dup_ok && point_ok;
  announce(9, "metric identities", pass,
           std::string("mse zero: ") + (mse_ok ? "yes" : "no") + ", histogram zero: " +
               (hist_zero ? "yes" : "no") + ", duplication invariant: " + (dup_ok ? "yes" : "no") +
               ", periodic collapse: " + (point_ok ? "yes" : "no"));
  CHECK(pass);
}

TEST_CASE("criterion 10: pipeline determinism") {
  auto make_cfg = [&](const std::string& out) {
    cli::ExperimentConfig cfg = cli::preset_config("mass_spring");
    cli::apply_fast_mode(cfg);
    cfg.train.iterations = 300;  // flag-style override; determinism is scale-free
    cfg.architectures = {Arch::phnn};
    cfg.jobs = 2;
    cfg.out_dir = out;
    return cfg;
  };
  const fs::path out1 = fs::temp_directory_path() / "phnn_accept_det1";
  const fs::path out2 = fs::temp_directory_path() / "phnn_accept_det2";
  fs::remove_all(out1);
  fs::remove_all(out2);
  cli::run_pipeline(make_cfg(out1.string()));
  cli::run_pipeline(make_cfg(out2.string()));
  const std::string m1 = read_file(out1 / "manifest.json");
  const std::string m2 = read_file(out2 / "manifest.json");
  const bool pass = !m1.empty() && m1 == m2;
  announce(10, "pipeline determinism", pass,
           pass ? "manifests byte-identical across reruns" : "manifest mismatch");
  CHECK(pass);
  fs::remove_all(out1);
  fs::remove_all(out2);
}
