#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "phnn/datagen.hpp"
#include "phnn/errors.hpp"
#include "phnn/integrate.hpp"
#include "phnn/models.hpp"
#include "phnn/parallel.hpp"
#include "phnn/rng.hpp"

// Optimization of the four architectures under either the derivative-
// supervised loss
//   L = |q_hat' - q'|^2 + |p_hat' - p'|^2 + lambda_F |F|_1 + lambda_N |N|_1
// or the embedded-integrator next-state loss, plus the validation grid search
// over the two L1 weights.

namespace phnn::training {

using ad::Graph;
using ad::Var;

enum class TrainMode { derivative, embedded_rk4 };

inline const char* mode_name(TrainMode m) {
  return m == TrainMode::derivative ? "derivative" : "embedded_rk4";
}

inline TrainMode mode_from_name(const std::string& name) {
  if (name == "derivative") return TrainMode::derivative;
  if (name == "embedded_rk4") return TrainMode::embedded_rk4;
  fail(errc::config, "unknown training mode '" + name + "'");
}

struct TrainConfig {
  TrainMode mode = TrainMode::derivative;
  int iterations = 20000;
  int batch_size = 0;  // 0: full batch up to 10^4 samples, then minibatch 512
  double learning_rate = 1e-3;
  double lambda_force = 0.0;
  double lambda_damping = 0.0;
  std::uint64_t seed = 0;  // shuffle stream
  double validation_fraction = 0.0;
};

struct TrainReport {
  std::vector<double> loss_series;
  double final_validation_loss = 0.0;
  double wall_time_seconds = 0.0;
  double lambda_force = 0.0;
  double lambda_damping = 0.0;
  std::optional<double> learned_damping;
};

// --- training samples ---------------------------------------------------------
// Each trajectory of N+1 stored points contributes its first N rows, so a
// chaotic one-period set of 20 trajectories yields exactly 2000 samples.

struct SampleSet {
  int m = 1;
  std::size_t count = 0;
  std::vector<double> x;  // count x 2M, possibly noisy
  std::vector<double> t;  // count
  std::vector<double> y;  // count x 2M, clean derivative targets
};

struct PairSet {
  int m = 1;
  std::size_t count = 0;
  double dt = 0.0;
  std::vector<double> x0;  // count x 2M
  std::vector<double> t;   // count
  std::vector<double> x1;  // count x 2M
};

inline SampleSet derivative_samples(const data::Dataset& ds, std::size_t traj_begin,
                                    std::size_t traj_end) {
  SampleSet s;
  s.m = ds.space_dim();
  for (std::size_t ti = traj_begin; ti < traj_end; ++ti) {
    const auto& traj = ds.trajectories[ti];
    const std::size_t rows = traj.points() - 1;
    for (std::size_t i = 0; i < rows; ++i) {
      s.t.push_back(traj.times[i]);
      const double* st = traj.state(i);
      s.x.insert(s.x.end(), st, st + traj.dim);
      const double* d = traj.deriv(i);
      s.y.insert(s.y.end(), d, d + traj.dim);
    }
    s.count += rows;
  }
  return s;
}

inline PairSet embedded_pairs(const data::Dataset& ds, std::size_t traj_begin,
                              std::size_t traj_end) {
  PairSet s;
  s.m = ds.space_dim();
  s.dt = ds.dt;
  for (std::size_t ti = traj_begin; ti < traj_end; ++ti) {
    const auto& traj = ds.trajectories[ti];
    for (std::size_t i = 0; i + 1 < traj.points(); ++i) {
      s.t.push_back(traj.times[i]);
      const double* a = traj.state(i);
      s.x0.insert(s.x0.end(), a, a + traj.dim);
      const double* b = traj.state(i + 1);
      s.x1.insert(s.x1.end(), b, b + traj.dim);
      ++s.count;
    }
  }
  return s;
}

// --- losses -------------------------------------------------------------------

// squared-error terms summed over the batch and divided by the batch size;
// L1 terms enter as a batch mean for the force and |N| for the scalar
inline Var loss_derivative_mode(Graph& g, const model::ForwardVars& fw, Var target,
                                double lambda_force, double lambda_damping) {
  const auto batch = static_cast<double>(target.shape().d0);
  Var loss = ad::scale(ad::sum(ad::square(ad::sub(fw.pred, target))), 1.0 / batch);
  if (fw.force && lambda_force > 0)
    loss = ad::add(loss, ad::scale(ad::sum(ad::abs(*fw.force)), lambda_force / batch));
  if (fw.damping && lambda_damping > 0)
    loss = ad::add(loss, ad::scale(ad::abs(*fw.damping), lambda_damping));
  return loss;
}

// mean squared next-state error through one recorded RK4 step; force penalties
// average the four stage evaluations
using ForwardFn = std::function<model::ForwardVars(Var state, Var time)>;

inline Var loss_embedded_mode(Graph& g, const ForwardFn& forward, const PairSet& batch, double dt,
                              double lambda_force, double lambda_damping) {
  const auto rows = batch.count;
  const auto dim = static_cast<std::size_t>(2 * batch.m);
  Var x0 = g.leaf(Shape::mat(rows, dim), batch.x0.data());
  Var x1 = g.constant(Shape::mat(rows, dim), batch.x1.data());
  std::vector<Var> stage_forces;
  std::optional<Var> damping;
  auto rhs = [&](Var state, Var time) {
    model::ForwardVars fw = forward(state, time);
    if (fw.force) stage_forces.push_back(*fw.force);
    if (fw.damping) damping = fw.damping;
    return fw.pred;
  };
  Var next = ode::rk4_step_recorded(g, rhs, x0, batch.t, dt);
  const auto b = static_cast<double>(rows);
  Var loss = ad::scale(ad::sum(ad::square(ad::sub(next, x1))), 1.0 / b);
  if (!stage_forces.empty() && lambda_force > 0) {
    Var acc = ad::sum(ad::abs(stage_forces[0]));
    for (std::size_t i = 1; i < stage_forces.size(); ++i)
      acc = ad::add(acc, ad::sum(ad::abs(stage_forces[i])));
    loss = ad::add(loss, ad::scale(acc, lambda_force / (b * static_cast<double>(stage_forces.size()))));
  }
  if (damping && lambda_damping > 0)
    loss = ad::add(loss, ad::scale(ad::abs(*damping), lambda_damping));
  return loss;
}

// --- optimizer ------------------------------------------------------------------

class Adam {
 public:
  Adam(std::size_t n, double lr) : lr_(lr), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::vector<double>& theta, const std::vector<double>& grad) {
    ++t_;
    const double b1c = 1.0 - std::pow(kBeta1, t_);
    const double b2c = 1.0 - std::pow(kBeta2, t_);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m_[i] = kBeta1 * m_[i] + (1.0 - kBeta1) * grad[i];
      v_[i] = kBeta2 * v_[i] + (1.0 - kBeta2) * grad[i] * grad[i];
      const double mhat = m_[i] / b1c;
      const double vhat = v_[i] / b2c;
      theta[i] -= lr_ * mhat / (std::sqrt(vhat) + kEps);
    }
  }

  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

 private:
  double lr_;
  int t_ = 0;
  std::vector<double> m_, v_;
};

// --- training loop ----------------------------------------------------------------

namespace detail {

inline void gather_rows(const std::vector<double>& src, std::size_t row_len,
                        const std::vector<std::size_t>& rows, std::size_t begin, std::size_t end,
                        std::vector<double>& dst) {
  dst.clear();
  dst.reserve((end - begin) * row_len);
  for (std::size_t i = begin; i < end; ++i) {
    const double* r = src.data() + rows[i] * row_len;
    dst.insert(dst.end(), r, r + row_len);
  }
}

inline std::size_t auto_batch(std::size_t samples, int requested) {
  if (requested > 0) return static_cast<std::size_t>(requested);
  return samples > 10000 ? 512 : samples;
}

// validation losses ride the inference path; same sum-of-squares-over-count
// convention as the training objective, no penalty terms
inline double validation_loss_derivative(const model::InferenceModel& im, const SampleSet& s) {
  if (s.count == 0) return 0.0;
  const auto dim = static_cast<std::size_t>(2 * s.m);
  std::vector<double> d(dim);
  double total = 0;
  for (std::size_t i = 0; i < s.count; ++i) {
    im.rhs(s.x.data() + i * dim, s.t[i], d.data());
    for (std::size_t j = 0; j < dim; ++j) {
      const double e = d[j] - s.y[i * dim + j];
      total += e * e;
    }
  }
  return total / static_cast<double>(s.count);
}

inline double validation_loss_embedded(const model::InferenceModel& im, const PairSet& s) {
  if (s.count == 0) return 0.0;
  const auto dim = static_cast<std::size_t>(2 * s.m);
  auto rhs = [&](const double* y, double t, double* d) { im.rhs(y, t, d); };
  std::vector<double> state(dim), work;
  double total = 0;
  for (std::size_t i = 0; i < s.count; ++i) {
    state.assign(s.x0.begin() + static_cast<std::ptrdiff_t>(i * dim),
                 s.x0.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim));
    ode::rk4_step(rhs, state.data(), dim, s.t[i], s.dt, work);
    for (std::size_t j = 0; j < dim; ++j) {
      const double e = state[j] - s.x1[i * dim + j];
      total += e * e;
    }
  }
  return total / static_cast<double>(s.count);
}

}  // namespace detail

inline std::pair<model::ModelParams, TrainReport> train(const model::ModelParams& init,
                                                        const data::Dataset& ds,
                                                        const TrainConfig& cfg) {
  if (cfg.iterations < 0) fail(errc::config, "iterations must be nonnegative");
  if (cfg.learning_rate <= 0) fail(errc::config, "learning rate must be positive");
  if (ds.space_dim() != init.space_dim)
    fail(errc::config, "dataset dimension does not match the model");

  const auto start = std::chrono::steady_clock::now();
  const std::size_t n_traj = ds.trajectories.size();
  const auto n_val =
      static_cast<std::size_t>(std::ceil(cfg.validation_fraction * static_cast<double>(n_traj)));
  if (n_val >= n_traj && cfg.iterations > 0)
    fail(errc::config, "validation split leaves no training trajectories");
  const std::size_t n_train = n_traj - n_val;

  model::ModelParams mp = init;
  TrainReport report;
  report.lambda_force = cfg.lambda_force;
  report.lambda_damping = cfg.lambda_damping;
  report.loss_series.reserve(static_cast<std::size_t>(cfg.iterations));

  const bool derivative = cfg.mode == TrainMode::derivative;
  SampleSet train_samples, val_samples;
  PairSet train_pairs, val_pairs;
  std::size_t sample_count;
  if (derivative) {
    train_samples = derivative_samples(ds, 0, n_train);
    val_samples = derivative_samples(ds, n_train, n_traj);
    sample_count = train_samples.count;
  } else {
    train_pairs = embedded_pairs(ds, 0, n_train);
    val_pairs = embedded_pairs(ds, n_train, n_traj);
    sample_count = train_pairs.count;
  }
  if (sample_count == 0 && cfg.iterations > 0) fail(errc::config, "no training samples");

  const std::size_t batch = detail::auto_batch(sample_count, cfg.batch_size);
  const bool full_batch = batch >= sample_count;
  const auto dim = static_cast<std::size_t>(2 * ds.space_dim());

  Adam adam(mp.theta.size(), cfg.learning_rate);
  rng shuffle(derive_seed(cfg.seed, 0x73687566));
  std::vector<std::size_t> order(sample_count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = sample_count;  // trigger a shuffle on first minibatch

  std::vector<double> bx, bt, by, bx1;
  std::vector<double> flat_grad(mp.theta.size());
  Graph g;  // reused; the buffer pool makes steady-state iterations allocation-free
  for (int iter = 0; iter < cfg.iterations; ++iter) {
    std::size_t begin = 0, end = sample_count;
    if (!full_batch) {
      if (cursor + batch > sample_count) {
        for (std::size_t i = sample_count - 1; i > 0; --i) {
          const std::size_t j = shuffle.below(i + 1);
          std::swap(order[i], order[j]);
        }
        cursor = 0;
      }
      begin = cursor;
      end = cursor + batch;
      cursor = end;
    }

    g.reset();
    model::ParamVars pv = model::record_params(g, mp);
    Var loss;
    if (derivative) {
      detail::gather_rows(train_samples.x, dim, order, begin, end, bx);
      detail::gather_rows(train_samples.t, 1, order, begin, end, bt);
      detail::gather_rows(train_samples.y, dim, order, begin, end, by);
      const std::size_t rows = end - begin;
      Var x = g.leaf(Shape::mat(rows, dim), bx.data());
      Var t = g.constant(Shape::mat(rows, 1), bt.data());
      Var target = g.constant(Shape::mat(rows, dim), by.data());
      model::ForwardVars fw = model::forward_recorded(g, mp, pv, x, t);
      loss = loss_derivative_mode(g, fw, target, cfg.lambda_force, cfg.lambda_damping);
    } else {
      PairSet pb;
      pb.m = train_pairs.m;
      pb.dt = train_pairs.dt;
      pb.count = end - begin;
      detail::gather_rows(train_pairs.x0, dim, order, begin, end, pb.x0);
      detail::gather_rows(train_pairs.t, 1, order, begin, end, pb.t);
      detail::gather_rows(train_pairs.x1, dim, order, begin, end, pb.x1);
      auto fwd = [&](Var state, Var time) { return model::forward_recorded(g, mp, pv, state, time); };
      loss = loss_embedded_mode(g, fwd, pb, pb.dt, cfg.lambda_force, cfg.lambda_damping);
    }

    const double loss_value = loss.scalar();
    if (!std::isfinite(loss_value))
      fail(errc::numeric, "loss became non-finite at iteration " + std::to_string(iter));
    report.loss_series.push_back(loss_value);

    auto grads = ad::backward(g, loss, std::span<const Var>(pv.tensors.data(), pv.tensors.size()));
    std::fill(flat_grad.begin(), flat_grad.end(), 0.0);
    for (std::size_t k = 0; k < grads.size(); ++k)
      std::copy(grads[k].data.begin(), grads[k].data.end(),
                flat_grad.begin() + static_cast<std::ptrdiff_t>(pv.offsets[k]));
    adam.step(mp.theta, flat_grad);
  }

  model::InferenceModel im(mp);
  if (derivative) {
    report.final_validation_loss = detail::validation_loss_derivative(
        im, val_samples.count > 0 ? val_samples : train_samples);
  } else {
    report.final_validation_loss =
        detail::validation_loss_embedded(im, val_pairs.count > 0 ? val_pairs : train_pairs);
  }
  if (mp.arch == model::Arch::phnn) report.learned_damping = mp.theta.back();
  report.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {std::move(mp), std::move(report)};
}

// --- grid search ------------------------------------------------------------------

struct GridCell {
  double lambda_force = 0.0;
  double lambda_damping = 0.0;
  double validation_loss = 0.0;
  bool failed = false;
  std::string message;
};

struct GridSearchResult {
  double best_lambda_force = 0.0;
  double best_lambda_damping = 0.0;
  std::vector<GridCell> cells;
};

inline std::vector<double> default_lambda_grid() { return {1e-2, 1e-4, 1e-6, 1e-8}; }

// lowest validation loss wins; ties prefer the stronger penalty (larger
// lambda_F, then larger lambda_N)
inline std::size_t select_best(const std::vector<GridCell>& cells) {
  std::size_t best = cells.size();
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (cells[i].failed) continue;
    if (best == cells.size()) {
      best = i;
      continue;
    }
    const GridCell& b = cells[best];
    const GridCell& c = cells[i];
    const bool better =
        c.validation_loss < b.validation_loss ||
        (c.validation_loss == b.validation_loss &&
         (c.lambda_force > b.lambda_force ||
          (c.lambda_force == b.lambda_force && c.lambda_damping > b.lambda_damping)));
    if (better) best = i;
  }
  if (best == cells.size()) fail(errc::numeric, "every grid-search cell failed");
  return best;
}

inline GridSearchResult grid_search(const std::function<model::ModelParams()>& factory,
                                    const data::Dataset& ds,
                                    const std::vector<double>& lambda_force_grid,
                                    const std::vector<double>& lambda_damping_grid,
                                    TrainConfig base, unsigned jobs = 0) {
  if (lambda_force_grid.empty() || lambda_damping_grid.empty())
    fail(errc::config, "empty lambda grid");
  if (base.validation_fraction <= 0) base.validation_fraction = 0.2;
  GridSearchResult result;
  result.cells.resize(lambda_force_grid.size() * lambda_damping_grid.size());
  parallel_for(
      result.cells.size(),
      [&](std::size_t idx) {
        GridCell& cell = result.cells[idx];
        cell.lambda_force = lambda_force_grid[idx / lambda_damping_grid.size()];
        cell.lambda_damping = lambda_damping_grid[idx % lambda_damping_grid.size()];
        TrainConfig cfg = base;
        cfg.lambda_force = cell.lambda_force;
        cfg.lambda_damping = cell.lambda_damping;
        try {
          auto [params, report] = train(factory(), ds, cfg);
          cell.validation_loss = report.final_validation_loss;
        } catch (const error& e) {
          cell.failed = true;
          cell.message = e.what();
        }
      },
      jobs);
  const std::size_t best = select_best(result.cells);
  result.best_lambda_force = result.cells[best].lambda_force;
  result.best_lambda_damping = result.cells[best].lambda_damping;
  return result;
}

}  // namespace phnn::training
