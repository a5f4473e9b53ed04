#pragma once

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "phnn/autodiff.hpp"
#include "phnn/errors.hpp"
#include "phnn/io.hpp"
#include "phnn/rng.hpp"

// The four architectures compared in the experiments, all mapping
// (q, p, t) -> (q', p'):
//   baseline  plain MLP on (q, p, t)
//   hnn       scalar H(q, p); output is the symplectic gradient
//   tdhnn     scalar H(q, p, t); same output assembly
//   phnn      stationary H(q, p) plus a force net F(t) and one damping scalar,
//             assembled as q' = dH/dp, p' = -dH/dq + N*dH/dp + F(t)
//
// Weight matrices are stored (fan_in, fan_out) row-major so a batch of row
// vectors multiplies straight through; biases follow each matrix in the flat
// parameter vector. The phnn damping scalar is the final entry.

namespace phnn::model {

using ad::Graph;
using ad::Var;

enum class Arch { baseline, hnn, tdhnn, phnn };
enum class Activation { tanh, sin, cos };

inline const char* arch_name(Arch a) {
  switch (a) {
    case Arch::baseline: return "baseline";
    case Arch::hnn: return "hnn";
    case Arch::tdhnn: return "tdhnn";
    case Arch::phnn: return "phnn";
  }
  return "?";
}

inline Arch arch_from_name(const std::string& name) {
  if (name == "baseline") return Arch::baseline;
  if (name == "hnn") return Arch::hnn;
  if (name == "tdhnn") return Arch::tdhnn;
  if (name == "phnn") return Arch::phnn;
  fail(errc::config, "unknown architecture '" + name + "'");
}

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::tanh: return "tanh";
    case Activation::sin: return "sin";
    case Activation::cos: return "cos";
  }
  return "?";
}

inline Activation activation_from_name(const std::string& name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "sin") return Activation::sin;
  if (name == "cos") return Activation::cos;
  fail(errc::config, "unknown activation '" + name + "'");
}

// layer widths of one MLP: {in, hidden..., out}
using NetDims = std::vector<int>;

struct ModelParams {
  Arch arch = Arch::phnn;
  int space_dim = 1;  // M
  int width = 200;
  int depth = 3;
  Activation activation = Activation::tanh;
  std::uint64_t seed = 0;
  std::vector<double> theta;

  int state_dim() const { return 2 * space_dim; }
};

inline NetDims main_net_dims(const ModelParams& mp) {
  NetDims dims;
  switch (mp.arch) {
    case Arch::baseline:
      dims.push_back(mp.state_dim() + 1);
      break;
    case Arch::hnn:
    case Arch::phnn:
      dims.push_back(mp.state_dim());
      break;
    case Arch::tdhnn:
      dims.push_back(mp.state_dim() + 1);
      break;
  }
  for (int i = 0; i < mp.depth; ++i) dims.push_back(mp.width);
  dims.push_back(mp.arch == Arch::baseline ? mp.state_dim() : 1);
  return dims;
}

inline NetDims force_net_dims(const ModelParams& mp) {
  NetDims dims{1};
  for (int i = 0; i < mp.depth; ++i) dims.push_back(mp.width);
  dims.push_back(mp.space_dim);
  return dims;
}

inline std::size_t net_param_count(const NetDims& dims) {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l)
    n += static_cast<std::size_t>(dims[l] + 1) * static_cast<std::size_t>(dims[l + 1]);
  return n;
}

inline std::size_t param_count(const ModelParams& mp) {
  std::size_t n = net_param_count(main_net_dims(mp));
  if (mp.arch == Arch::phnn) n += net_param_count(force_net_dims(mp)) + 1;
  return n;
}

inline bool has_hamiltonian(Arch a) { return a != Arch::baseline; }

// Glorot-uniform weights, zero biases, zero damping scalar.
inline ModelParams init_params(Arch arch, int space_dim, Activation activation,
                               std::uint64_t seed, int width = 200, int depth = 3) {
  if (space_dim < 1) fail(errc::config, "space_dim must be at least 1");
  if (width < 1 || depth < 1) fail(errc::config, "width and depth must be at least 1");
  ModelParams mp;
  mp.arch = arch;
  mp.space_dim = space_dim;
  mp.width = width;
  mp.depth = depth;
  mp.activation = activation;
  mp.seed = seed;
  mp.theta.reserve(param_count(mp));
  rng r(seed);
  auto init_net = [&](const NetDims& dims) {
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      const int fan_in = dims[l], fan_out = dims[l + 1];
      const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      for (int i = 0; i < fan_in * fan_out; ++i) mp.theta.push_back(r.uniform(-limit, limit));
      for (int i = 0; i < fan_out; ++i) mp.theta.push_back(0.0);
    }
  };
  init_net(main_net_dims(mp));
  if (arch == Arch::phnn) {
    init_net(force_net_dims(mp));
    mp.theta.push_back(0.0);
  }
  return mp;
}

// --- recorded (training) path ----------------------------------------------

// graph leaves for every parameter tensor, in flat-vector order
struct ParamVars {
  std::vector<Var> tensors;
  std::vector<std::size_t> offsets;  // into the flat vector
  std::size_t total = 0;
};

namespace detail {

inline void record_net(Graph& g, const NetDims& dims, const std::vector<double>& theta,
                       std::size_t& off, ParamVars& pv) {
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const auto in = static_cast<std::size_t>(dims[l]);
    const auto out = static_cast<std::size_t>(dims[l + 1]);
    pv.offsets.push_back(off);
    pv.tensors.push_back(g.leaf(Shape::mat(in, out), theta.data() + off));
    off += in * out;
    pv.offsets.push_back(off);
    pv.tensors.push_back(g.leaf(Shape::vec(out), theta.data() + off));
    off += out;
  }
}

inline Var activate(Var z, Activation act) {
  switch (act) {
    case Activation::tanh: return ad::tanh(z);
    case Activation::sin: return ad::sin(z);
    case Activation::cos: return ad::cos(z);
  }
  fail(errc::config, "bad activation");
}

// x: (B, in); tensors/offs index into pv starting at `first` tensor
inline Var mlp_recorded(Graph& g, const ParamVars& pv, std::size_t first, const NetDims& dims,
                        Activation act, Var x) {
  Var h = x;
  const std::size_t rows = x.shape().d0;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    Var w = pv.tensors[first + 2 * l];
    Var b = pv.tensors[first + 2 * l + 1];
    Var z = ad::add(ad::matmul(h, w), ad::rowbc(b, rows));
    h = (l + 2 < dims.size()) ? activate(z, act) : z;  // linear output layer
  }
  return h;
}

}  // namespace detail

inline ParamVars record_params(Graph& g, const ModelParams& mp) {
  if (mp.theta.size() != param_count(mp))
    fail(errc::config, std::string("parameter vector length ") + std::to_string(mp.theta.size()) +
                           " does not match architecture (want " +
                           std::to_string(param_count(mp)) + ")");
  ParamVars pv;
  std::size_t off = 0;
  detail::record_net(g, main_net_dims(mp), mp.theta, off, pv);
  if (mp.arch == Arch::phnn) {
    detail::record_net(g, force_net_dims(mp), mp.theta, off, pv);
    pv.offsets.push_back(off);
    pv.tensors.push_back(g.leaf(Shape::scalar(), {mp.theta[off]}));
    off += 1;
  }
  pv.total = off;
  return pv;
}

struct ForwardVars {
  Var pred;                      // (B, 2M)
  std::optional<Var> hamiltonian;  // (B, 1)
  std::optional<Var> force;        // (B, M)
  std::optional<Var> damping;      // scalar
};

// p' = -dH/dq + N * dH/dp + F(t)
inline Var assemble_port_hamiltonian(Var dhdq, Var dhdp, Var damping, Var force) {
  return ad::add(ad::add(ad::scale(dhdq, -1.0), ad::smul(damping, dhdp)), force);
}

// X: (B, 2M) grad-tracked leaf; T: (B, 1). Everything is recorded on g so a
// loss built on the result can be differentiated through the model.
inline ForwardVars forward_recorded(Graph& g, const ModelParams& mp, const ParamVars& pv, Var X,
                                    Var T) {
  const std::size_t rows = X.shape().d0;
  const auto m = static_cast<std::size_t>(mp.space_dim);
  if (X.shape().rank != 2 || X.shape().d1 != 2 * m)
    fail(errc::shape, "forward: state shape " + X.shape().str() + " does not match 2M");
  if (T.shape().rank != 2 || T.shape().d0 != rows || T.shape().d1 != 1)
    fail(errc::shape, "forward: time shape " + T.shape().str() + " must be (batch, 1)");
  const NetDims main_dims = main_net_dims(mp);

  ForwardVars out{Var{}, std::nullopt, std::nullopt, std::nullopt};
  switch (mp.arch) {
    case Arch::baseline: {
      Var input = ad::concat({X, T}, 1);
      out.pred = detail::mlp_recorded(g, pv, 0, main_dims, mp.activation, input);
      return out;
    }
    case Arch::hnn:
    case Arch::tdhnn: {
      Var input = mp.arch == Arch::hnn ? X : ad::concat({X, T}, 1);
      Var h = detail::mlp_recorded(g, pv, 0, main_dims, mp.activation, input);
      out.hamiltonian = h;
      Var grad = ad::grad_as_var(g, ad::sum(h), input);
      Var dhdq = ad::slice(grad, 0, m, 1);
      Var dhdp = ad::slice(grad, m, 2 * m, 1);
      out.pred = ad::concat({dhdp, ad::scale(dhdq, -1.0)}, 1);
      return out;
    }
    case Arch::phnn: {
      Var h = detail::mlp_recorded(g, pv, 0, main_dims, mp.activation, X);
      out.hamiltonian = h;
      Var grad = ad::grad_as_var(g, ad::sum(h), X);
      Var dhdq = ad::slice(grad, 0, m, 1);
      Var dhdp = ad::slice(grad, m, 2 * m, 1);
      const std::size_t f_first = 2 * (main_dims.size() - 1);
      Var f = detail::mlp_recorded(g, pv, f_first, force_net_dims(mp), mp.activation, T);
      Var n = pv.tensors.back();
      out.force = f;
      out.damping = n;
      out.pred = ad::concat({dhdp, assemble_port_hamiltonian(dhdq, dhdp, n, f)}, 1);
      return out;
    }
  }
  fail(errc::config, "bad architecture");
}

struct ModelOutput {
  std::vector<double> pred;            // 2M
  std::optional<double> hamiltonian;
  std::optional<std::vector<double>> force;  // M
  std::optional<double> damping;
};

// single-state convenience wrapper
inline ModelOutput forward(const ModelParams& mp, Graph& g, const std::vector<double>& q,
                           const std::vector<double>& p, double t) {
  if (static_cast<int>(q.size()) != mp.space_dim || static_cast<int>(p.size()) != mp.space_dim)
    fail(errc::shape, "forward: q and p must each have M entries");
  std::vector<double> state(q);
  state.insert(state.end(), p.begin(), p.end());
  ParamVars pv = record_params(g, mp);
  Var X = g.leaf(Shape::mat(1, state.size()), state);
  Var T = g.constant(Shape::mat(1, 1), {t});
  ForwardVars fw = forward_recorded(g, mp, pv, X, T);
  ModelOutput out;
  out.pred = fw.pred.value();
  if (fw.hamiltonian) out.hamiltonian = fw.hamiltonian->value()[0];
  if (fw.force) out.force = fw.force->value();
  if (fw.damping) out.damping = fw.damping->scalar();
  return out;
}

// --- inference path ----------------------------------------------------------
// Plain buffer arithmetic for rollouts and evaluation; no graph recording.
// Not thread-safe: copy per thread.

class InferenceModel {
 public:
  explicit InferenceModel(ModelParams mp) : mp_(std::move(mp)) {
    if (mp_.theta.size() != param_count(mp_))
      fail(errc::config, "parameter vector length does not match architecture");
    main_dims_ = main_net_dims(mp_);
    force_dims_ = force_net_dims(mp_);
    const std::size_t layers = main_dims_.size() - 1;
    act_.resize(layers + 1);
    dact_.resize(layers + 1);
    back_.resize(layers + 1);
  }

  const ModelParams& params() const { return mp_; }
  Arch arch() const { return mp_.arch; }
  int state_dim() const { return mp_.state_dim(); }

  // learned equations of motion
  void rhs(const double* y, double t, double* out) const {
    const auto m = static_cast<std::size_t>(mp_.space_dim);
    switch (mp_.arch) {
      case Arch::baseline: {
        std::vector<double>& x = scratch_;
        x.assign(y, y + 2 * m);
        x.push_back(t);
        net_forward(main_dims_, 0, x, nullptr);
        const auto& top = act_[main_dims_.size() - 1];
        for (std::size_t i = 0; i < 2 * m; ++i) out[i] = top[i];
        return;
      }
      case Arch::hnn:
      case Arch::tdhnn: {
        std::vector<double> grad;
        input_gradient(y, t, grad);
        for (std::size_t i = 0; i < m; ++i) out[i] = grad[m + i];
        for (std::size_t i = 0; i < m; ++i) out[m + i] = -grad[i];
        return;
      }
      case Arch::phnn: {
        std::vector<double> grad;
        input_gradient(y, t, grad);
        std::vector<double> f(m);
        force(t, f.data());
        const double n = damping();
        for (std::size_t i = 0; i < m; ++i) out[i] = grad[m + i];
        for (std::size_t i = 0; i < m; ++i) out[m + i] = -grad[i] + n * grad[m + i] + f[i];
        return;
      }
    }
  }

  // learned (stationary for phnn/hnn) Hamiltonian
  double hamiltonian(const double* y, double t) const {
    if (!has_hamiltonian(mp_.arch))
      fail(errc::config, std::string(arch_name(mp_.arch)) + " does not define a Hamiltonian");
    std::vector<double>& x = scratch_;
    x.assign(y, y + mp_.state_dim());
    if (mp_.arch == Arch::tdhnn) x.push_back(t);
    net_forward(main_dims_, 0, x, nullptr);
    return act_[main_dims_.size() - 1][0];
  }

  // dH/d(q,p), stationary part for phnn
  void stat_gradient(const double* y, double t, double* dhdq, double* dhdp) const {
    std::vector<double> grad;
    input_gradient(y, t, grad);
    const auto m = static_cast<std::size_t>(mp_.space_dim);
    for (std::size_t i = 0; i < m; ++i) dhdq[i] = grad[i];
    for (std::size_t i = 0; i < m; ++i) dhdp[i] = grad[m + i];
  }

  void force(double t, double* out) const {
    if (mp_.arch != Arch::phnn)
      fail(errc::config, std::string(arch_name(mp_.arch)) + " does not define a force network");
    std::vector<double>& x = scratch_;
    x.assign(1, t);
    net_forward(force_dims_, net_param_count(main_dims_), x, nullptr);
    const auto& top = act_[force_dims_.size() - 1];
    for (int i = 0; i < mp_.space_dim; ++i) out[i] = top[static_cast<std::size_t>(i)];
  }

  double damping() const {
    if (mp_.arch != Arch::phnn)
      fail(errc::config, std::string(arch_name(mp_.arch)) + " does not define a damping scalar");
    return mp_.theta.back();
  }

 private:
  // forward through one net; when dact != nullptr also caches activation
  // derivatives for the backward sweep
  void net_forward(const NetDims& dims, std::size_t theta_off, const std::vector<double>& input,
                   bool* /*unused*/) const {
    act_[0] = input;
    std::size_t off = theta_off;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      const auto in = static_cast<std::size_t>(dims[l]);
      const auto out = static_cast<std::size_t>(dims[l + 1]);
      const double* w = mp_.theta.data() + off;
      const double* b = w + in * out;
      std::vector<double>& z = act_[l + 1];
      z.assign(b, b + out);
      const std::vector<double>& a = act_[l];
      for (std::size_t i = 0; i < in; ++i) {
        const double ai = a[i];
        const double* wrow = w + i * out;
        for (std::size_t j = 0; j < out; ++j) z[j] += ai * wrow[j];
      }
      const bool last = l + 2 == dims.size();
      std::vector<double>& d = dact_[l + 1];
      d.resize(out);
      if (last) {
        for (std::size_t j = 0; j < out; ++j) d[j] = 1.0;
      } else {
        switch (mp_.activation) {
          case Activation::tanh:
            for (std::size_t j = 0; j < out; ++j) {
              const double y = std::tanh(z[j]);
              d[j] = 1.0 - y * y;
              z[j] = y;
            }
            break;
          case Activation::sin:
            for (std::size_t j = 0; j < out; ++j) {
              d[j] = std::cos(z[j]);
              z[j] = std::sin(z[j]);
            }
            break;
          case Activation::cos:
            for (std::size_t j = 0; j < out; ++j) {
              d[j] = -std::sin(z[j]);
              z[j] = std::cos(z[j]);
            }
            break;
        }
      }
      off += (in + 1) * out;
    }
  }

  // gradient of the scalar main-net output with respect to (q, p)
  void input_gradient(const double* y, double t, std::vector<double>& grad) const {
    std::vector<double>& x = scratch_;
    x.assign(y, y + mp_.state_dim());
    if (mp_.arch == Arch::tdhnn) x.push_back(t);
    net_forward(main_dims_, 0, x, nullptr);
    const std::size_t layers = main_dims_.size() - 1;
    // reverse sweep: v_l = W_l (v_{l+1} .* dact_{l+1})
    back_[layers] = {1.0};
    std::size_t off_end = net_param_count(main_dims_);
    std::size_t off = off_end;
    for (std::size_t l = layers; l-- > 0;) {
      const auto in = static_cast<std::size_t>(main_dims_[l]);
      const auto out = static_cast<std::size_t>(main_dims_[l + 1]);
      off -= (in + 1) * out;
      const double* w = mp_.theta.data() + off;
      std::vector<double>& g_out = back_[l + 1];
      const std::vector<double>& d = dact_[l + 1];
      for (std::size_t j = 0; j < out; ++j) g_out[j] *= d[j];
      std::vector<double>& g_in = back_[l];
      g_in.resize(in);
      for (std::size_t i = 0; i < in; ++i)
        g_in[i] = lin::dot(w + i * out, g_out.data(), out);
    }
    grad.assign(back_[0].begin(),
                back_[0].begin() + static_cast<std::ptrdiff_t>(mp_.state_dim()));
  }

  ModelParams mp_;
  NetDims main_dims_, force_dims_;
  mutable std::vector<std::vector<double>> act_, dact_, back_;
  mutable std::vector<double> scratch_;
};

// --- checkpoints --------------------------------------------------------------
// One JSON metadata line followed by one 17-digit decimal parameter per line.

constexpr int kCheckpointFormat = 1;

inline void save_checkpoint(const ModelParams& mp, const fs::path& path) {
  nlohmann::json meta{
      {"format", kCheckpointFormat},
      {"architecture", arch_name(mp.arch)},
      {"space_dim", mp.space_dim},
      {"width", mp.width},
      {"depth", mp.depth},
      {"activation", activation_name(mp.activation)},
      {"seed", mp.seed},
      {"param_count", mp.theta.size()},
  };
  std::string out = meta.dump() + "\n";
  for (double v : mp.theta) {
    out += fmt17(v);
    out += "\n";
  }
  write_file(path, out);
}

inline ModelParams load_checkpoint(const fs::path& path) {
  if (!fs::exists(path)) fail(errc::missing, "no checkpoint at " + path.string());
  const std::string text = read_file(path);
  const auto lines = split(text, '\n');
  if (lines.empty()) fail(errc::io, "corrupt checkpoint: empty file " + path.string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(lines[0]);
  } catch (const nlohmann::json::exception&) {
    fail(errc::io, "corrupt checkpoint header in " + path.string());
  }
  if (meta.value("format", -1) != kCheckpointFormat)
    fail(errc::io, "checkpoint format version mismatch in " + path.string());
  ModelParams mp;
  mp.arch = arch_from_name(meta.at("architecture"));
  mp.space_dim = meta.at("space_dim");
  mp.width = meta.at("width");
  mp.depth = meta.at("depth");
  mp.activation = activation_from_name(meta.at("activation"));
  mp.seed = meta.at("seed");
  const std::size_t count = meta.at("param_count");
  if (count != param_count(mp))
    fail(errc::io, "checkpoint parameter count does not match its architecture");
  mp.theta.reserve(count);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    mp.theta.push_back(parse_double(lines[i], path.string()));
  }
  if (mp.theta.size() != count)
    fail(errc::io, "corrupt checkpoint: expected " + std::to_string(count) + " parameters, found " +
                       std::to_string(mp.theta.size()));
  return mp;
}

inline ModelParams load_checkpoint(const fs::path& path, Arch expected) {
  ModelParams mp = load_checkpoint(path);
  if (mp.arch != expected)
    fail(errc::config, std::string("checkpoint holds a ") + arch_name(mp.arch) +
                           " model, expected " + arch_name(expected));
  return mp;
}

}  // namespace phnn::model
