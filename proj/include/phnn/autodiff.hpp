#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "phnn/array.hpp"
#include "phnn/errors.hpp"

// Reverse-mode automatic differentiation over dense double arrays.
//
// A Graph is an append-only tape of eagerly evaluated operations. Adjoints
// are themselves recorded as graph operations, so the gradient of an
// expression is again a differentiable expression: backward() through a
// gradient produced by grad_as_var() yields second-order derivatives. One
// level of nesting is the supported contract.

namespace phnn::ad {

enum class Op : std::uint8_t {
  constant,
  leaf,  // grad-tracked leaf (parameters and differentiated inputs)
  add,
  sub,
  mul,      // elementwise
  smul,     // scalar Var times array
  matmul,   // with transpose attributes
  sum,      // full reduction to scalar
  mean,
  square,
  abs,
  tanh,
  sin,
  cos,
  sqrt,
  scale,    // array times compile-time scalar
  concat,
  slice,
  broadcast,  // scalar -> shape
  rowbc,      // row vector -> matrix, repeated down the rows
  colsum,     // matrix -> row vector of column sums
  sign,
  recip,
  reshape,  // same data, new shape of equal size
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::constant: return "constant";
    case Op::leaf: return "leaf";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::smul: return "scalar-scale";
    case Op::matmul: return "matmul";
    case Op::sum: return "sum";
    case Op::mean: return "mean";
    case Op::square: return "square";
    case Op::abs: return "abs";
    case Op::tanh: return "tanh";
    case Op::sin: return "sin";
    case Op::cos: return "cos";
    case Op::sqrt: return "sqrt";
    case Op::scale: return "scale";
    case Op::concat: return "concat";
    case Op::slice: return "slice";
    case Op::broadcast: return "broadcast";
    case Op::rowbc: return "rowbc";
    case Op::colsum: return "colsum";
    case Op::sign: return "sign";
    case Op::recip: return "recip";
    case Op::reshape: return "reshape";
  }
  return "?";
}

struct Node {
  Op op = Op::constant;
  Shape shape;
  bool needs_grad = false;
  bool ta = false, tb = false;     // matmul transposes
  int axis = 0;                    // concat / slice
  std::size_t begin = 0, end = 0;  // slice range
  double attr = 0.0;               // scale factor
  std::vector<int> parents;
  std::vector<double> value;
};

class Graph;

struct Var {
  Graph* graph = nullptr;
  int id = -1;

  bool valid() const { return graph != nullptr && id >= 0; }
  inline const Shape& shape() const;
  inline const std::vector<double>& value() const;
  inline double scalar() const;
};

class Graph {
 public:
  // Training loops reuse one Graph: reset() returns every value buffer to a
  // size-keyed pool, so steady-state iterations allocate nothing new.
  void reset() {
    for (auto& n : nodes_) {
      if (n.value.capacity() > 0) pool_[n.value.capacity()].push_back(std::move(n.value));
    }
    nodes_.clear();
  }

  // pooled buffer of exactly n entries; contents are unspecified
  std::vector<double> alloc(std::size_t n) {
    auto it = pool_.find(n);
    if (it != pool_.end() && !it->second.empty()) {
      std::vector<double> v = std::move(it->second.back());
      it->second.pop_back();
      v.resize(n);
      return v;
    }
    return std::vector<double>(n);
  }

  Var constant(Shape shape, std::vector<double> value) {
    check_size(shape, value.size());
    return push(make_node(Op::constant, shape, std::move(value), {}, false));
  }

  Var constant(Shape shape, const double* data) {
    std::vector<double> value = alloc(shape.size());
    std::copy(data, data + shape.size(), value.begin());
    return push(make_node(Op::constant, shape, std::move(value), {}, false));
  }

  Var constant_scalar(double v) { return constant(Shape::scalar(), {v}); }

  Var zeros(Shape shape) {
    std::vector<double> value = alloc(shape.size());
    std::fill(value.begin(), value.end(), 0.0);
    return push(make_node(Op::constant, shape, std::move(value), {}, false));
  }

  // grad-tracked leaf: parameters, and inputs whose gradients feed the model
  Var leaf(Shape shape, std::vector<double> value) {
    check_size(shape, value.size());
    return push(make_node(Op::leaf, shape, std::move(value), {}, true));
  }

  Var leaf(Shape shape, const double* data) {
    std::vector<double> value = alloc(shape.size());
    std::copy(data, data + shape.size(), value.begin());
    return push(make_node(Op::leaf, shape, std::move(value), {}, true));
  }

  int size() const { return static_cast<int>(nodes_.size()); }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  static Node make_node(Op op, Shape shape, std::vector<double> value, std::vector<int> parents,
                        bool needs_grad) {
    Node n;
    n.op = op;
    n.shape = shape;
    n.value = std::move(value);
    n.parents = std::move(parents);
    n.needs_grad = needs_grad;
    return n;
  }

 private:
  static void check_size(const Shape& s, std::size_t n) {
    if (s.size() != n) fail(errc::shape, "value size does not match shape " + s.str());
  }

  // deque: references to nodes stay valid while the tape grows
  std::deque<Node> nodes_;
  std::unordered_map<std::size_t, std::vector<std::vector<double>>> pool_;
};

inline const Shape& Var::shape() const { return graph->node(id).shape; }
inline const std::vector<double>& Var::value() const { return graph->node(id).value; }
inline double Var::scalar() const {
  const Node& n = graph->node(id);
  if (n.shape.size() != 1) fail(errc::shape, "scalar() on non-scalar var " + n.shape.str());
  return n.value[0];
}

namespace detail {

inline void require_same_graph(Var a, Var b, const char* op) {
  if (a.graph != b.graph) fail(errc::config, std::string(op) + ": vars from different graphs");
}

inline bool any_needs_grad(const Graph& g, const std::vector<int>& parents) {
  for (int p : parents)
    if (g.node(p).needs_grad) return true;
  return false;
}

constexpr std::size_t kParallelElementwise = 1 << 16;

inline Var elementwise_same_shape(Graph& g, Op op, Var a, Var b) {
  require_same_graph(a, b, op_name(op));
  const Node& na = a.graph->node(a.id);
  const Node& nb = b.graph->node(b.id);
  if (na.shape != nb.shape)
    fail(errc::shape, std::string(op_name(op)) + ": shapes " + na.shape.str() + " and " +
                          nb.shape.str() + " differ");
  std::vector<double> out = g.alloc(na.value.size());
  const double* x = na.value.data();
  const double* y = nb.value.data();
  double* o = out.data();
  auto run = [&](std::size_t lo, std::size_t hi) {
    switch (op) {
      case Op::add:
        for (std::size_t i = lo; i < hi; ++i) o[i] = x[i] + y[i];
        break;
      case Op::sub:
        for (std::size_t i = lo; i < hi; ++i) o[i] = x[i] - y[i];
        break;
      case Op::mul:
        for (std::size_t i = lo; i < hi; ++i) o[i] = x[i] * y[i];
        break;
      default:
        fail(errc::config, "bad elementwise op");
    }
  };
  if (out.size() >= kParallelElementwise)
    parallel_chunks(out.size(), run);
  else
    run(0, out.size());
  std::vector<int> parents{a.id, b.id};
  const bool ng = any_needs_grad(g, parents);
  return g.push(Graph::make_node(op, na.shape, std::move(out), std::move(parents), ng));
}

inline Var unary(Graph& g, Op op, Var a, double attr = 0.0) {
  const Node& na = g.node(a.id);
  std::vector<double> out = g.alloc(na.value.size());
  const double* x = na.value.data();
  double* o = out.data();
  auto run = [&](std::size_t lo, std::size_t hi) {
    switch (op) {
      case Op::square:
        for (std::size_t i = lo; i < hi; ++i) o[i] = x[i] * x[i];
        break;
      case Op::abs:
        for (std::size_t i = lo; i < hi; ++i) o[i] = std::fabs(x[i]);
        break;
      case Op::tanh:
        for (std::size_t i = lo; i < hi; ++i) o[i] = std::tanh(x[i]);
        break;
      case Op::sin:
        for (std::size_t i = lo; i < hi; ++i) o[i] = std::sin(x[i]);
        break;
      case Op::cos:
        for (std::size_t i = lo; i < hi; ++i) o[i] = std::cos(x[i]);
        break;
      case Op::sqrt:
        for (std::size_t i = lo; i < hi; ++i) o[i] = std::sqrt(x[i]);
        break;
      case Op::scale:
        for (std::size_t i = lo; i < hi; ++i) o[i] = attr * x[i];
        break;
      case Op::sign:
        for (std::size_t i = lo; i < hi; ++i) o[i] = x[i] > 0 ? 1.0 : (x[i] < 0 ? -1.0 : 0.0);
        break;
      case Op::recip:
        for (std::size_t i = lo; i < hi; ++i) o[i] = 1.0 / x[i];
        break;
      default:
        fail(errc::config, "bad unary op");
    }
  };
  if (out.size() >= kParallelElementwise)
    parallel_chunks(out.size(), run);
  else
    run(0, out.size());
  Node n = Graph::make_node(op, na.shape, std::move(out), {a.id},
                            op == Op::sign ? false : na.needs_grad);
  n.attr = attr;
  return g.push(std::move(n));
}

// Effective rank-2 dims of a matmul operand. Vectors act as a column on the
// right-hand side and a row on the left-hand side.
inline void effective_dims(const Shape& s, bool trans, bool is_lhs, std::size_t& r,
                           std::size_t& c) {
  if (s.rank == 2) {
    r = trans ? s.d1 : s.d0;
    c = trans ? s.d0 : s.d1;
  } else if (s.rank == 1) {
    if (is_lhs) {
      r = 1;
      c = s.d0;
    } else {
      r = s.d0;
      c = 1;
    }
  } else {
    r = 1;
    c = 1;
  }
}

}  // namespace detail

inline Var add(Var a, Var b) { return detail::elementwise_same_shape(*a.graph, Op::add, a, b); }
inline Var sub(Var a, Var b) { return detail::elementwise_same_shape(*a.graph, Op::sub, a, b); }
inline Var mul(Var a, Var b) { return detail::elementwise_same_shape(*a.graph, Op::mul, a, b); }

inline Var square(Var a) { return detail::unary(*a.graph, Op::square, a); }
inline Var abs(Var a) { return detail::unary(*a.graph, Op::abs, a); }
inline Var tanh(Var a) { return detail::unary(*a.graph, Op::tanh, a); }
inline Var sin(Var a) { return detail::unary(*a.graph, Op::sin, a); }
inline Var cos(Var a) { return detail::unary(*a.graph, Op::cos, a); }
inline Var sqrt(Var a) { return detail::unary(*a.graph, Op::sqrt, a); }
inline Var sign(Var a) { return detail::unary(*a.graph, Op::sign, a); }
inline Var recip(Var a) { return detail::unary(*a.graph, Op::recip, a); }
inline Var scale(Var a, double c) { return detail::unary(*a.graph, Op::scale, a, c); }

// scalar Var times array
inline Var smul(Var s, Var x) {
  detail::require_same_graph(s, x, "scalar-scale");
  Graph& g = *s.graph;
  const Node& ns = g.node(s.id);
  const Node& nx = g.node(x.id);
  if (ns.shape.size() != 1)
    fail(errc::shape, "scalar-scale: first operand has shape " + ns.shape.str() + ", want scalar");
  const double f = ns.value[0];
  std::vector<double> out = g.alloc(nx.value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f * nx.value[i];
  std::vector<int> parents{s.id, x.id};
  const bool ng = detail::any_needs_grad(g, parents);
  return g.push(Graph::make_node(Op::smul, nx.shape, std::move(out), std::move(parents), ng));
}

inline Var sum(Var a) {
  Graph& g = *a.graph;
  const Node& na = g.node(a.id);
  double s = 0;
  for (double v : na.value) s += v;
  return g.push(Graph::make_node(Op::sum, Shape::scalar(), {s}, {a.id}, na.needs_grad));
}

inline Var mean(Var a) {
  Graph& g = *a.graph;
  const Node& na = g.node(a.id);
  double s = 0;
  for (double v : na.value) s += v;
  s /= static_cast<double>(na.value.size());
  return g.push(Graph::make_node(Op::mean, Shape::scalar(), {s}, {a.id}, na.needs_grad));
}

inline Var broadcast(Var s, Shape shape) {
  Graph& g = *s.graph;
  const Node& ns = g.node(s.id);
  if (ns.shape.size() != 1)
    fail(errc::shape, "broadcast: operand has shape " + ns.shape.str() + ", want scalar");
  std::vector<double> out = g.alloc(shape.size());
  std::fill(out.begin(), out.end(), ns.value[0]);
  return g.push(Graph::make_node(Op::broadcast, shape, std::move(out), {s.id}, ns.needs_grad));
}

// Repeat a vector of length c as the rows of an (r, c) matrix.
inline Var rowbc(Var v, std::size_t rows) {
  Graph& g = *v.graph;
  const Node& nv = g.node(v.id);
  if (nv.shape.rank != 1) fail(errc::shape, "rowbc: operand has shape " + nv.shape.str() + ", want vector");
  const std::size_t c = nv.shape.d0;
  std::vector<double> out = g.alloc(rows * c);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = nv.value[j];
  return g.push(Graph::make_node(Op::rowbc, Shape::mat(rows, c), std::move(out), {v.id}, nv.needs_grad));
}

inline Var reshape(Var a, Shape shape) {
  Graph& g = *a.graph;
  const Node& na = g.node(a.id);
  if (na.shape.size() != shape.size())
    fail(errc::shape, "reshape: " + na.shape.str() + " to " + shape.str() + " changes size");
  if (na.shape == shape) return a;
  std::vector<double> out = g.alloc(na.value.size());
  std::copy(na.value.begin(), na.value.end(), out.begin());
  return g.push(Graph::make_node(Op::reshape, shape, std::move(out), {a.id}, na.needs_grad));
}

inline Var colsum(Var m) {
  Graph& g = *m.graph;
  const Node& nm = g.node(m.id);
  if (nm.shape.rank != 2) fail(errc::shape, "colsum: operand has shape " + nm.shape.str() + ", want matrix");
  const std::size_t r = nm.shape.d0, c = nm.shape.d1;
  std::vector<double> out = g.alloc(c);
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += nm.value[i * c + j];
  return g.push(Graph::make_node(Op::colsum, Shape::vec(c), std::move(out), {m.id}, nm.needs_grad));
}

namespace detail {

inline Var matmul_impl(Var a, Var b, bool ta, bool tb, const Shape* shape_override) {
  require_same_graph(a, b, "matmul");
  Graph& g = *a.graph;
  const Node& na = g.node(a.id);
  const Node& nb = g.node(b.id);
  if ((ta && na.shape.rank != 2) || (tb && nb.shape.rank != 2))
    fail(errc::shape, "matmul: transpose of non-matrix operand");
  if (na.shape.rank == 0 || nb.shape.rank == 0)
    fail(errc::shape, "matmul: scalar operand " + na.shape.str() + " x " + nb.shape.str());
  std::size_t m, k, k2, n;
  effective_dims(na.shape, ta, true, m, k);
  effective_dims(nb.shape, tb, false, k2, n);
  if (k != k2)
    fail(errc::shape, "matmul: inner dimensions differ: " + na.shape.str() +
                          (ta ? "^T" : "") + " x " + nb.shape.str() + (tb ? "^T" : ""));
  Shape out_shape;
  if (shape_override != nullptr) {
    out_shape = *shape_override;
    if (out_shape.size() != m * n) fail(errc::shape, "matmul: bad shape override");
  } else if (na.shape.rank == 2 && nb.shape.rank == 2) {
    out_shape = Shape::mat(m, n);
  } else if (na.shape.rank == 1 && nb.shape.rank == 1) {
    out_shape = Shape::scalar();
  } else {
    out_shape = Shape::vec(na.shape.rank == 1 ? n : m);
  }
  std::vector<double> out = g.alloc(m * n);
  lin::matmul(na.value.data(), nb.value.data(), out.data(), m, k, n, ta, tb);
  std::vector<int> parents{a.id, b.id};
  const bool ng = any_needs_grad(g, parents);
  Node node = Graph::make_node(Op::matmul, out_shape, std::move(out), std::move(parents), ng);
  node.ta = ta;
  node.tb = tb;
  return g.push(std::move(node));
}

}  // namespace detail

inline Var matmul(Var a, Var b) { return detail::matmul_impl(a, b, false, false, nullptr); }

inline Var matmul_t(Var a, Var b, bool ta, bool tb, Shape shape_override) {
  return detail::matmul_impl(a, b, ta, tb, &shape_override);
}

// Concatenate along axis 0 (rows / vector entries) or axis 1 (columns).
inline Var concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) fail(errc::shape, "concat: no operands");
  Graph& g = *parts[0].graph;
  const Shape& first = g.node(parts[0].id).shape;
  for (const Var& p : parts) detail::require_same_graph(parts[0], p, "concat");
  std::vector<int> parents;
  parents.reserve(parts.size());
  for (const Var& p : parts) parents.push_back(p.id);

  Shape out_shape;
  std::vector<double> out;
  if (axis == 0) {
    if (first.rank == 1) {
      std::size_t total = 0;
      for (const Var& p : parts) {
        const Shape& s = g.node(p.id).shape;
        if (s.rank != 1) fail(errc::shape, "concat: mixed ranks, " + s.str() + " vs " + first.str());
        total += s.d0;
      }
      out_shape = Shape::vec(total);
    } else if (first.rank == 2) {
      std::size_t rows = 0;
      for (const Var& p : parts) {
        const Shape& s = g.node(p.id).shape;
        if (s.rank != 2 || s.d1 != first.d1)
          fail(errc::shape, "concat: column counts differ, " + s.str() + " vs " + first.str());
        rows += s.d0;
      }
      out_shape = Shape::mat(rows, first.d1);
    } else {
      fail(errc::shape, "concat: scalar operand");
    }
    out = g.alloc(out_shape.size());
    std::size_t off = 0;
    for (const Var& p : parts) {
      const auto& v = g.node(p.id).value;
      std::copy(v.begin(), v.end(), out.begin() + static_cast<std::ptrdiff_t>(off));
      off += v.size();
    }
  } else if (axis == 1) {
    if (first.rank != 2) fail(errc::shape, "concat along columns needs matrices, got " + first.str());
    std::size_t cols = 0;
    for (const Var& p : parts) {
      const Shape& s = g.node(p.id).shape;
      if (s.rank != 2 || s.d0 != first.d0)
        fail(errc::shape, "concat: row counts differ, " + s.str() + " vs " + first.str());
      cols += s.d1;
    }
    out_shape = Shape::mat(first.d0, cols);
    out = g.alloc(out_shape.size());
    std::size_t col_off = 0;
    for (const Var& p : parts) {
      const Node& np = g.node(p.id);
      for (std::size_t i = 0; i < np.shape.d0; ++i)
        for (std::size_t j = 0; j < np.shape.d1; ++j)
          out[i * cols + col_off + j] = np.value[i * np.shape.d1 + j];
      col_off += np.shape.d1;
    }
  } else {
    fail(errc::shape, "concat: axis must be 0 or 1");
  }
  const bool ng = detail::any_needs_grad(g, parents);
  Node node = Graph::make_node(Op::concat, out_shape, std::move(out), std::move(parents), ng);
  node.axis = axis;
  return g.push(std::move(node));
}

// Half-open range [begin, end) of rows (axis 0) or columns (axis 1).
inline Var slice(Var a, std::size_t begin, std::size_t end, int axis) {
  Graph& g = *a.graph;
  const Node& na = g.node(a.id);
  const Shape& s = na.shape;
  const std::size_t extent = axis == 0 ? s.d0 : s.d1;
  if (begin >= end || end > extent)
    fail(errc::shape, "slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                          ") out of bounds for " + s.str());
  Shape out_shape;
  std::vector<double> out;
  if (axis == 0) {
    if (s.rank == 0) fail(errc::shape, "slice: scalar operand");
    const std::size_t c = s.rank == 2 ? s.d1 : 1;
    out_shape = s.rank == 2 ? Shape::mat(end - begin, c) : Shape::vec(end - begin);
    out = g.alloc(out_shape.size());
    std::copy(na.value.begin() + static_cast<std::ptrdiff_t>(begin * c),
              na.value.begin() + static_cast<std::ptrdiff_t>(end * c), out.begin());
  } else {
    if (s.rank != 2) fail(errc::shape, "slice along columns needs a matrix, got " + s.str());
    out_shape = Shape::mat(s.d0, end - begin);
    out = g.alloc(out_shape.size());
    for (std::size_t i = 0; i < s.d0; ++i)
      for (std::size_t j = begin; j < end; ++j)
        out[i * (end - begin) + (j - begin)] = na.value[i * s.d1 + j];
  }
  Node node = Graph::make_node(Op::slice, out_shape, std::move(out), {a.id}, na.needs_grad);
  node.axis = axis;
  node.begin = begin;
  node.end = end;
  return g.push(std::move(node));
}

// ---------------------------------------------------------------------------
// Reverse pass. Adjoints are recorded as ordinary graph nodes, which makes
// every gradient differentiable in turn.

namespace detail {

inline void accumulate(Graph& g, std::vector<int>& adj, int target, Var contrib) {
  int& slot = adj[static_cast<std::size_t>(target)];
  if (slot < 0)
    slot = contrib.id;
  else
    slot = add(Var{&g, slot}, contrib).id;
}

inline Var zeros_like_parent(Graph& g, const Shape& s) { return g.zeros(s); }

struct NodeMeta {
  Op op;
  bool ta, tb;
  int axis;
  std::size_t begin, end;
  double attr;
  std::vector<int> parents;
};

// Adjoint of one node: pushes contributions into its parents.
inline void push_adjoints(Graph& g, int id, Var grad, const std::vector<char>& active,
                          std::vector<int>& adj) {
  // snapshot the metadata: recording adjoint ops may reallocate the tape
  NodeMeta snapshot;
  {
    const Node& n = g.node(id);
    snapshot = NodeMeta{n.op, n.ta, n.tb, n.axis, n.begin, n.end, n.attr, n.parents};
  }
  auto want = [&](int p) { return active[static_cast<std::size_t>(p)] != 0; };
  const auto& pr = snapshot.parents;
  switch (snapshot.op) {
    case Op::constant:
    case Op::leaf:
    case Op::sign:
      return;
    case Op::add:
      if (want(pr[0])) accumulate(g, adj, pr[0], grad);
      if (want(pr[1])) accumulate(g, adj, pr[1], grad);
      return;
    case Op::sub:
      if (want(pr[0])) accumulate(g, adj, pr[0], grad);
      if (want(pr[1])) accumulate(g, adj, pr[1], scale(grad, -1.0));
      return;
    case Op::mul:
      if (want(pr[0])) accumulate(g, adj, pr[0], mul(grad, Var{&g, pr[1]}));
      if (want(pr[1])) accumulate(g, adj, pr[1], mul(grad, Var{&g, pr[0]}));
      return;
    case Op::smul: {
      Var s{&g, pr[0]}, x{&g, pr[1]};
      if (want(pr[0])) accumulate(g, adj, pr[0], sum(mul(grad, x)));
      if (want(pr[1])) accumulate(g, adj, pr[1], smul(s, grad));
      return;
    }
    case Op::matmul: {
      // normalize everything to rank-2 views; the reshape nodes keep the
      // adjoint algebra closed under transposed matmuls
      Var a{&g, pr[0]}, b{&g, pr[1]};
      const Shape as = a.shape(), bs = b.shape();
      std::size_t m, k, k2, n;
      effective_dims(as, snapshot.ta, true, m, k);
      effective_dims(bs, snapshot.tb, false, k2, n);
      const bool ta = as.rank == 2 ? snapshot.ta : false;
      const bool tb = bs.rank == 2 ? snapshot.tb : false;
      Var a2 = as.rank == 2 ? a : reshape(a, Shape::mat(1, as.d0));
      Var b2 = bs.rank == 2 ? b : reshape(b, Shape::mat(bs.d0, 1));
      Var g2 = reshape(grad, Shape::mat(m, n));
      if (want(pr[0])) {
        Var ga = ta ? matmul_t(b2, g2, tb, true, Shape::mat(k, m))
                    : matmul_t(g2, b2, false, !tb, Shape::mat(m, k));
        accumulate(g, adj, pr[0], reshape(ga, as));
      }
      if (want(pr[1])) {
        Var gb = tb ? matmul_t(g2, a2, true, ta, Shape::mat(n, k))
                    : matmul_t(a2, g2, !ta, false, Shape::mat(k, n));
        accumulate(g, adj, pr[1], reshape(gb, bs));
      }
      return;
    }
    case Op::sum:
      if (want(pr[0])) accumulate(g, adj, pr[0], broadcast(grad, g.node(pr[0]).shape));
      return;
    case Op::mean:
      if (want(pr[0])) {
        const Shape ps = g.node(pr[0]).shape;
        accumulate(g, adj, pr[0], scale(broadcast(grad, ps), 1.0 / static_cast<double>(ps.size())));
      }
      return;
    case Op::square:
      if (want(pr[0])) accumulate(g, adj, pr[0], scale(mul(grad, Var{&g, pr[0]}), 2.0));
      return;
    case Op::abs:
      if (want(pr[0])) accumulate(g, adj, pr[0], mul(grad, sign(Var{&g, pr[0]})));
      return;
    case Op::tanh: {
      // g * (1 - tanh^2) written as g - g*y^2 so only recorded ops appear
      if (want(pr[0])) accumulate(g, adj, pr[0], sub(grad, mul(grad, square(Var{&g, id}))));
      return;
    }
    case Op::sin:
      if (want(pr[0])) accumulate(g, adj, pr[0], mul(grad, cos(Var{&g, pr[0]})));
      return;
    case Op::cos:
      if (want(pr[0])) accumulate(g, adj, pr[0], scale(mul(grad, sin(Var{&g, pr[0]})), -1.0));
      return;
    case Op::sqrt:
      if (want(pr[0])) accumulate(g, adj, pr[0], scale(mul(grad, recip(Var{&g, id})), 0.5));
      return;
    case Op::recip:
      if (want(pr[0])) accumulate(g, adj, pr[0], scale(mul(grad, square(Var{&g, id})), -1.0));
      return;
    case Op::scale:
      if (want(pr[0])) accumulate(g, adj, pr[0], scale(grad, snapshot.attr));
      return;
    case Op::broadcast:
      if (want(pr[0])) accumulate(g, adj, pr[0], sum(grad));
      return;
    case Op::rowbc:
      if (want(pr[0])) accumulate(g, adj, pr[0], colsum(grad));
      return;
    case Op::reshape:
      if (want(pr[0])) accumulate(g, adj, pr[0], reshape(grad, g.node(pr[0]).shape));
      return;
    case Op::colsum:
      if (want(pr[0])) accumulate(g, adj, pr[0], rowbc(grad, g.node(pr[0]).shape.d0));
      return;
    case Op::concat: {
      std::size_t off = 0;
      for (int p : pr) {
        const Shape ps = g.node(p).shape;
        const std::size_t len = snapshot.axis == 0 ? ps.d0 : ps.d1;
        if (want(p)) accumulate(g, adj, p, slice(grad, off, off + len, snapshot.axis));
        off += len;
      }
      return;
    }
    case Op::slice: {
      if (!want(pr[0])) return;
      const Shape ps = g.node(pr[0]).shape;
      const std::size_t extent = snapshot.axis == 0 ? ps.d0 : ps.d1;
      std::vector<Var> parts;
      if (snapshot.begin > 0) {
        Shape zs = ps;
        if (snapshot.axis == 0)
          zs.d0 = snapshot.begin;
        else
          zs.d1 = snapshot.begin;
        parts.push_back(zeros_like_parent(g, zs));
      }
      parts.push_back(grad);
      if (snapshot.end < extent) {
        Shape zs = ps;
        if (snapshot.axis == 0)
          zs.d0 = extent - snapshot.end;
        else
          zs.d1 = extent - snapshot.end;
        parts.push_back(zeros_like_parent(g, zs));
      }
      accumulate(g, adj, pr[0], parts.size() == 1 ? parts[0] : concat(parts, snapshot.axis));
      return;
    }
  }
  fail(errc::config, std::string("no differentiable adjoint for op ") + op_name(snapshot.op));
}

// Marks every node lying on a path from some wrt to out: exactly the nodes
// whose adjoints are needed.
inline std::vector<char> active_set(const Graph& g, Var out, std::span<const Var> wrts) {
  std::vector<char> active(static_cast<std::size_t>(g.size()), 0);
  for (const Var& w : wrts) {
    if (w.graph != out.graph) fail(errc::config, "gradient target from a different graph");
    active[static_cast<std::size_t>(w.id)] = 1;
  }
  for (int i = 0; i <= out.id; ++i) {
    if (active[static_cast<std::size_t>(i)]) continue;
    for (int p : g.node(i).parents) {
      if (active[static_cast<std::size_t>(p)]) {
        active[static_cast<std::size_t>(i)] = 1;
        break;
      }
    }
  }
  return active;
}

// Core reverse sweep; returns the adjoint node id per graph node (-1 = none).
inline std::vector<int> build_adjoints(Graph& g, Var out, std::span<const Var> wrts) {
  if (out.shape().rank != 0)
    fail(errc::shape, "backward: output has shape " + out.shape().str() + ", want scalar");
  std::vector<char> active = active_set(g, out, wrts);
  std::vector<int> adj(static_cast<std::size_t>(g.size()), -1);
  if (!active[static_cast<std::size_t>(out.id)]) return adj;  // out does not depend on any wrt
  adj[static_cast<std::size_t>(out.id)] = g.constant_scalar(1.0).id;
  for (int i = out.id; i >= 0; --i) {
    const int a = adj[static_cast<std::size_t>(i)];
    if (a < 0 || !active[static_cast<std::size_t>(i)]) continue;
    push_adjoints(g, i, Var{&g, a}, active, adj);
  }
  return adj;
}

}  // namespace detail

// Gradients of a scalar output with respect to each listed var.
inline std::vector<Array> backward(Graph& g, Var out, std::span<const Var> wrts) {
  const std::vector<int> adj = detail::build_adjoints(g, out, wrts);
  std::vector<Array> grads;
  grads.reserve(wrts.size());
  for (const Var& w : wrts) {
    const int a = adj[static_cast<std::size_t>(w.id)];
    if (a < 0) {
      grads.push_back(Array{w.shape(), std::vector<double>(w.shape().size(), 0.0)});
    } else {
      grads.push_back(Array{w.shape(), g.node(a).value});
    }
  }
  return grads;
}

inline Array backward(Graph& g, Var out, Var wrt) {
  const Var wrts[1] = {wrt};
  return backward(g, out, std::span<const Var>(wrts, 1))[0];
}

// The gradient as a recorded, differentiable expression.
inline Var grad_as_var(Graph& g, Var out, Var wrt) {
  const Var wrts[1] = {wrt};
  const std::vector<int> adj = detail::build_adjoints(g, out, std::span<const Var>(wrts, 1));
  const int a = adj[static_cast<std::size_t>(wrt.id)];
  if (a < 0) return g.zeros(wrt.shape());
  return Var{&g, a};
}

}  // namespace phnn::ad
