#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "phnn/autodiff.hpp"
#include "phnn/rng.hpp"
#include "testing_util.hpp"

using namespace phnn;
using namespace phnn::ad;

namespace {

std::vector<double> random_values(std::size_t n, rng& r, double lo = -2.0, double hi = 2.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = r.uniform(lo, hi);
  return v;
}

// Tiny MLP recorded by hand on leaves; weights stored (in, out).
Var tiny_mlp(Graph& g, Var x_row, Var w1, Var b1, Var w2, Var b2) {
  Var h = tanh(add(matmul(x_row, w1), rowbc(b1, x_row.shape().d0)));
  return add(matmul(h, w2), rowbc(b2, x_row.shape().d0));
}

}  // namespace

TEST_CASE("record: elementwise add") {
  Graph g;
  Var x = g.constant(Shape::vec(2), {1.0, 2.0});
  Var y = g.constant(Shape::vec(2), {10.0, 20.0});
  Var z = add(x, y);
  CHECK(z.shape() == Shape::vec(2));
  CHECK(z.value()[0] == 11.0);
  CHECK(z.value()[1] == 22.0);
}

TEST_CASE("record: matmul shapes") {
  Graph g;
  rng r(7);
  Var w = g.constant(Shape::mat(200, 2), random_values(400, r));
  Var x = g.constant(Shape::vec(2), {0.5, -1.5});
  Var y = matmul(w, x);
  CHECK(y.shape() == Shape::vec(200));
  for (std::size_t i = 0; i < 200; ++i) {
    const double expect = w.value()[2 * i] * 0.5 + w.value()[2 * i + 1] * -1.5;
    CHECK(y.value()[i] == doctest::Approx(expect).epsilon(1e-14));
  }
}

TEST_CASE("record: matmul inner-dimension mismatch names shapes and op") {
  Graph g;
  Var w = g.constant(Shape::mat(200, 2), std::vector<double>(400, 0.0));
  Var x = g.constant(Shape::vec(3), {1, 2, 3});
  try {
    matmul(w, x);
    FAIL("expected shape error");
  } catch (const error& e) {
    CHECK(e.code() == errc::shape);
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("(200,2)") != std::string::npos);
    CHECK(msg.find("(3,)") != std::string::npos);
  }
}

TEST_CASE("backward: sum of squares") {
  Graph g;
  Var x = g.leaf(Shape::vec(3), {1.0, 2.0, 3.0});
  Var out = sum(square(x));
  Array grad = backward(g, out, x);
  CHECK(grad.data == std::vector<double>{2.0, 4.0, 6.0});
}

TEST_CASE("backward: tanh(w.x) at w=0 gives x") {
  Graph g;
  Var w = g.leaf(Shape::vec(3), {0.0, 0.0, 0.0});
  Var x = g.constant(Shape::vec(3), {0.3, -1.2, 0.9});
  Var out = tanh(matmul(w, x));
  CHECK(out.shape().rank == 0);
  Array grad = backward(g, out, w);
  CHECK(grad.data == std::vector<double>{0.3, -1.2, 0.9});
}

TEST_CASE("backward: non-scalar output rejected") {
  Graph g;
  Var x = g.leaf(Shape::vec(2), {1.0, 2.0});
  Var y = square(x);
  CHECK_THROWS_AS((void)backward(g, y, x), const error&);
}

TEST_CASE("backward: small MLP matches finite differences") {
  // 1 -> 2 -> 1 network, 6 parameters excluding biases-as-leaves packing
  rng r(11);
  auto loss_of = [&](const std::vector<double>& theta) {
    Graph g;
    Var x = g.constant(Shape::mat(1, 1), {0.7});
    Var w1 = g.leaf(Shape::mat(1, 2), {theta[0], theta[1]});
    Var b1 = g.leaf(Shape::vec(2), {theta[2], theta[3]});
    Var w2 = g.leaf(Shape::mat(2, 1), {theta[4], theta[5]});
    Var b2 = g.leaf(Shape::vec(1), {theta[6]});
    Var out = tiny_mlp(g, x, w1, b1, w2, b2);
    return sum(square(out)).scalar();
  };
  std::vector<double> theta = random_values(7, r);

  Graph g;
  Var x = g.constant(Shape::mat(1, 1), {0.7});
  Var w1 = g.leaf(Shape::mat(1, 2), {theta[0], theta[1]});
  Var b1 = g.leaf(Shape::vec(2), {theta[2], theta[3]});
  Var w2 = g.leaf(Shape::mat(2, 1), {theta[4], theta[5]});
  Var b2 = g.leaf(Shape::vec(1), {theta[6]});
  Var loss = sum(square(tiny_mlp(g, x, w1, b1, w2, b2)));
  const Var wrts[] = {w1, b1, w2, b2};
  auto grads = backward(g, loss, std::span<const Var>(wrts, 4));
  std::vector<double> flat;
  for (const auto& a : grads) flat.insert(flat.end(), a.data.begin(), a.data.end());

  auto fd = testutil::fd_gradient(loss_of, theta);
  CHECK(testutil::max_rel_err(flat, fd) <= 1e-5);
}

TEST_CASE("grad_as_var: separable quadratic") {
  Graph g;
  Var q = g.leaf(Shape::vec(1), {1.3});
  Var p = g.leaf(Shape::vec(1), {-0.4});
  Var h = scale(add(sum(square(q)), sum(square(p))), 0.5);
  Var dh_dp = grad_as_var(g, h, p);
  CHECK(dh_dp.value()[0] == doctest::Approx(-0.4).epsilon(1e-15));
  // second backward through the gradient: d(dH/dp)/dq = 0
  Array dq = backward(g, sum(dh_dp), q);
  CHECK(dq.data[0] == 0.0);
}

TEST_CASE("grad_as_var: agrees with backward on an MLP") {
  rng r(23);
  Graph g;
  Var x = g.leaf(Shape::mat(1, 2), random_values(2, r));
  Var w1 = g.leaf(Shape::mat(2, 8), random_values(16, r));
  Var b1 = g.leaf(Shape::vec(8), random_values(8, r));
  Var w2 = g.leaf(Shape::mat(8, 1), random_values(8, r));
  Var b2 = g.leaf(Shape::vec(1), random_values(1, r));
  Var h = sum(tiny_mlp(g, x, w1, b1, w2, b2));
  Var grad_var = grad_as_var(g, h, x);
  Array grad_raw = backward(g, h, x);
  CHECK(testutil::max_abs_diff(grad_var.value(), grad_raw.data) <= 1e-12);
}

TEST_CASE("grad_as_var: loss containing a gradient matches finite differences") {
  rng r(31);
  const std::vector<double> xv = random_values(2, r);
  auto loss_of = [&](const std::vector<double>& theta) {
    Graph g;
    Var x = g.leaf(Shape::mat(1, 2), xv);
    Var w1 = g.leaf(Shape::mat(2, 4), {theta.begin(), theta.begin() + 8});
    Var b1 = g.leaf(Shape::vec(4), {theta.begin() + 8, theta.begin() + 12});
    Var w2 = g.leaf(Shape::mat(4, 1), {theta.begin() + 12, theta.begin() + 16});
    Var b2 = g.leaf(Shape::vec(1), {theta[16]});
    Var h = sum(tiny_mlp(g, x, w1, b1, w2, b2));
    Var grad_x = grad_as_var(g, h, x);
    Var dh_dp = slice(grad_x, 1, 2, 1);          // treat column 1 as the momentum slot
    Var target = g.constant(Shape::mat(1, 1), {0.37});
    return sum(square(sub(dh_dp, target))).scalar();
  };
  std::vector<double> theta = random_values(17, r);

  Graph g;
  Var x = g.leaf(Shape::mat(1, 2), xv);
  Var w1 = g.leaf(Shape::mat(2, 4), {theta.begin(), theta.begin() + 8});
  Var b1 = g.leaf(Shape::vec(4), {theta.begin() + 8, theta.begin() + 12});
  Var w2 = g.leaf(Shape::mat(4, 1), {theta.begin() + 12, theta.begin() + 16});
  Var b2 = g.leaf(Shape::vec(1), {theta[16]});
  Var h = sum(tiny_mlp(g, x, w1, b1, w2, b2));
  Var grad_x = grad_as_var(g, h, x);
  Var dh_dp = slice(grad_x, 1, 2, 1);
  Var target = g.constant(Shape::mat(1, 1), {0.37});
  Var loss = sum(square(sub(dh_dp, target)));
  const Var wrts[] = {w1, b1, w2, b2};
  auto grads = backward(g, loss, std::span<const Var>(wrts, 4));
  std::vector<double> flat;
  for (const auto& a : grads) flat.insert(flat.end(), a.data.begin(), a.data.end());

  auto fd = testutil::fd_gradient(loss_of, theta);
  CHECK(testutil::max_rel_err(flat, fd) <= 1e-4);
}

TEST_CASE("first-order check across every op") {
  rng r(47);
  struct OpCase {
    const char* name;
    std::function<Var(Graph&, Var, Var)> build;  // scalar from two (2,3) leaves
  };
  const std::vector<OpCase> cases = {
      {"add", [](Graph&, Var a, Var b) { return sum(add(a, b)); }},
      {"sub", [](Graph&, Var a, Var b) { return sum(sub(a, b)); }},
      {"mul", [](Graph&, Var a, Var b) { return sum(mul(a, b)); }},
      {"smul", [](Graph&, Var a, Var b) { return sum(smul(sum(a), b)); }},
      {"matmul", [](Graph&, Var a, Var b) { return sum(matmul_t(a, b, false, true, Shape::mat(2, 2))); }},
      {"sum", [](Graph&, Var a, Var) { return sum(a); }},
      {"mean", [](Graph&, Var a, Var) { return mean(a); }},
      {"square", [](Graph&, Var a, Var) { return sum(square(a)); }},
      {"abs", [](Graph&, Var a, Var) { return sum(abs(a)); }},
      {"tanh", [](Graph&, Var a, Var) { return sum(tanh(a)); }},
      {"sin", [](Graph&, Var a, Var) { return sum(sin(a)); }},
      {"cos", [](Graph&, Var a, Var) { return sum(cos(a)); }},
      {"sqrt",
       [](Graph& g, Var a, Var) {
         return sum(sqrt(add(square(a), broadcast(g.constant_scalar(1.0), a.shape()))));
       }},
      {"scale", [](Graph&, Var a, Var) { return sum(scale(a, -1.7)); }},
      {"concat0", [](Graph&, Var a, Var b) { return sum(concat({a, b}, 0)); }},
      {"concat1", [](Graph&, Var a, Var b) { return sum(square(concat({a, b}, 1))); }},
      {"slice", [](Graph&, Var a, Var) { return sum(square(slice(a, 0, 2, 1))); }},
      {"broadcast", [](Graph&, Var a, Var) { return sum(square(broadcast(mean(a), Shape::mat(3, 2)))); }},
      {"rowbc", [](Graph&, Var a, Var) { return sum(square(rowbc(colsum(a), 4))); }},
      {"recip",
       [](Graph& g, Var a, Var) {
         return sum(recip(add(square(a), broadcast(g.constant_scalar(1.0), a.shape()))));
       }},
  };
  for (const auto& oc : cases) {
    CAPTURE(oc.name);
    const std::vector<double> av = random_values(6, r);
    const std::vector<double> bv = random_values(6, r);
    auto value_of = [&](const std::vector<double>& x) {
      Graph g;
      Var a = g.leaf(Shape::mat(2, 3), {x.begin(), x.begin() + 6});
      Var b = g.leaf(Shape::mat(2, 3), {x.begin() + 6, x.end()});
      return oc.build(g, a, b).scalar();
    };
    std::vector<double> x = av;
    x.insert(x.end(), bv.begin(), bv.end());

    Graph g;
    Var a = g.leaf(Shape::mat(2, 3), av);
    Var b = g.leaf(Shape::mat(2, 3), bv);
    Var out = oc.build(g, a, b);
    const Var wrts[] = {a, b};
    auto grads = backward(g, out, std::span<const Var>(wrts, 2));
    std::vector<double> flat = grads[0].data;
    flat.insert(flat.end(), grads[1].data.begin(), grads[1].data.end());
    auto fd = testutil::fd_gradient(value_of, x);
    CHECK_MESSAGE(testutil::max_rel_err(flat, fd) <= 1e-5, oc.name);
  }
}

TEST_CASE("determinism: identical graphs give bit-identical values and gradients") {
  auto run = [] {
    rng r(99);
    Graph g;
    Var x = g.leaf(Shape::mat(4, 3), random_values(12, r));
    Var w = g.leaf(Shape::mat(3, 5), random_values(15, r));
    Var out = sum(square(tanh(matmul(x, w))));
    Array grad = backward(g, out, w);
    return std::make_pair(out.scalar(), grad.data);
  };
  auto [v1, g1] = run();
  auto [v2, g2] = run();
  CHECK(v1 == v2);
  CHECK(g1 == g2);
}

TEST_CASE("linearity of backward") {
  rng r(123);
  const double ca = 1.7, cb = -0.6;
  const std::vector<double> xv = random_values(6, r);
  Graph g;
  Var x = g.leaf(Shape::mat(2, 3), xv);
  Var f = sum(square(x));
  Var h = sum(mul(sin(x), x));
  Var combined = add(scale(f, ca), scale(h, cb));
  Array grad_combined = backward(g, combined, x);
  Array grad_f = backward(g, f, x);
  Array grad_h = backward(g, h, x);
  for (std::size_t i = 0; i < 6; ++i) {
    const double lin = ca * grad_f.data[i] + cb * grad_h.data[i];
    CHECK(std::fabs(grad_combined.data[i] - lin) <= 1e-12);
  }
}

TEST_CASE("abs subgradient at zero is zero") {
  Graph g;
  Var x = g.leaf(Shape::vec(3), {-2.0, 0.0, 2.0});
  Array grad = backward(g, sum(abs(x)), x);
  CHECK(grad.data == std::vector<double>{-1.0, 0.0, 1.0});
}

TEST_CASE("gradient of an unrelated leaf is zero") {
  Graph g;
  Var x = g.leaf(Shape::vec(2), {1.0, 2.0});
  Var y = g.leaf(Shape::vec(2), {3.0, 4.0});
  Var out = sum(square(x));
  Array grad = backward(g, out, y);
  CHECK(grad.data == std::vector<double>{0.0, 0.0});
}
