#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "xsep/autodiff.hpp"
#include "xsep/gradcheck.hpp"

#include <cmath>

using namespace xsep;
using namespace xsep::ad;

namespace {

Mat scalar(Scalar v) { return Mat::Constant(1, 1, v); }

Mat random_mat(Rng& rng, int r, int c) {
  Mat m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = rng.uniform(-1.0, 1.0);
  return m;
}

}  // namespace

TEST_CASE("forward values of simple programs") {
  Graph g;
  Var w = g.input(scalar(3.0), true, "w");
  CHECK(mul(w, w).value()(0, 0) == doctest::Approx(9.0));

  Var ones = g.constant(Mat::Ones(2, 2));
  CHECK(sum_reduce(ones).value()(0, 0) == doctest::Approx(4.0));

  Mat v(1, 2);
  v << 3.0, 4.0;
  CHECK(l2_norm(g.constant(v)).value()(0, 0) == doctest::Approx(5.0));
}

TEST_CASE("backward on w*w gives 2w") {
  Graph g;
  Var w = g.input(scalar(3.0), true, "w");
  Var f = mul(w, w);
  g.backward(f);
  CHECK(w.grad()(0, 0) == doctest::Approx(6.0));
  auto grads = g.gradient_map();
  CHECK(grads.at("w")(0, 0) == doctest::Approx(6.0));
}

TEST_CASE("gradient of unreachable tensors stays zero") {
  Graph g;
  Var w = g.input(scalar(2.0), true, "w");
  Var t = g.input(scalar(5.0), true, "t");
  Var f = mul(w, w);
  g.backward(f);
  CHECK(t.grad()(0, 0) == 0.0);
}

TEST_CASE("fan-out accumulates additively: f = t + t") {
  Graph g;
  Var t = g.input(scalar(1.5), true);
  Var f = add(t, t);
  g.backward(f);
  CHECK(t.grad()(0, 0) == doctest::Approx(2.0));
}

TEST_CASE("backward requires a scalar root") {
  Graph g;
  Var t = g.input(Mat::Ones(2, 2), true);
  Var y = square(t);
  CHECK_THROWS_AS(g.backward(y), std::invalid_argument);
}

TEST_CASE("shape mismatch errors name the op and both shapes") {
  Graph g;
  Var a = g.input(Mat::Ones(2, 3), true);
  Var b = g.input(Mat::Ones(3, 2), true);
  try {
    add(a, b);
    FAIL("expected a shape error");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("add") != std::string::npos);
    CHECK(msg.find("2x3") != std::string::npos);
    CHECK(msg.find("3x2") != std::string::npos);
  }
}

TEST_CASE("non-finite values are caught at the offending op") {
  Graph g;
  Var a = g.input(scalar(-1.0), true);
  try {
    ad::sqrt(a);
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("sqrt") != std::string::npos);
  }
}

TEST_CASE("branch_mean averages and splits gradients as g/J") {
  Graph g;
  Var a = g.input(scalar(2.0), true);
  Var b = g.input(scalar(4.0), true);
  const Var branches[] = {a, b};
  Var m = branch_mean(branches);
  CHECK(m.value()(0, 0) == doctest::Approx(3.0));
  g.backward(m);
  CHECK(a.grad()(0, 0) == doctest::Approx(0.5));
  CHECK(b.grad()(0, 0) == doctest::Approx(0.5));

  // idempotent on equal inputs
  Graph h;
  Mat v = Mat::Constant(3, 2, 0.7);
  std::vector<Var> four(4, h.constant(v));
  CHECK(branch_mean(four).value() == v);

  CHECK_THROWS_AS(branch_mean(std::span<const Var>{}), std::invalid_argument);
}

TEST_CASE("branch_mean adds no trainable elements") {
  Graph g;
  Var a = g.input(Mat::Ones(2, 2), true);
  Var b = g.input(Mat::Ones(2, 2), true);
  const auto before = g.num_trainable_elements();
  const Var branches[] = {a, b};
  Var m = branch_mean(branches);
  sum_reduce(m);
  CHECK(g.num_trainable_elements() == before);
}

TEST_CASE("linearity of backward: grad(a*f + b*g)") {
  Rng rng(11);
  const Mat x0 = random_mat(rng, 3, 3);
  const Scalar ca = 2.5, cb = -1.25;

  auto grad_of = [&](auto&& make) {
    Graph g;
    Var x = g.input(x0, true);
    g.backward(make(g, x));
    return x.grad();
  };
  auto f = [](Graph&, Var x) { return sum_reduce(square(x)); };
  auto h = [](Graph&, Var x) { return sum_reduce(tanh(x)); };
  Mat gf = grad_of(f);
  Mat gh = grad_of(h);
  Mat combined = grad_of([&](Graph& g, Var x) {
    return add(scalar_mul(f(g, x), ca), scalar_mul(h(g, x), cb));
  });
  CHECK((combined - (ca * gf + cb * gh)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("matmul chain gradient matches central differences") {
  Rng rng(7);
  std::vector<Mat> inputs = {random_mat(rng, 4, 4), random_mat(rng, 4, 4)};
  const Mat probe = random_mat(rng, 4, 4);
  auto prog = [probe](Graph& g, const std::vector<Var>& in) {
    return dot(matmul(in[0], in[1]), g.constant(probe));
  };
  FdReport rep = finite_difference_check(prog, inputs, 1e-5, 1e-5);
  CHECK_MESSAGE(rep.pass, rep.summary());
}

TEST_CASE("finite differences: w^2 at w=3 and a constant program") {
  auto prog = [](Graph&, const std::vector<Var>& in) { return mul(in[0], in[0]); };
  FdReport rep = finite_difference_check(prog, {scalar(3.0)}, 1e-5, 1e-6);
  CHECK_MESSAGE(rep.pass, rep.summary());

  auto constant_prog = [](Graph& g, const std::vector<Var>& in) {
    return add(mul(in[0], g.constant(scalar(0.0))), g.constant(scalar(7.0)));
  };
  FdReport rep2 = finite_difference_check(constant_prog, {scalar(0.4)}, 1e-5, 1e-6);
  CHECK(rep2.pass);
  CHECK(rep2.max_rel_err == 0.0);
}

TEST_CASE("finite_difference_check rejects non-positive step") {
  auto prog = [](Graph&, const std::vector<Var>& in) { return sum_reduce(in[0]); };
  CHECK_THROWS_AS(finite_difference_check(prog, {scalar(1.0)}, 0.0, 1e-4),
                  std::invalid_argument);
}

TEST_CASE("slice and concat round-trip with gradient routing") {
  Graph g;
  Rng rng(3);
  Mat m = random_mat(rng, 4, 6);
  Var x = g.input(m, true);
  Var top = slice(x, 0, 0, 2, 6);
  Var bottom = slice(x, 2, 0, 2, 6);
  const Var parts[] = {top, bottom};
  Var rejoined = concat(parts, 0);
  CHECK(rejoined.value() == m);
  g.backward(sum_reduce(rejoined));
  CHECK((x.grad().array() == 1.0).all());

  CHECK_THROWS_AS(slice(x, 3, 0, 2, 6), std::invalid_argument);
}

TEST_CASE("overlap_add lays frames at t*hop and truncates") {
  Graph g;
  Mat frames(2, 4);
  frames << 1, 1, 1, 1, 2, 2, 2, 2;
  Var f = g.input(frames, true);
  Var out = overlap_add(f, 2, 6);
  Mat expect(1, 6);
  expect << 1, 1, 3, 3, 2, 2;
  CHECK(out.value() == expect);
  g.backward(dot(out, g.constant(Mat::Ones(1, 6))));
  CHECK((f.grad().array() == 1.0).all());
}

TEST_CASE("div_by_scalar clamps the denominator") {
  Graph g;
  Var num = g.input(scalar(2.0), true);
  Var tiny = g.input(scalar(1e-30), true);
  Var out = div_by_scalar(num, tiny);
  CHECK(out.value()(0, 0) == doctest::Approx(2.0 / 1e-12));
  g.backward(out);
  CHECK(tiny.grad()(0, 0) == 0.0);  // clamped: constant w.r.t. the denominator
}

TEST_CASE("every primitive passes the finite-difference suite") {
  const auto cases = run_gradient_checks(99);
  for (const auto& c : cases) {
    CAPTURE(c.name);
    CHECK_MESSAGE(c.report.pass, c.name << ": " << c.report.summary());
  }
  CHECK(all_gradient_checks_passed(cases));
}
