#include <doctest.h>

#include <cmath>

#include "nlos/rng.hpp"
#include "nlos/tape.hpp"

using namespace nlos;
using namespace nlos::ad;

namespace {

// Central finite difference of a scalar tape output with respect to one Var
// leaf entry, by rebuilding the graph at perturbed leaf values.
template <class Builder>
double fd_leaf(const Builder& build, MatX<double> leaf, Eigen::Index i, Eigen::Index j,
               double h = 1e-6) {
  MatX<double> plus = leaf, minus = leaf;
  plus(i, j) += h;
  minus(i, j) -= h;
  return (build(plus) - build(minus)) / (2 * h);
}

}  // namespace

TEST_CASE("record computes forward values") {
  TapeD tape;
  int x = tape.variable(2.0);
  int y = tape.variable(3.0);
  CHECK(tape.scalar(tape.record(OpKind::Add, x, y)) == doctest::Approx(5.0));
  int z = tape.variable(0.0);
  CHECK(tape.scalar(tape.record(OpKind::Sigmoid, z)) == doctest::Approx(0.5));
}

TEST_CASE("division by zero trips the finite guard") {
  TapeD tape;
  int one = tape.variable(1.0);
  int zero = tape.variable(0.0);
  CHECK_THROWS_AS(tape.div(one, zero), NlosError);
}

TEST_CASE("backward on simple graphs") {
  {
    TapeD tape;
    int x = tape.variable(3.0);
    int y = tape.square(x);
    tape.backward(y);
    CHECK(tape.grad_of(x)(0, 0) == doctest::Approx(6.0));
  }
  {
    TapeD tape;
    int x = tape.variable(0.0);
    int y = tape.sigmoid(x);
    tape.backward(y);
    CHECK(tape.grad_of(x)(0, 0) == doctest::Approx(0.25));
  }
  {
    // y = sum_i w_i x_i: dy/dw_i == x_i exactly.
    TapeD tape;
    MatX<double> wv(1, 4), xv(4, 1);
    wv << 1.0, -2.0, 0.5, 3.0;
    xv << 4.0, 5.0, -6.0, 7.0;
    int w = tape.variable(wv);
    int x = tape.constant(xv);
    int b = tape.constant(MatX<double>::Zero(1, 1));
    int y = tape.affine(w, x, b);
    tape.backward(y);
    MatX<double> g = tape.grad_of(w);
    for (int i = 0; i < 4; ++i) CHECK(g(0, i) == xv(i, 0));
  }
}

TEST_CASE("backward requires a scalar output") {
  TapeD tape;
  int x = tape.variable(MatX<double>::Ones(2, 2));
  int y = tape.square(x);
  CHECK_THROWS_AS(tape.backward(y), NlosError);
}

TEST_CASE("unary primitives match analytic derivatives at random points") {
  Rng rng(17);
  struct Case {
    OpKind kind;
    double lo, hi;
    std::function<double(double)> dfdx;
  };
  std::vector<Case> cases = {
      {OpKind::Neg, -3, 3, [](double) { return -1.0; }},
      {OpKind::Exp, -3, 3, [](double x) { return std::exp(x); }},
      {OpKind::Log, 0.1, 5, [](double x) { return 1.0 / x; }},
      {OpKind::Sin, -3, 3, [](double x) { return std::cos(x); }},
      {OpKind::Cos, -3, 3, [](double x) { return -std::sin(x); }},
      {OpKind::Sigmoid, -5, 5,
       [](double x) {
         double s = 1.0 / (1.0 + std::exp(-x));
         return s * (1.0 - s);
       }},
      {OpKind::Relu, 0.05, 5, [](double) { return 1.0; }},
      {OpKind::Abs, 0.05, 5, [](double) { return 1.0; }},
      {OpKind::Sqrt, 0.1, 5, [](double x) { return 0.5 / std::sqrt(x); }},
      {OpKind::Square, -3, 3, [](double x) { return 2.0 * x; }},
  };
  for (const Case& c : cases) {
    for (int i = 0; i < 1000; ++i) {
      double x = rng.uniform(c.lo, c.hi);
      TapeD tape;
      int xn = tape.variable(x);
      int y = tape.record(c.kind, xn);
      tape.backward(y);
      double got = tape.grad_of(xn)(0, 0);
      double want = c.dfdx(x);
      CHECK(std::abs(got - want) <= 1e-10 * (std::abs(want) + 1.0));
    }
  }
  // Negative branches of relu/abs.
  for (int i = 0; i < 100; ++i) {
    double x = rng.uniform(-5.0, -0.05);
    TapeD tape;
    int xn = tape.variable(x);
    tape.backward(tape.relu(xn));
    CHECK(tape.grad_of(xn)(0, 0) == 0.0);
    TapeD tape2;
    int xn2 = tape2.variable(x);
    tape2.backward(tape2.abs(xn2));
    CHECK(tape2.grad_of(xn2)(0, 0) == -1.0);
  }
}

TEST_CASE("softplus follows sigmoid(beta x)") {
  Rng rng(19);
  for (int i = 0; i < 1000; ++i) {
    double x = rng.uniform(-0.2, 0.2);
    double beta = 100.0;
    TapeD tape;
    int xn = tape.variable(x);
    tape.backward(tape.softplus(xn, beta));
    double want = 1.0 / (1.0 + std::exp(-beta * x));
    CHECK(tape.grad_of(xn)(0, 0) == doctest::Approx(want).epsilon(1e-10));
  }
}

TEST_CASE("binary primitives match analytic derivatives") {
  Rng rng(23);
  for (int i = 0; i < 1000; ++i) {
    double a = rng.uniform(-2.0, 2.0);
    double b = rng.uniform(0.5, 2.5) * (rng.below(2) ? 1.0 : -1.0);
    {
      TapeD tape;
      int an = tape.variable(a), bn = tape.variable(b);
      tape.backward(tape.mul(an, bn));
      CHECK(tape.grad_of(an)(0, 0) == doctest::Approx(b).epsilon(1e-12));
      CHECK(tape.grad_of(bn)(0, 0) == doctest::Approx(a).epsilon(1e-12));
    }
    {
      TapeD tape;
      int an = tape.variable(a), bn = tape.variable(b);
      tape.backward(tape.div(an, bn));
      CHECK(tape.grad_of(an)(0, 0) == doctest::Approx(1.0 / b).epsilon(1e-12));
      CHECK(tape.grad_of(bn)(0, 0) == doctest::Approx(-a / (b * b)).epsilon(1e-12));
    }
    if (std::abs(a - b) > 1e-6) {
      TapeD tape;
      int an = tape.variable(a), bn = tape.variable(b);
      tape.backward(tape.max(an, bn));
      CHECK(tape.grad_of(an)(0, 0) == (a >= b ? 1.0 : 0.0));
      CHECK(tape.grad_of(bn)(0, 0) == (a < b ? 1.0 : 0.0));
    }
  }
}

TEST_CASE("structural ops backpropagate correctly (finite differences)") {
  Rng rng(29);
  MatX<double> leaf(4, 3);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 3; ++j) leaf(i, j) = rng.uniform(-1.0, 1.0);
  }

  // A composite graph touching cumsum/rowsum/colsum/reshape/slice/broadcast.
  auto build = [](const MatX<double>& v) {
    TapeD tape;
    int x = tape.variable(v);
    int c = tape.cumsum_exclusive_cols(x);
    int e = tape.exp(tape.neg(c));
    int r = tape.row_sum(e);                       // 4x1
    int s = tape.col_sum(tape.mul(e, tape.constant(MatX<double>::Constant(4, 3, 0.7))));
    int rs = tape.reshape(s, 3, 1);
    int parts = tape.add(tape.slice_rows(rs, 0, 2), tape.slice_rows(rs, 1, 2));
    int sc = tape.broadcast_mul(tape.sum_all(parts), r);
    return tape.scalar(tape.sum_all(tape.square(sc)));
  };
  auto value_and_grad = [&](const MatX<double>& v, MatX<double>& grad) {
    TapeD tape;
    int x = tape.variable(v);
    int c = tape.cumsum_exclusive_cols(x);
    int e = tape.exp(tape.neg(c));
    int r = tape.row_sum(e);
    int s = tape.col_sum(tape.mul(e, tape.constant(MatX<double>::Constant(4, 3, 0.7))));
    int rs = tape.reshape(s, 3, 1);
    int parts = tape.add(tape.slice_rows(rs, 0, 2), tape.slice_rows(rs, 1, 2));
    int sc = tape.broadcast_mul(tape.sum_all(parts), r);
    int out = tape.sum_all(tape.square(sc));
    tape.backward(out);
    grad = tape.grad_of(x);
    return tape.scalar(out);
  };

  MatX<double> grad;
  value_and_grad(leaf, grad);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 3; ++j) {
      double fd = fd_leaf(build, leaf, i, j);
      CHECK(grad(i, j) == doctest::Approx(fd).epsilon(1e-5));
    }
  }
}

TEST_CASE("affine layers backpropagate correctly (finite differences)") {
  Rng rng(31);
  MatX<double> w(3, 4), x(4, 5), b(3, 1);
  for (int i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-1, 1);
  for (int i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-1, 1);
  for (int i = 0; i < b.size(); ++i) b.data()[i] = rng.uniform(-1, 1);

  auto run = [&](const MatX<double>& wv, const MatX<double>& xv, const MatX<double>& bv,
                 MatX<double>* gw, MatX<double>* gx, MatX<double>* gb) {
    TapeD tape;
    int wn = tape.variable(wv), xn = tape.variable(xv), bn = tape.variable(bv);
    int y = tape.affine(wn, xn, bn);
    int out = tape.sum_all(tape.square(tape.sin(y)));
    tape.backward(out);
    if (gw) *gw = tape.grad_of(wn);
    if (gx) *gx = tape.grad_of(xn);
    if (gb) *gb = tape.grad_of(bn);
    return tape.scalar(out);
  };

  MatX<double> gw, gx, gb;
  run(w, x, b, &gw, &gx, &gb);
  auto fd = [&](MatX<double>& target, Eigen::Index i, Eigen::Index j) {
    double h = 1e-6;
    double saved = target(i, j);
    target(i, j) = saved + h;
    double fp = run(w, x, b, nullptr, nullptr, nullptr);
    target(i, j) = saved - h;
    double fm = run(w, x, b, nullptr, nullptr, nullptr);
    target(i, j) = saved;
    return (fp - fm) / (2 * h);
  };
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 4; ++j) CHECK(gw(i, j) == doctest::Approx(fd(w, i, j)).epsilon(1e-5));
  }
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 5; ++j) CHECK(gx(i, j) == doctest::Approx(fd(x, i, j)).epsilon(1e-5));
  }
  for (int i = 0; i < 3; ++i) CHECK(gb(i, 0) == doctest::Approx(fd(b, i, 0)).epsilon(1e-5));
}

TEST_CASE("gradient of a sum equals the sum of gradients") {
  Rng rng(37);
  for (int trial = 0; trial < 20; ++trial) {
    MatX<double> v(3, 3);
    for (int i = 0; i < 9; ++i) v.data()[i] = rng.uniform(-1, 1);

    auto graph_a = [](TapeD& tape, int x) { return tape.sum_all(tape.sin(x)); };
    auto graph_b = [](TapeD& tape, int x) {
      return tape.sum_all(tape.square(tape.sigmoid(x)));
    };

    TapeD ta;
    int xa = ta.variable(v);
    ta.backward(graph_a(ta, xa));
    MatX<double> ga = ta.grad_of(xa);

    TapeD tb;
    int xb = tb.variable(v);
    tb.backward(graph_b(tb, xb));
    MatX<double> gb = tb.grad_of(xb);

    TapeD tc;
    int xc = tc.variable(v);
    tc.backward(tc.add(graph_a(tc, xc), graph_b(tc, xc)));
    MatX<double> gc = tc.grad_of(xc);

    CHECK((gc - (ga + gb)).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("tape replay is deterministic") {
  auto run = [] {
    Rng rng(101);
    TapeD tape;
    MatX<double> v(8, 2);
    for (int i = 0; i < v.size(); ++i) v.data()[i] = rng.uniform(-1, 1);
    int x = tape.variable(v);
    int out = tape.sum_all(tape.sigmoid(tape.cumsum_exclusive_cols(x)));
    tape.backward(out);
    return std::make_pair(tape.scalar(out), MatX<double>(tape.grad_of(x)));
  };
  auto [v1, g1] = run();
  auto [v2, g2] = run();
  CHECK(v1 == v2);
  CHECK((g1 - g2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("grad_check validates parameter gradients") {
  // Quadratic through a ParamVector: f = sum (p - c)^2.
  ParamVector<double> pv;
  int entry = pv.add("q", 4, 1);
  Rng rng(41);
  for (int i = 0; i < 4; ++i) pv.view(entry)(i, 0) = rng.uniform(-1, 1);
  MatX<double> target(4, 1);
  for (int i = 0; i < 4; ++i) target(i, 0) = rng.uniform(-1, 1);

  auto f = [&](const ParamVector<double>& p) {
    TapeD tape(&p);
    int x = tape.param(entry);
    int r = tape.sub(x, tape.constant(target));
    return tape.scalar(tape.sum_all(tape.square(r)));
  };

  TapeD tape(&pv);
  int x = tape.param(entry);
  int r = tape.sub(x, tape.constant(target));
  VecX<double> g = tape.backward(tape.sum_all(tape.square(r)));

  Rng probe(43);
  double err = grad_check<double>(f, pv, g, 1e-5, 50, probe);
  CHECK(err < 1e-8);

  // Constant function: both gradients vanish.
  auto fc = [&](const ParamVector<double>&) { return 1.5; };
  VecX<double> zero = VecX<double>::Zero(pv.size());
  Rng probe2(47);
  CHECK(grad_check<double>(fc, pv, zero, 1e-5, 20, probe2) == 0.0);
}

TEST_CASE("param registry stays disjoint and covering") {
  ParamVector<float> pv;
  int a = pv.add("a", 2, 3);
  int b = pv.add("b", 4, 1);
  CHECK(pv.entry(a).offset == 0);
  CHECK(pv.entry(b).offset == 6);
  CHECK(pv.size() == 10);
  CHECK_THROWS_AS(pv.add("a", 1, 1), NlosError);
  CHECK(pv.find("b") == b);
  CHECK_THROWS_AS(pv.find("missing"), NlosError);
}
