#include <doctest.h>

#include <cmath>
#include <limits>

#include "parc/autodiff.hpp"

using namespace parc;
using autodiff::Tape;
using autodiff::Var;

TEST_CASE("grad of sum of squares") {
  auto fn = [](Tape& t, const std::map<std::string, Var>& p, const std::vector<Var>&) {
    Var pv = p.at("p");
    return t.sum(t.mul(pv, pv));
  };
  auto grads = autodiff::grad(fn, {{"p", Tensor::from_f64({1}, {3.0})}}, {});
  CHECK(grads.at("p").f64()[0] == doctest::Approx(6.0));
}

TEST_CASE("unused parameter gets exact zeros of matching shape") {
  auto fn = [](Tape& t, const std::map<std::string, Var>& p, const std::vector<Var>&) {
    return t.sum(p.at("used"));
  };
  auto grads = autodiff::grad(fn,
                              {{"used", Tensor::from_f64({2}, {1.0, 2.0})},
                               {"unused", Tensor::zeros(Dtype::F64, {3, 4})}},
                              {});
  CHECK(grads.at("unused").dims() == std::vector<std::size_t>{3, 4});
  for (double v : grads.at("unused").f64()) CHECK(v == 0.0);
  for (double v : grads.at("used").f64()) CHECK(v == 1.0);
}

TEST_CASE("kernel gradient of a horizontal ParC equals circular correlation with ones") {
  Rng rng(31);
  const std::size_t c = 2, h = 3, w = 5;
  Tensor x = rng.uniform_tensor(Dtype::F64, {1, c, h, w}, -1, 1);
  Tensor kernel = rng.uniform_tensor(Dtype::F64, {c, w}, -1, 1);
  Tensor pe = rng.uniform_tensor(Dtype::F64, {c, w}, -1, 1);

  auto fn = [&](Tape& t, const std::map<std::string, Var>& p, const std::vector<Var>& in) {
    Var xp = t.add_line_embedding(in[0], t.constant(pe), Orientation::Horizontal);
    return t.sum(t.circular_conv(xp, p.at("k"), Orientation::Horizontal));
  };
  auto grads = autodiff::grad(fn, {{"k", kernel}}, {x});

  // closed form: dL/dk[c,t] = sum_{i,j} x^p[c, i, (j+t) mod w] (upstream all ones)
  Tensor xp = add_line_embedding(x, pe, Orientation::Horizontal);
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t t = 0; t < w; ++t) {
      double expect = 0.0;
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
          expect += xp.f64()[(ci * h + i) * w + (j + t) % w];
        }
      }
      CHECK(grads.at("k").f64()[ci * w + t] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("finite differences are exact for quadratics") {
  Rng rng(37);
  Tensor p = rng.uniform_tensor(Dtype::F64, {4}, -2, 2);
  auto fn = [](Tape& t, const std::map<std::string, Var>& ps, const std::vector<Var>&) {
    Var v = ps.at("p");
    return t.sum(t.mul(v, v));
  };
  CHECK(autodiff::finite_diff_check(fn, {{"p", p}}, {}) < 1e-9);
}

TEST_CASE("backward through concat splits the upstream gradient bit-exactly") {
  Rng rng(41);
  Tensor a = rng.uniform_tensor(Dtype::F32, {2, 3, 2, 2}, -1, 1);
  Tensor b = rng.uniform_tensor(Dtype::F32, {2, 5, 2, 2}, -1, 1);
  Tensor w = rng.uniform_tensor(Dtype::F32, {2, 8, 2, 2}, -1, 1);

  Tape t(true);
  Var av = t.leaf(a), bv = t.leaf(b);
  Var y = t.concat({av, bv}, 1);
  Var loss = t.sum(t.mul(y, t.constant(w)));
  t.backward(loss);
  CHECK(bit_equal(t.grad(av), ops::slice(w, 1, 0, 3)));
  CHECK(bit_equal(t.grad(bv), ops::slice(w, 1, 3, 5)));
}

TEST_CASE("gradient of a sum of losses is the sum of gradients") {
  Rng rng(43);
  Tensor p = rng.uniform_tensor(Dtype::F64, {6}, -1, 1);
  Tensor c1 = rng.uniform_tensor(Dtype::F64, {6}, -1, 1);

  auto loss1 = [&](Tape& t, const std::map<std::string, Var>& ps) {
    return t.sum(t.mul(ps.at("p"), t.constant(c1)));
  };
  auto loss2 = [&](Tape& t, const std::map<std::string, Var>& ps) {
    Var v = ps.at("p");
    return t.sum(t.mul(t.silu(v), v));
  };

  auto combined = [&](Tape& t, const std::map<std::string, Var>& ps, const std::vector<Var>&) {
    return t.add(loss1(t, ps), loss2(t, ps));
  };
  auto only1 = [&](Tape& t, const std::map<std::string, Var>& ps, const std::vector<Var>&) {
    return loss1(t, ps);
  };
  auto only2 = [&](Tape& t, const std::map<std::string, Var>& ps, const std::vector<Var>&) {
    return loss2(t, ps);
  };

  auto g = autodiff::grad(combined, {{"p", p}}, {});
  auto g1 = autodiff::grad(only1, {{"p", p}}, {});
  auto g2 = autodiff::grad(only2, {{"p", p}}, {});
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(std::fabs(g.at("p").f64()[i] - (g1.at("p").f64()[i] + g2.at("p").f64()[i])) < 1e-12);
  }
}

TEST_CASE("non-scalar loss is rejected") {
  Tape t(true);
  Var p = t.param("p", Tensor::from_f64({3}, {1, 2, 3}));
  CHECK_THROWS_AS(t.backward(p), ContractError);
}

TEST_CASE("finite_diff_check requires f64 and reports non-finite losses") {
  auto fn = [](Tape& t, const std::map<std::string, Var>& ps, const std::vector<Var>&) {
    return t.sum(ps.at("p"));
  };
  CHECK_THROWS_AS(
      autodiff::finite_diff_check(fn, {{"p", Tensor::from_f32({1}, {1.0f})}}, {}),
      ContractError);

  // finite at the base point, NaN once perturbed: the diagnostic names the param
  auto trap = [](Tape& t, const std::map<std::string, Var>& ps, const std::vector<Var>&) {
    const double v = t.value(ps.at("p")).f64()[0];
    const double out = v > 1.0 ? std::numeric_limits<double>::quiet_NaN() : v;
    return t.leaf(Tensor::from_f64({1}, {out}));
  };
  CHECK_THROWS_WITH_AS(
      autodiff::finite_diff_check(trap, {{"p", Tensor::from_f64({1}, {0.5})}}, {}, 1.0),
      doctest::Contains("p"), DiagnosticError);
}

TEST_CASE("mod-indexed circular backward accumulates at wrapped indices") {
  // extent 1: every tap maps to the same input element, so dx must be k_sum * g
  Tensor x = Tensor::from_f64({1, 1, 1, 1}, {2.0});
  Tensor k = Tensor::from_f64({1, 1}, {3.0});
  Tape t(true);
  Var xv = t.leaf(x);
  Var y = t.circular_conv(xv, t.constant(k), Orientation::Horizontal);
  t.backward(t.sum(y));
  CHECK(t.grad(xv).f64()[0] == doctest::Approx(3.0));
}

TEST_CASE("grad queried before backward is an error") {
  Tape t(true);
  Var p = t.param("p", Tensor::from_f64({1}, {1.0}));
  CHECK_THROWS_AS(t.grad(p), ContractError);
}
