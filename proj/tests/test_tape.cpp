#include <catch_amalgamated.hpp>

#include <cmath>
#include <cstring>

#include "hhp/gradcheck.hpp"
#include "hhp/tape.hpp"

using namespace hhp;
using ad::Array;
using ad::Tape;
using ad::Var;

namespace {

Array random_array(Rng& rng, size_t n, double lo = -2.0, double hi = 2.0) {
  Array v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

}  // namespace

TEST_CASE("softplus closed forms") {
  Tape tape;
  Var x = tape.leaf(Array{0.0});
  Var y = tape.softplus(x);
  CHECK(y.value()[0] == Catch::Approx(std::log(2.0)).epsilon(1e-12));

  const auto grads = tape.backward(y);
  CHECK(grads.leaf_grads[0][0] == Catch::Approx(0.5).epsilon(1e-12));

  // Overflow-safe at extreme inputs.
  Tape tape2;
  Var big = tape2.softplus(tape2.leaf(Array{800.0, -800.0}));
  CHECK(big.value()[0] == Catch::Approx(800.0));
  CHECK(big.value()[1] >= 0.0);
  CHECK(std::isfinite(big.value()[1]));
}

TEST_CASE("matvec with identity and outer-product gradient") {
  Tape tape;
  Var m = tape.leaf(Array{1.0, 0.0, 0.0, 1.0});
  Var x = tape.leaf(Array{3.0, 4.0});
  Var y = tape.matvec(m, 2, 2, x);
  CHECK(y.value()[0] == 3.0);
  CHECK(y.value()[1] == 4.0);
  Var s = tape.sum(y);
  const auto grads = tape.backward(s);
  // d sum(M x) / dM = outer(1, x)
  CHECK(grads.leaf_grads[0] == Array{3.0, 4.0, 3.0, 4.0});
  CHECK(grads.leaf_grads[1] == Array{1.0, 1.0});
}

TEST_CASE("product rule: f = x*y") {
  Tape tape;
  Var x = tape.leaf(Array{2.0});
  Var y = tape.leaf(Array{3.0});
  Var f = tape.mul(x, y);
  const auto grads = tape.backward(f);
  CHECK(grads.leaf_grads[0][0] == 3.0);
  CHECK(grads.leaf_grads[1][0] == 2.0);
}

TEST_CASE("constants receive no gradient; unused leaves report empty") {
  Tape tape;
  Var x = tape.leaf(Array{1.0});
  Var unused = tape.leaf(Array{5.0, 6.0});
  (void)unused;
  Var c = tape.constant(Array{10.0});
  Var f = tape.mul(x, c);
  const auto grads = tape.backward(f);
  CHECK(grads.leaf_grads[0][0] == 10.0);
  CHECK(grads.leaf_grads[1].empty());  // missing entry means zero gradient
  CHECK(grads.find(1) == nullptr);
}

TEST_CASE("backward requires a scalar root") {
  Tape tape;
  Var x = tape.leaf(Array{1.0, 2.0});
  CHECK_THROWS_AS(tape.backward(x), std::invalid_argument);
}

TEST_CASE("errors: shape mismatch and log domain") {
  Tape tape;
  Var a = tape.leaf(Array{1.0, 2.0});
  Var b = tape.leaf(Array{1.0});
  CHECK_THROWS_AS(tape.add(a, b), std::invalid_argument);
  CHECK_THROWS_AS(tape.log(tape.constant(Array{0.0})), std::domain_error);
  CHECK_THROWS_AS(tape.log(tape.constant(Array{-1.0})), std::domain_error);
}

TEST_CASE("every primitive matches central finite differences") {
  Rng rng(2024);
  const double eps = 1e-5;
  const double tol = 1e-5;

  const auto check = [&](const char* name, auto&& builder, std::vector<Array> params) {
    const auto res = ad::check_gradient(builder, std::move(params), eps);
    INFO(name << ": max rel err " << res.max_rel_err << " at param " << res.worst_param
              << "[" << res.worst_coord << "] ad=" << res.worst_ad << " fd=" << res.worst_fd);
    REQUIRE(res.valid);
    CHECK(res.max_rel_err <= tol);
  };

  for (int rep = 0; rep < 5; ++rep) {
    check("add+mul+sub+neg",
          [](Tape& t, const std::vector<Var>& p) {
            return t.sum(t.neg(t.sub(t.mul(p[0], p[1]), t.add(p[0], p[1]))));
          },
          {random_array(rng, 6), random_array(rng, 6)});

    check("scale+broadcast_mul",
          [](Tape& t, const std::vector<Var>& p) {
            return t.sum(t.broadcast_mul(p[0], t.scale(p[1], 1.7)));
          },
          {random_array(rng, 1), random_array(rng, 5)});

    check("matvec",
          [](Tape& t, const std::vector<Var>& p) {
            return t.sum(t.tanh(t.matvec(p[0], 3, 4, p[1])));
          },
          {random_array(rng, 12, -0.8, 0.8), random_array(rng, 4)});

    check("exp+log+softplus+sigmoid",
          [](Tape& t, const std::vector<Var>& p) {
            return t.sum(t.log(t.add(t.softplus(p[0]), t.sigmoid(t.exp(p[1])))));
          },
          {random_array(rng, 4), random_array(rng, 4, -1.0, 1.0)});

    check("cos+sin",
          [](Tape& t, const std::vector<Var>& p) {
            return t.sum(t.mul(t.cos(p[0]), t.sin(p[1])));
          },
          {random_array(rng, 5), random_array(rng, 5)});

    check("concat+slice",
          [](Tape& t, const std::vector<Var>& p) {
            Var c = t.concat(p[0], p[1]);
            return t.sum(t.mul(t.slice(c, 1, 4), t.slice(c, 2, 4)));
          },
          {random_array(rng, 3), random_array(rng, 4)});

    // Fused complex ops, d = 4. Three layers with distinct angles (the last
    // applied as an adjoint), decoded through a non-uniform weighting so no
    // gradient vanishes by norm preservation.
    check("rotation_layer",
          [](Tape& t, const std::vector<Var>& p) {
            Var c = t.cos(p[1]);
            Var s = t.sin(p[1]);
            Var even = t.rotation_layer(p[0], c, s, 0, 2, 0, false);
            Var odd = t.rotation_layer(even, c, s, 4, 2, 1, false);
            Var adj = t.rotation_layer(odd, c, s, 8, 2, 0, true);
            Var w = t.constant(Array{0.3, -1.2, 0.7, 2.0, -0.5, 1.1, -0.9, 0.4});
            return t.sum(t.mul(w, t.mul(adj, adj)));
          },
          {random_array(rng, 8), random_array(rng, 12)});

    check("diag_exp_mul",
          [](Tape& t, const std::vector<Var>& p) {
            return t.sum(t.mul(t.diag_exp_mul(p[0], p[1], 0.73), p[1]));
          },
          {random_array(rng, 8, -1.5, 0.5), random_array(rng, 8)});
  }
}

TEST_CASE("check_gradient: quadratic is exact to roundoff") {
  const auto res = ad::check_gradient(
      [](Tape& t, const std::vector<Var>& p) { return t.sum(t.mul(p[0], p[0])); },
      {Array{1.0, -2.0, 3.0}}, 1e-5);
  REQUIRE(res.valid);
  CHECK(res.max_rel_err <= 1e-9);
}

TEST_CASE("check_gradient: eps out of range is flagged invalid") {
  const auto builder = [](Tape& t, const std::vector<Var>& p) { return t.sum(p[0]); };
  CHECK_FALSE(ad::check_gradient(builder, {Array{1.0}}, 1e-9).valid);
  CHECK_FALSE(ad::check_gradient(builder, {Array{1.0}}, 0.5).valid);
  CHECK(ad::check_gradient(builder, {Array{1.0}}, 1e-5).valid);
}

TEST_CASE("linearity of gradients, bitwise for power-of-two weights") {
  Rng rng(99);
  const Array xv = random_array(rng, 6);
  const Array yv = random_array(rng, 6);

  const auto grad_of = [&](double a, double b) {
    Tape t;
    Var x = t.leaf(xv);
    Var y = t.leaf(yv);
    Var f = t.sum(t.mul(t.softplus(x), t.tanh(y)));
    Var g = t.sum(t.mul(x, t.exp(t.scale(y, 0.5))));
    Var combo = t.add(t.scale(f, a), t.scale(g, b));
    return t.backward(combo);
  };

  // a*grad(f) + b*grad(g) with powers of two multiplies exactly.
  const auto base_f = grad_of(1.0, 0.0);
  const auto base_g = grad_of(0.0, 1.0);
  const auto combo = grad_of(2.0, -0.5);
  for (size_t p = 0; p < 2; ++p) {
    for (size_t i = 0; i < 6; ++i) {
      const double expected = 2.0 * base_f.leaf_grads[p][i] + -0.5 * base_g.leaf_grads[p][i];
      CHECK(combo.leaf_grads[p][i] == expected);
    }
  }
}

TEST_CASE("identical tapes give bitwise-identical gradients") {
  Rng rng(5);
  const Array xv = random_array(rng, 8);
  const auto run = [&] {
    Tape t;
    Var x = t.leaf(xv);
    Var f = t.sum(t.mul(t.sin(x), t.softplus(t.scale(x, 0.3))));
    return t.backward(f);
  };
  const auto a = run();
  const auto b = run();
  REQUIRE(a.leaf_grads[0].size() == b.leaf_grads[0].size());
  CHECK(std::memcmp(a.leaf_grads[0].data(), b.leaf_grads[0].data(),
                    a.leaf_grads[0].size() * sizeof(double)) == 0);
}

TEST_CASE("tape is reusable for multiple backward passes") {
  Tape tape;
  Var x = tape.leaf(Array{2.0});
  Var f = tape.mul(x, x);
  const auto g1 = tape.backward(f);
  const auto g2 = tape.backward(f);
  CHECK(g1.leaf_grads[0][0] == 4.0);
  CHECK(g2.leaf_grads[0][0] == 4.0);  // re-seeded, not accumulated
}
