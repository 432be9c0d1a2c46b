#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "foci/autograd.hpp"
#include "foci/gradcheck.hpp"
#include "foci/ops.hpp"
#include "foci/rng.hpp"
#include "foci/tensor.hpp"
#include "oracles.hpp"

using foci::ConvSpec;
using foci::GradientTape;
using foci::Rng;
using foci::Shape4;
using foci::Tensor;

namespace {

// Sum of squares keeps every gradient path non-trivial (a plain sum through
// batchnorm, for instance, has a near-zero input gradient by construction).
Tensor<double> squared_sum(GradientTape<double>* tape, const Tensor<double>& y) {
  return foci::sum_all(tape, foci::mul(tape, y, y));
}

Tensor<double> tracked_random(Rng& rng, Shape4 shape, double lo = -1.0, double hi = 1.0) {
  auto t = oracle::random_tensor<double>(rng, shape, lo, hi);
  t.set_requires_grad(true);
  return t;
}

}  // namespace

TEST_CASE("conv2d gradients match finite differences across specs") {
  Rng rng(21);
  struct Case {
    int k, s, d, in_c, out_c, h, w;
  };
  for (const Case& c : {Case{1, 1, 1, 2, 3, 4, 4}, Case{3, 1, 1, 2, 2, 5, 5},
                        Case{3, 2, 1, 1, 2, 6, 6}, Case{3, 1, 2, 2, 3, 5, 5},
                        Case{5, 1, 2, 2, 3, 5, 5}}) {
    ConvSpec spec = ConvSpec::same(c.k, c.d, c.in_c, c.out_c);
    spec.stride = c.s;
    auto x = tracked_random(rng, {1, c.in_c, c.h, c.w});
    auto w = tracked_random(rng, {c.out_c, c.in_c, c.k, c.k});
    auto b = tracked_random(rng, {1, c.out_c, 1, 1});
    auto err = foci::grad_check<double>(
        [&](GradientTape<double>* tape) {
          return squared_sum(tape, foci::conv2d(tape, x, w, b, spec));
        },
        {x, w, b});
    CHECK(err < 1e-4);
  }
}

TEST_CASE("batchnorm training-mode gradients match finite differences") {
  Rng rng(22);
  auto x = tracked_random(rng, {2, 3, 4, 4}, -2.0, 2.0);
  auto gamma = tracked_random(rng, {1, 3, 1, 1}, 0.5, 1.5);
  auto beta = tracked_random(rng, {1, 3, 1, 1}, -0.5, 0.5);
  Tensor<double> rm(1, 3, 1, 1);
  auto rv = Tensor<double>::full({1, 3, 1, 1}, 1.0);
  auto err = foci::grad_check<double>(
      [&](GradientTape<double>* tape) {
        auto y = foci::batchnorm(tape, x, gamma, beta, rm, rv, 1e-5, 0.1, true);
        return squared_sum(tape, y);
      },
      {x, gamma, beta});
  CHECK(err < 1e-4);
}

TEST_CASE("pooling and resampling gradients match finite differences") {
  // Values spaced far apart so finite differences never flip an argmax.
  std::vector<double> spaced(1 * 2 * 4 * 4);
  for (std::size_t i = 0; i < spaced.size(); ++i)
    spaced[i] = 0.5 * static_cast<double>((i * 7) % spaced.size()) - 4.0;
  auto xp = Tensor<double>::from_values({1, 2, 4, 4}, spaced);
  xp.set_requires_grad(true);
  auto err_pool = foci::grad_check<double>(
      [&](GradientTape<double>* tape) { return squared_sum(tape, foci::maxpool2(tape, xp)); },
      {xp});
  CHECK(err_pool < 1e-4);

  Rng rng(23);
  auto xu = tracked_random(rng, {1, 2, 3, 3});
  auto err_up = foci::grad_check<double>(
      [&](GradientTape<double>* tape) {
        return squared_sum(tape, foci::upsample_nearest2(tape, xu));
      },
      {xu});
  CHECK(err_up < 1e-4);

  auto xa = tracked_random(rng, {1, 2, 4, 6});
  auto err_avg = foci::grad_check<double>(
      [&](GradientTape<double>* tape) {
        return squared_sum(tape, foci::avgpool_to(tape, xa, 2, 3));
      },
      {xa});
  CHECK(err_avg < 1e-4);
}

TEST_CASE("pointwise op gradients match finite differences") {
  Rng rng(24);

  // leaky: keep inputs away from the kink at 0
  auto xl = oracle::random_tensor<double>(rng, {1, 2, 3, 3}, 0.3, 1.0);
  for (std::size_t i = 0; i < xl.numel(); i += 2) xl.values()[i] = -xl.values()[i];
  xl.set_requires_grad(true);
  auto err_leaky = foci::grad_check<double>(
      [&](GradientTape<double>* tape) {
        return squared_sum(tape, foci::leaky_relu(tape, xl, 0.1));
      },
      {xl});
  CHECK(err_leaky < 1e-4);

  auto xs = tracked_random(rng, {1, 1, 2, 5}, -2.0, 2.0);
  auto err_sig = foci::grad_check<double>(
      [&](GradientTape<double>* tape) { return squared_sum(tape, foci::sigmoid(tape, xs)); },
      {xs});
  CHECK(err_sig < 1e-4);

  auto xe = tracked_random(rng, {1, 1, 2, 3}, -1.0, 1.0);
  auto err_exp = foci::grad_check<double>(
      [&](GradientTape<double>* tape) { return squared_sum(tape, foci::exp(tape, xe)); }, {xe});
  CHECK(err_exp < 1e-4);

  auto xss = tracked_random(rng, {1, 2, 2, 3});
  auto err_ss = foci::grad_check<double>(
      [&](GradientTape<double>* tape) {
        return squared_sum(tape, foci::scale_shift(tape, xss, 1.7, -0.3));
      },
      {xss});
  CHECK(err_ss < 1e-4);
}

TEST_CASE("binary op gradients match finite differences") {
  Rng rng(25);
  auto a = tracked_random(rng, {1, 2, 3, 3});
  auto b = tracked_random(rng, {1, 2, 3, 3});
  auto err_add = foci::grad_check<double>(
      [&](GradientTape<double>* tape) { return squared_sum(tape, foci::add(tape, a, b)); },
      {a, b});
  CHECK(err_add < 1e-4);

  auto err_mul = foci::grad_check<double>(
      [&](GradientTape<double>* tape) { return squared_sum(tape, foci::mul(tape, a, b)); },
      {a, b});
  CHECK(err_mul < 1e-4);

  auto gate = tracked_random(rng, {2, 1, 3, 3}, 0.1, 0.9);
  auto x = tracked_random(rng, {2, 4, 3, 3});
  auto err_bmul = foci::grad_check<double>(
      [&](GradientTape<double>* tape) {
        return squared_sum(tape, foci::broadcast_mul(tape, gate, x));
      },
      {gate, x});
  CHECK(err_bmul < 1e-4);

  auto c1 = tracked_random(rng, {1, 2, 3, 3});
  auto c2 = tracked_random(rng, {1, 3, 3, 3});
  auto err_cat = foci::grad_check<double>(
      [&](GradientTape<double>* tape) {
        return squared_sum(tape, foci::concat_channels(tape, {c1, c2}));
      },
      {c1, c2});
  CHECK(err_cat < 1e-4);
}

TEST_CASE("composite chain gradients match finite differences") {
  Rng rng(26);
  ConvSpec spec = ConvSpec::same(3, 1, 2, 4);
  auto x = tracked_random(rng, {1, 2, 4, 4});
  auto w = tracked_random(rng, {4, 2, 3, 3});
  auto b = tracked_random(rng, {1, 4, 1, 1});
  auto gamma = tracked_random(rng, {1, 4, 1, 1}, 0.5, 1.5);
  auto beta = tracked_random(rng, {1, 4, 1, 1}, -0.5, 0.5);
  Tensor<double> rm(1, 4, 1, 1);
  auto rv = Tensor<double>::full({1, 4, 1, 1}, 1.0);
  auto err = foci::grad_check<double>(
      [&](GradientTape<double>* tape) {
        auto y = foci::conv2d(tape, x, w, b, spec);
        y = foci::batchnorm(tape, y, gamma, beta, rm, rv, 1e-5, 0.1, true);
        y = foci::leaky_relu(tape, y, 0.1);
        y = foci::maxpool2(tape, y);
        y = foci::sigmoid(tape, y);
        return squared_sum(tape, y);
      },
      {x, w, b, gamma, beta});
  CHECK(err < 1e-4);
}

TEST_CASE("sum backward distributes ones") {
  Rng rng(27);
  auto x = tracked_random(rng, {1, 2, 3, 3});
  GradientTape<double> tape;
  auto loss = foci::sum_all(&tape, x);
  tape.backward(loss);
  REQUIRE(x.has_grad());
  for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("leaky backward on negative inputs yields the slope") {
  auto x = Tensor<double>::full({1, 1, 2, 2}, -3.0);
  x.set_requires_grad(true);
  GradientTape<double> tape;
  auto loss = foci::sum_all(&tape, foci::leaky_relu(&tape, x, 0.1));
  tape.backward(loss);
  REQUIRE(x.has_grad());
  for (double g : x.grad()) CHECK(g == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("gradients accumulate when a tensor feeds an op twice") {
  auto x = Tensor<double>::from_values({1, 1, 1, 2}, {1.5, -2.0});
  x.set_requires_grad(true);
  GradientTape<double> tape;
  auto loss = foci::sum_all(&tape, foci::add(&tape, x, x));
  tape.backward(loss);
  REQUIRE(x.has_grad());
  for (double g : x.grad()) CHECK(g == 2.0);
}

TEST_CASE("unreached leaves keep an empty gradient") {
  Rng rng(28);
  auto x = tracked_random(rng, {1, 1, 2, 2});
  auto dead = tracked_random(rng, {1, 1, 2, 2});
  GradientTape<double> tape;
  auto loss = foci::sum_all(&tape, foci::mul(&tape, x, x));
  tape.backward(loss);
  CHECK(x.has_grad());
  CHECK(!dead.has_grad());
}

TEST_CASE("backward demands a scalar loss and tape clears") {
  Rng rng(29);
  auto x = tracked_random(rng, {1, 1, 2, 2});
  GradientTape<double> tape;
  auto y = foci::mul(&tape, x, x);
  CHECK(tape.size() > 0);
  CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
  tape.clear();
  CHECK(tape.size() == 0);
}

TEST_CASE("zero_grad resets accumulation between passes") {
  auto x = Tensor<double>::from_values({1, 1, 1, 1}, {2.0});
  x.set_requires_grad(true);
  for (int pass = 0; pass < 2; ++pass) {
    x.zero_grad();
    GradientTape<double> tape;
    auto loss = foci::sum_all(&tape, foci::mul(&tape, x, x));
    tape.backward(loss);
    REQUIRE(x.has_grad());
    CHECK(x.grad()[0] == doctest::Approx(4.0).epsilon(1e-12));  // d(x^2)/dx = 2x
  }
}
