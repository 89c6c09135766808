#include <cmath>
#include <random>

#include "autodiff/gradcheck.hpp"
#include "autodiff/ops.hpp"
#include "doctest.h"
#include "geometry/stereo.hpp"
#include "util/error.hpp"

using namespace depthforge;
using ad::ParamTensors;
using ad::ParamVars;
using ad::Tape;
using ad::Var;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.values()) v = u(rng);
  return t;
}

// Values bounded away from zero so relu stays smooth under the stencil.
Tensor away_from_zero(Shape shape, std::uint64_t seed) {
  Tensor t = random_tensor(std::move(shape), seed, 0.05, 1.0);
  std::mt19937_64 rng(seed + 1);
  for (double& v : t.values()) v = (rng() & 1) ? v : -v;
  return t;
}

// Fixed random projection so the scalar depends on every output element.
Var project(const Var& v, std::uint64_t seed) { return ad::sum(ad::mask_multiply(v, random_tensor(v.shape(), seed))); }

ad::GradReport check(const ad::ScalarFn& f, const ParamTensors& p, double eps = 1e-6, double tol = 1e-6) {
  ad::GradCheckOptions o;
  o.eps = eps;
  o.tol = tol;
  return ad::grad_check(f, p, o);
}

}  // namespace

TEST_CASE("backward of sum and of a square") {
  Tape tape;
  const Var th = tape.parameter("theta", Tensor({2}, {1.0, 2.0}));
  const ad::Gradients g = tape.backward(ad::sum(th));
  CHECK(g.at("theta")[0] == 1.0);
  CHECK(g.at("theta")[1] == 1.0);

  Tape t2;
  const Var p = t2.parameter("theta", Tensor({2}, {1.0, 2.0}));
  const ad::Gradients g2 = t2.backward(ad::sum(ad::mul(p, p)));
  CHECK(g2.at("theta")[0] == 2.0);
  CHECK(g2.at("theta")[1] == 4.0);
}

TEST_CASE("backward requires a scalar and zero-fills unreachable parameters") {
  Tape tape;
  const Var a = tape.parameter("a", Tensor({3}, 1.0));
  tape.parameter("unused", Tensor({2, 2}, 5.0));
  CHECK_THROWS_AS(tape.backward(a), ShapeError);
  const ad::Gradients g = tape.backward(ad::sum(ad::scale(a, 3.0)));
  REQUIRE(g.count("unused") == 1);
  CHECK(g.at("unused").shape() == Shape{2, 2});
  for (double v : g.at("unused").values()) CHECK(v == 0.0);
}

TEST_CASE("a parameter used twice receives the sum of both paths") {
  const Tensor x = random_tensor({1, 2, 5, 5}, 1);
  const Tensor w = random_tensor({3, 2, 3, 3}, 2);
  const ConvSpec spec{3, 1, 2, 3};
  // Shared: conv(x, w) + conv(2x, w). Duplicated oracle: separate leaves w1, w2.
  Tape shared;
  const Var ws = shared.parameter("w", w);
  const Var xs = shared.constant(x);
  const Var out = ad::add(ad::conv2d(xs, ws, std::nullopt, spec), ad::conv2d(ad::scale(xs, 2.0), ws, std::nullopt, spec));
  const Tensor gs = shared.backward(project(out, 3)).at("w");

  Tape dup;
  const Var w1 = dup.parameter("w1", w), w2 = dup.parameter("w2", w);
  const Var xd = dup.constant(x);
  const Var o2 = ad::add(ad::conv2d(xd, w1, std::nullopt, spec), ad::conv2d(ad::scale(xd, 2.0), w2, std::nullopt, spec));
  const ad::Gradients gd = dup.backward(project(o2, 3));
  for (std::size_t i = 0; i < gs.size(); ++i) {
    CHECK(gs[i] == doctest::Approx(gd.at("w1")[i] + gd.at("w2")[i]).epsilon(1e-12));
  }
}

TEST_CASE("grad_check passes on sum and reports a wrong rule") {
  const ParamTensors p{{"theta", random_tensor({4}, 5)}};
  const auto good = check([](Tape&, const ParamVars& v) { return ad::sum(v.at("theta")); }, p, 1e-3, 1e-4);
  CHECK(good.passed);

  // x^2 recorded with derivative x instead of 2x.
  const auto bad = check(
      [](Tape& tape, const ParamVars& v) {
        const Var x = v.at("theta");
        Tensor sq = x.value();
        for (double& e : sq.values()) e *= e;
        const Var y = tape.record("bad_square", sq, {x}, [x](Tape& t, const Tensor& adj) {
          Tensor g = adj;
          for (std::size_t i = 0; i < g.size(); ++i) g[i] *= x.value()[i];
          t.accumulate(x, g);
        });
        return ad::sum(y);
      },
      p, 1e-4, 1e-4);
  CHECK_FALSE(bad.passed);
  CHECK(bad.worst_param == "theta");
  CHECK(bad.max_rel_error == doctest::Approx(0.5).epsilon(1e-4));
}

TEST_CASE("grad_check names the coordinate where f turns non-finite") {
  const ParamTensors p{{"theta", Tensor({3}, {1.0, 1e-4, 2.0})}};
  // sqrt goes NaN once theta[1] - eps < 0.
  auto f = [](Tape& tape, const ParamVars& v) {
    const Var x = v.at("theta");
    Tensor r = x.value();
    for (double& e : r.values()) e = std::sqrt(e);
    return ad::sum(tape.record("sqrt", r, {x}, [x, r](Tape& t, const Tensor& adj) {
      Tensor g = adj;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= 0.5 / r[i];
      t.accumulate(x, g);
    }));
  };
  try {
    check(f, p, 1e-3, 1e-4);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("theta") != std::string::npos);
    CHECK(msg.find("coordinate 1") != std::string::npos);
  }
}

TEST_CASE("primitive gradients match central differences to 1e-6") {
  const Tensor x = random_tensor({2, 2, 5, 6}, 11);

  SUBCASE("conv2d with bias, stride 1 and 2") {
    for (std::size_t s : {1, 2}) {
      const ParamTensors p{{"x", x}, {"w", random_tensor({3, 2, 3, 3}, 12)}, {"b", random_tensor({3}, 13)}};
      const ConvSpec spec{3, s, 2, 3};
      const auto r = check([&](Tape&, const ParamVars& v) {
        return project(ad::conv2d(v.at("x"), v.at("w"), v.at("b"), spec), 14);
      }, p);
      CAPTURE(ad::format_report(r));
      CHECK(r.passed);
    }
  }
  SUBCASE("max_pool2d") {
    const ParamTensors p{{"x", x}};
    const auto r = check([&](Tape&, const ParamVars& v) { return project(ad::max_pool2d(v.at("x"), 3, 2), 15); }, p);
    CAPTURE(ad::format_report(r));
    CHECK(r.passed);
  }
  SUBCASE("batch norm, train and eval") {
    const ParamTensors p{{"x", x}, {"g", random_tensor({2}, 16, 0.5, 1.5)}, {"b", random_tensor({2}, 17)}};
    const auto r = check([&](Tape&, const ParamVars& v) {
      return project(ad::batch_norm_train(v.at("x"), v.at("g"), v.at("b"), nullptr), 18);
    }, p);
    CAPTURE(ad::format_report(r));
    CHECK(r.passed);
    BNState st = BNState::fresh(2);
    st.running_mean = Tensor({2}, {0.1, -0.2});
    st.running_var = Tensor({2}, {0.5, 2.0});
    const auto e = check([&](Tape&, const ParamVars& v) {
      return project(ad::batch_norm_eval(v.at("x"), v.at("g"), v.at("b"), st), 19);
    }, p);
    CAPTURE(ad::format_report(e));
    CHECK(e.passed);
  }
  SUBCASE("relu and softplus") {
    const ParamTensors p{{"x", away_from_zero({1, 2, 4, 4}, 20)}};
    const auto r = check([&](Tape&, const ParamVars& v) { return project(ad::relu(v.at("x")), 21); }, p);
    CHECK(r.passed);
    const auto s = check([&](Tape&, const ParamVars& v) { return project(ad::softplus(v.at("x")), 22); }, p);
    CHECK(s.passed);
  }
  SUBCASE("unpool, crop, resize, slice") {
    const ParamTensors p{{"x", x}};
    CHECK(check([&](Tape&, const ParamVars& v) { return project(ad::unpool2x(v.at("x")), 23); }, p).passed);
    CHECK(check([&](Tape&, const ParamVars& v) { return project(ad::crop(v.at("x"), 3, 4), 24); }, p).passed);
    CHECK(check([&](Tape&, const ParamVars& v) { return project(ad::resize_bilinear(v.at("x"), 9, 13), 25); }, p)
              .passed);
    CHECK(check([&](Tape&, const ParamVars& v) { return project(ad::slice_batch(v.at("x"), 1, 1), 26); }, p).passed);
  }
  SUBCASE("add, mul, scale, weighted_sum") {
    const ParamTensors p{{"a", x}, {"b", random_tensor(x.shape(), 27)}};
    const auto r = check([&](Tape&, const ParamVars& v) {
      const Var m = ad::mul(v.at("a"), ad::add(v.at("b"), ad::scale(v.at("a"), 0.3)));
      return ad::weighted_sum({project(m, 28), ad::sum(v.at("b"))}, {0.7, -1.3});
    }, p);
    CAPTURE(ad::format_report(r));
    CHECK(r.passed);
  }
  SUBCASE("bilinear sampling in image and coordinates") {
    Tensor cols({1, 1, 3, 8});
    std::mt19937_64 rng(29);
    std::uniform_real_distribution<double> frac(0.1, 0.9);
    for (std::size_t i = 0; i < cols.size(); ++i) cols[i] = static_cast<double>(1 + i % 5) + frac(rng);
    const ParamTensors p{{"img", random_tensor({1, 1, 3, 8}, 30)}, {"cols", cols}};
    const auto r = check([&](Tape&, const ParamVars& v) {
      return project(ad::sample_bilinear(v.at("img"), v.at("cols"), nullptr), 31);
    }, p);
    CAPTURE(ad::format_report(r));
    CHECK(r.passed);
  }
}

TEST_CASE("tiny two-layer conv net agrees with finite differences") {
  const Tensor img = random_tensor({2, 1, 8, 8}, 40, 0.0, 1.0);
  const ParamTensors p{{"w1", random_tensor({4, 1, 3, 3}, 41)},
                       {"b1", random_tensor({4}, 42)},
                       {"w2", random_tensor({2, 4, 3, 3}, 43)},
                       {"b2", random_tensor({2}, 44)}};
  const auto r = check(
      [&](Tape& tape, const ParamVars& v) {
        const Var h = ad::softplus(ad::conv2d(tape.constant(img), v.at("w1"), v.at("b1"), {3, 2, 1, 4}));
        return project(ad::conv2d(h, v.at("w2"), v.at("b2"), {3, 1, 4, 2}), 45);
      },
      p, 1e-5, 1e-4);
  CAPTURE(ad::format_report(r));
  CHECK(r.passed);
}

TEST_CASE("tape rejects non-finite values") {
  Tape tape;
  CHECK_THROWS_AS(tape.constant(Tensor({2}, {1.0, std::nan("")})), NumericError);
  CHECK_THROWS_AS(tape.parameter("p", Tensor({1}, {INFINITY})), NumericError);
  const Var big = tape.parameter("q", Tensor({1}, {800.0}));
  CHECK_THROWS_AS(tape.record("exp", Tensor({1}, {std::exp(800.0)}), {big}, {}), NumericError);
}
