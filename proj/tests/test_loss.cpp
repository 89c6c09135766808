#include <cmath>
#include <random>

#include "data/scene.hpp"
#include "doctest.h"
#include "loss/loss.hpp"
#include "util/error.hpp"

using namespace depthforge;

namespace {

Tensor random_map(std::size_t n, std::size_t h, std::size_t w, std::uint64_t seed, double lo, double hi) {
  Tensor t({n, 1, h, w});
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.values()) v = u(rng);
  return t;
}

DepthMap single_pixel(std::size_t h, std::size_t w, std::size_t y, std::size_t x, double z) {
  DepthMap d{Tensor({1, 1, h, w}), Tensor({1, 1, h, w})};
  d.depth.at(0, 0, y, x) = z;
  d.valid.at(0, 0, y, x) = 1.0;
  return d;
}

LossOptions raw_sums() {
  LossOptions o;
  o.normalize_terms = false;
  return o;
}

}  // namespace

TEST_CASE("berhu examples and errors") {
  CHECK(berhu(0.5, 1.0) == 0.5);
  CHECK(berhu(-0.5, 1.0) == 0.5);
  CHECK(berhu(1.0, 1.0) == 1.0);
  CHECK(berhu(2.0, 1.0) == doctest::Approx(2.5));
  CHECK_THROWS_AS(berhu(1.0, 0.0), InvalidArgument);
  CHECK_THROWS_AS(berhu(1.0, -2.0), InvalidArgument);
}

TEST_CASE("berhu dominates |d| and increases with |d|") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-10.0, 10.0), pos(1e-3, 5.0);
  for (int i = 0; i < 1000; ++i) {
    const double d = u(rng), delta = pos(rng);
    const double b = berhu(d, delta);
    CHECK(b >= std::fabs(d));
    if (std::fabs(d) <= delta) CHECK(b == std::fabs(d));
    if (std::fabs(d) > delta + 1e-9) CHECK(b > std::fabs(d));
    const double bigger = std::fabs(d) + pos(rng);
    CHECK(berhu(bigger, delta) > b);
  }
}

TEST_CASE("adaptive delta examples") {
  // Residuals 1, 3, 2 with Z = 10.
  DepthMap gt{Tensor({1, 1, 1, 3}, 10.0), Tensor({1, 1, 1, 3}, 1.0)};
  CHECK(adaptive_delta(Tensor({1, 1, 1, 3}, {11.0, 7.0, 12.0}), gt) == doctest::Approx(0.6));
  CHECK(adaptive_delta(Tensor({1, 1, 1, 3}, 10.0), gt) == kDeltaFloor);
  const DepthMap one = single_pixel(1, 3, 0, 1, 4.0);
  CHECK(adaptive_delta(Tensor({1, 1, 1, 3}, {100.0, 9.0, -50.0}), one) == doctest::Approx(1.0));
  DepthMap empty{Tensor({1, 1, 1, 3}), Tensor({1, 1, 1, 3})};
  CHECK_THROWS_AS(adaptive_delta(Tensor({1, 1, 1, 3}, 1.0), empty), InvalidArgument);
}

TEST_CASE("supervised loss examples") {
  const std::size_t H = 3, W = 4;
  const DepthMap zl = single_pixel(H, W, 1, 2, 5.0), zr = single_pixel(H, W, 0, 3, 8.0);
  // Exact inverse everywhere GT exists.
  Tensor rl({1, 1, H, W}, 0.5), rr({1, 1, H, W}, 0.5);
  rl.at(0, 0, 1, 2) = 1.0 / 5.0;
  rr.at(0, 0, 0, 3) = 1.0 / 8.0;
  CHECK(supervised_loss(rl, rr, zl, zr, raw_sums()) == doctest::Approx(0.0));

  // Residuals 0.4 on both views: delta = 0.08.
  rl.at(0, 0, 1, 2) = 1.0 / 5.4;
  rr.at(0, 0, 0, 3) = 1.0 / 7.6;
  const double want = (0.4 * 0.4 + 0.08 * 0.08) / (2 * 0.08) * 2;
  CHECK(supervised_loss(rl, rr, zl, zr, raw_sums()) == doctest::Approx(want).epsilon(1e-10));
  CHECK(supervised_loss(rr, rl, zr, zl, raw_sums()) == doctest::Approx(want).epsilon(1e-10));
  // Normalized by the two GT pixels.
  CHECK(supervised_loss(rl, rr, zl, zr) == doctest::Approx(want / 2).epsilon(1e-10));

  DepthMap none{Tensor({1, 1, H, W}), Tensor({1, 1, H, W})};
  CHECK_THROWS_AS(supervised_loss(rl, rr, none, none), InvalidArgument);
}

TEST_CASE("unsupervised loss examples") {
  const Tensor img = random_map(1, 6, 10, 1, 0.0, 1.0);
  const std::vector<Calib> c{Calib::make(20.0, 0.5)};
  const Tensor zero({1, 1, 6, 10});
  CHECK(unsupervised_loss(img, img, zero, zero, c) == 0.0);
  const Tensor huge({1, 1, 6, 10}, 5.0);  // disparity 50 px
  CHECK(unsupervised_loss(img, random_map(1, 6, 10, 2, 0.0, 1.0), huge, huge, c) == 0.0);

  SceneConfig sc;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const StereoSample s = gen_scene(sc, seed);
    const std::vector<Calib> cal{s.calib};
    const double at_truth = unsupervised_loss(s.left, s.right, s.true_rho_left, s.true_rho_right, cal);
    for (double f : {0.8, 0.9, 1.1, 1.2}) {
      const double off =
          unsupervised_loss(s.left, s.right, scaled(s.true_rho_left, f), scaled(s.true_rho_right, f), cal);
      CHECK(at_truth <= off);
    }
  }
}

TEST_CASE("regularization loss examples") {
  const std::size_t H = 4, W = 6;
  const Tensor img({1, 1, H, W}, 0.5);
  CHECK(regularization_loss(img, img, Tensor({1, 1, H, W}, 0.3), Tensor({1, 1, H, W}, 0.7)) == 0.0);

  // Unit step between columns 2 and 3: forward difference 1 at column 2 of each row.
  Tensor step({1, 1, H, W});
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 3; x < W; ++x) step.at(0, 0, y, x) = 1.0;
  CHECK(regularization_loss(img, img, step, step, raw_sums()) == doctest::Approx(2.0 * H));
  CHECK(regularization_loss(img, img, step, Tensor({1, 1, H, W}), raw_sums()) == doctest::Approx(1.0 * H));

  // Steeper image gradients mean a smaller penalty.
  const Tensor rho = random_map(1, H, W, 4, 0.0, 0.2);
  const Tensor tex = random_map(1, H, W, 5, 0.0, 0.5);
  const double base = regularization_loss(tex, tex, rho, rho);
  CHECK(regularization_loss(scaled(tex, 2.0), scaled(tex, 2.0), rho, rho) < base);
}

TEST_CASE("lambda schedule") {
  CHECK(lambda_schedule(1, 2.0) == doctest::Approx(2.0 * std::exp(-10.0)).epsilon(1e-14));
  CHECK(lambda_schedule(1, 1.0) == doctest::Approx(4.54e-5).epsilon(1e-3));
  CHECK(lambda_schedule(10, 1.0) == doctest::Approx(0.36788).epsilon(1e-5));
  CHECK(lambda_schedule(100000000, 3.0) == doctest::Approx(3.0).epsilon(1e-6));
  CHECK_THROWS_AS(lambda_schedule(0, 1.0), InvalidArgument);
  double prev = 0.0;
  for (std::int64_t t = 1; t <= 1000; ++t) {
    const double v = lambda_schedule(t, 1.0);
    CHECK(v >= prev);
    prev = v;
  }
}

TEST_CASE("total loss combination") {
  LossWeights w = LossWeights::make(0.5 * std::exp(1.0), 2.0, 10);
  const LossBreakdown b = combine_terms(2.0, 3.0, 1.0, w);
  CHECK(b.lambda_t == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(b.total == doctest::Approx(8.0).epsilon(1e-14));
  w.regularizer = 0.0;
  CHECK(combine_terms(2.0, 3.0, 1.0, w).total == doctest::Approx(7.0).epsilon(1e-14));

  SceneConfig sc;
  sc.gt_density = 0.5;
  const StereoSample s = gen_scene(sc, 9);
  const StereoBatch batch = make_batch({&s});
  const Tensor flat({1, 1, s.height(), s.width()}, 0.05);
  const LossBreakdown zero = total_loss(batch, flat, flat, LossWeights::make(0.0, 0.0, 1));
  CHECK(zero.total == doctest::Approx(0.0));

  const Tensor rl = random_map(1, s.height(), s.width(), 10, 0.03, 0.15);
  const Tensor rr = random_map(1, s.height(), s.width(), 11, 0.03, 0.15);
  const LossBreakdown full = total_loss(batch, rl, rr, LossWeights::make(1.0, 0.5, 7));
  CHECK(full.total == doctest::Approx(full.lambda_t * full.supervised + full.gamma * full.unsupervised +
                                      full.regularizer)
                          .epsilon(1e-12));
  CHECK(full.supervised >= 0.0);
  CHECK(full.unsupervised >= 0.0);
  CHECK(full.regularizer >= 0.0);
}

TEST_CASE("total loss is symmetric under exchanging the views") {
  SceneConfig sc;
  sc.gt_density = 0.3;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const StereoSample s = gen_scene(sc, seed);
    const StereoBatch batch = make_batch({&s});
    const Tensor rl = random_map(1, s.height(), s.width(), seed + 20, 0.02, 0.2);
    const Tensor rr = random_map(1, s.height(), s.width(), seed + 30, 0.02, 0.2);
    const LossWeights w = LossWeights::make(1.0, 0.5, 50);
    LossOptions flipped;
    flipped.warp_sign = -1;
    const LossBreakdown a = total_loss(batch, rl, rr, w);
    const LossBreakdown b = total_loss(batch.swapped(), rr, rl, w, flipped);
    CHECK(std::fabs(a.total - b.total) <= 1e-10 * std::max(1.0, std::fabs(a.total)));
  }
}

TEST_CASE("excluding GT pixels from the alignment term") {
  SceneConfig sc;
  sc.gt_density = 1.0;
  const StereoSample s = gen_scene(sc, 4);
  const StereoBatch batch = make_batch({&s});
  const Tensor rl = random_map(1, s.height(), s.width(), 1, 0.02, 0.2);
  LossOptions o;
  o.unsup_excludes_gt = true;
  // Dense ground truth leaves no pixel for the alignment term.
  CHECK(total_loss(batch, rl, rl, LossWeights::make(1.0, 1.0, 5), o).unsupervised == 0.0);
  CHECK(total_loss(batch, rl, rl, LossWeights::make(1.0, 1.0, 5)).unsupervised > 0.0);
}
