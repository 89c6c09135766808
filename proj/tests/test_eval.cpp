#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "eval/metrics.hpp"
#include "util/error.hpp"
#include "verify/oracles.hpp"

using namespace depthforge;

namespace {

DepthMap dense(std::size_t h, std::size_t w, double z) {
  return {Tensor({1, 1, h, w}, z), Tensor({1, 1, h, w}, 1.0)};
}

Metrics single(double p, double z) {
  DepthPairs d;
  d.pred = {p};
  d.gt = {z};
  return compute_metrics(d);
}

}  // namespace

TEST_CASE("perfect prediction") {
  const DepthPairs p = random_pairs(50, 1);
  DepthPairs same{p.gt, p.gt};
  const Metrics m = compute_metrics(same);
  CHECK(m.rmse == 0.0);
  CHECK(m.rmse_log == 0.0);
  CHECK(m.ard == 0.0);
  CHECK(m.srd == 0.0);
  CHECK(m.acc1 == 1.0);
  CHECK(m.acc3 == 1.0);
  CHECK(m.count == 50);
}

TEST_CASE("hand-evaluated metric cases") {
  const Metrics m = single(3.0, 1.0);
  CHECK(m.rmse == doctest::Approx(2.0));
  CHECK(m.ard == doctest::Approx(2.0));
  CHECK(m.srd == doctest::Approx(4.0));
  CHECK(m.rmse_log == doctest::Approx(std::log(3.0)));

  DepthPairs two;
  two.pred = {2.0, 1.0};
  two.gt = {1.0, 2.0};
  const Metrics t = compute_metrics(two);
  CHECK(t.acc1 == 0.0);
  CHECK(t.acc2 == 0.0);
  CHECK(t.acc3 == 0.0);  // 2 >= 1.25^3 = 1.953125

  // Strict comparison exactly at the threshold.
  CHECK(single(1.25, 1.0).acc1 == 0.0);
  CHECK(single(1.2499, 1.0).acc1 == 1.0);
}

TEST_CASE("compute_metrics rejects bad input") {
  DepthPairs p;
  CHECK_THROWS_AS(compute_metrics(p), InvalidArgument);
  p.pred = {1.0, 0.0};
  p.gt = {1.0, 1.0};
  CHECK_THROWS_AS(compute_metrics(p), InvalidArgument);
  p.pred = {1.0};
  CHECK_THROWS_AS(compute_metrics(p), InvalidArgument);
  p.pred = {1.0, -2.0};
  CHECK_THROWS_AS(compute_metrics(p), InvalidArgument);
}

TEST_CASE("metrics match the scalar-loop oracle") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const DepthPairs p = random_pairs(1 + seed * 10, seed);
    CHECK(metrics_max_difference(compute_metrics(p), reference_metrics(p)) < 1e-12);
  }
}

TEST_CASE("metric properties: permutation, joint scaling, ordered accuracies") {
  std::mt19937_64 rng(5);
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    DepthPairs p = random_pairs(200, seed + 100);
    const Metrics m = compute_metrics(p);
    CHECK(m.acc1 <= m.acc2);
    CHECK(m.acc2 <= m.acc3);
    CHECK(m.acc3 <= 1.0);
    CHECK(m.acc1 >= 0.0);

    std::vector<std::size_t> order(p.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    DepthPairs q;
    for (std::size_t i : order) {
      q.pred.push_back(p.pred[i]);
      q.gt.push_back(p.gt[i]);
    }
    CHECK(metrics_max_difference(compute_metrics(q), m) < 1e-12);

    const double c = 0.5 + static_cast<double>(seed) / 7.0;
    DepthPairs s = p;
    for (double& v : s.pred) v *= c;
    for (double& v : s.gt) v *= c;
    const Metrics ms = compute_metrics(s);
    CHECK(ms.rmse == doctest::Approx(c * m.rmse).epsilon(1e-12));
    CHECK(ms.srd == doctest::Approx(c * m.srd).epsilon(1e-12));
    CHECK(ms.ard == doctest::Approx(m.ard).epsilon(1e-12));
    CHECK(ms.rmse_log == doctest::Approx(m.rmse_log).epsilon(1e-10));
    // Ratios may move by one ulp at a threshold; none of the random pairs sit there.
    CHECK(ms.acc1 == m.acc1);
    CHECK(ms.acc2 == m.acc2);
    CHECK(ms.acc3 == m.acc3);
  }
}

TEST_CASE("protocol clamping and windows") {
  const DepthMap one = dense(1, 1, 1.0);
  SUBCASE("garg50 clamps predictions into [1, 50]") {
    const DepthPairs lo = apply_protocol(Tensor({1, 1, 1, 1}, 0.4), one, Protocol::garg50(CropRect{}));
    CHECK(lo.pred.at(0) == 1.0);
    const DepthPairs hi = apply_protocol(Tensor({1, 1, 1, 1}, 70.0), dense(1, 1, 20.0), Protocol::garg50(CropRect{}));
    CHECK(hi.pred.at(0) == 50.0);
    const DepthPairs half = apply_protocol(Tensor({1, 1, 4, 4}, 0.5), dense(4, 4, 1.0), Protocol::garg50(CropRect{}));
    CHECK(compute_metrics(half).rmse == 0.0);
    CHECK_THROWS_AS(apply_protocol(Tensor({1, 1, 1, 1}, 3.0), dense(1, 1, 60.0), Protocol::garg50(CropRect{})),
                    InvalidArgument);
  }
  SUBCASE("eigen80 excludes GT beyond 80 m and caps predictions") {
    DepthMap gt = dense(1, 2, 92.0);
    gt.depth[1] = 40.0;
    const DepthPairs p = apply_protocol(Tensor({1, 1, 1, 2}, 120.0), gt, Protocol::eigen80(CropRect{}));
    REQUIRE(p.size() == 1);
    CHECK(p.gt[0] == 40.0);
    CHECK(p.pred[0] == 80.0);
  }
  SUBCASE("ablation floor at 5 m, no cap, no crop") {
    DepthMap gt = dense(1, 3, 4.0);
    gt.depth[1] = 5.0;
    gt.depth[2] = 300.0;
    const DepthPairs p = apply_protocol(Tensor({1, 1, 1, 3}, 500.0), gt, Protocol::ablation());
    REQUIRE(p.size() == 2);
    CHECK(p.gt[0] == 5.0);
    CHECK(p.pred[1] == 500.0);
  }
  SUBCASE("invalid GT pixels and the crop") {
    DepthMap gt = dense(10, 10, 10.0);
    gt.valid.at(0, 0, 9, 5) = 0.0;
    const Protocol e = Protocol::eigen80();
    const DepthPairs p = apply_protocol(Tensor({1, 1, 10, 10}, 10.0), gt, e);
    // Rows 4..8 (0.408 * 10 -> 4, 0.992 * 10 -> 9), cols 0..8.
    CHECK(p.size() == 5 * 9);
    CHECK(apply_protocol(Tensor({1, 1, 10, 10}, 10.0), gt, Protocol::ablation()).size() == 99);
  }
  SUBCASE("NaN prediction and shape mismatch") {
    CHECK_THROWS_AS(apply_protocol(Tensor({1, 1, 1, 1}, NAN), dense(1, 1, 10.0), Protocol::ablation()), NumericError);
    CHECK_THROWS_AS(apply_protocol(Tensor({1, 1, 2, 1}, 1.0), one, Protocol::ablation()), ShapeError);
  }
}

TEST_CASE("protocol lookup and validation") {
  CHECK(Protocol::by_name("garg50").gt_max == 50.0);
  try {
    Protocol::by_name("kitti");
    FAIL("expected InvalidArgument");
  } catch (const InvalidArgument& e) {
    const std::string msg = e.what();
    for (const auto& n : Protocol::known_names()) CHECK(msg.find(n) != std::string::npos);
  }
  Protocol bad = Protocol::eigen80(CropRect{0.6, 0.4, 0.0, 1.0});
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  const CropRect c = eigen_crop();
  CHECK(c.top == doctest::Approx(0.40810811));
  CHECK(c.right == doctest::Approx(0.96405229));
}

TEST_CASE("metrics csv row") {
  CHECK(metrics_csv_header() == "rmse,rmse_log,ard,srd,acc1,acc2,acc3");
  CHECK(metrics_csv_row(single(3.0, 1.0)) == "2.000000,1.098612,2.000000,4.000000,0.000000,0.000000,0.000000");
}

TEST_CASE("inverse depth conversion") {
  const Tensor d = depth_from_inverse(Tensor({3}, {0.5, 0.0, -1.0}));
  CHECK(d[0] == 2.0);
  CHECK(std::isinf(d[1]));
  CHECK(std::isinf(d[2]));
}
