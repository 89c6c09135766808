#include <cmath>
#include <random>

#include "autodiff/ops.hpp"
#include "doctest.h"
#include "geometry/stereo.hpp"
#include "util/error.hpp"

using namespace depthforge;

namespace {

Tensor ramp_image(std::size_t h, std::size_t w, double a, double b) {
  Tensor t({1, 1, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) t.at(0, 0, y, x) = a + b * static_cast<double>(x) + 0.01 * static_cast<double>(y);
  return t;
}

Tensor random_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  Tensor t({1, 1, h, w});
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double& v : t.values()) v = u(rng);
  return t;
}

}  // namespace

TEST_CASE("calibration must be positive") {
  CHECK(Calib::make(72.0, 0.5).fb() == doctest::Approx(36.0));
  CHECK_THROWS_AS(Calib::make(0.0, 0.5), InvalidArgument);
  CHECK_THROWS_AS(Calib::make(72.0, -1.0), InvalidArgument);
}

TEST_CASE("warp_coord examples") {
  const Calib c = Calib::make(100.0, 1.0);
  const PixelCoord x{50.0, 7.0};
  const PixelCoord same = warp_coord(x, 0.0, c, 1);
  CHECK(same.col == 50.0);
  CHECK(same.row == 7.0);
  const PixelCoord w = warp_coord(x, 0.02, c, 1);
  CHECK(w.col == doctest::Approx(48.0));
  CHECK(w.row == 7.0);
  for (double rho : {0.0, 0.013, 0.2, 1.7}) {
    CHECK(warp_coord(x, rho, c, -1).col == doctest::Approx(warp_coord(x, -rho, c, 1).col));
  }
}

TEST_CASE("sample_bilinear examples") {
  const Tensor c({1, 1, 2, 5}, 0.4);
  Tensor cols({1, 1, 2, 5}, 1.3);
  cols[0] = -0.1;
  cols[9] = 4.2;
  const Sampled s = sample_bilinear(c, cols);
  CHECK(s.mask.count() == 8);
  CHECK(s.values[0] == 0.0);
  CHECK(s.values[9] == 0.0);
  for (std::size_t i = 1; i < 9; ++i) CHECK(s.values[i] == doctest::Approx(0.4));

  const Tensor img({1, 1, 1, 4}, {2.0, 6.0, 1.0, 9.0});
  const Sampled ints = sample_bilinear(img, Tensor({1, 1, 1, 4}, {3.0, 2.0, 1.0, 0.0}));
  CHECK(ints.values[0] == 9.0);
  CHECK(ints.values[3] == 2.0);
  CHECK(ints.mask.count() == 4);
  const Sampled mid = sample_bilinear(img, Tensor({1, 1, 1, 4}, 0.5));
  CHECK(mid.values[0] == doctest::Approx(4.0));
}

TEST_CASE("gaussian kernel and smoothing") {
  const std::vector<double> k = gaussian_kernel(1.0);
  REQUIRE(k.size() == 7);
  double z = 0.0;
  for (int i = -3; i <= 3; ++i) z += std::exp(-0.5 * i * i);
  CHECK(k[3] == doctest::Approx(1.0 / z).epsilon(1e-14));
  CHECK(k[3] == doctest::Approx(0.39894 / (z / std::sqrt(2.0 * M_PI))).epsilon(1e-4));
  CHECK(k[0] == doctest::Approx(std::exp(-4.5) / z).epsilon(1e-14));
  CHECK(gaussian_kernel(1.4).size() == 2 * 5 + 1);

  const Tensor c({1, 1, 6, 9}, 0.3);
  const Tensor sc = gaussian_smooth(c, 1.0);
  for (double v : sc.values()) CHECK(v == doctest::Approx(0.3).epsilon(1e-14));

  Tensor imp({1, 1, 11, 11});
  imp.at(0, 0, 5, 5) = 1.0;
  const Tensor g = gaussian_smooth(imp, 1.0);
  CHECK(sum(g) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(g.at(0, 0, 5, 5) == doctest::Approx(k[3] * k[3]).epsilon(1e-14));
  CHECK(g.at(0, 0, 5, 7) == doctest::Approx(k[3] * k[5]).epsilon(1e-14));

  const Tensor r = random_image(7, 10, 3);
  Tensor shifted = r;
  for (double& v : shifted.values()) v += 0.25;
  const Tensor a = gaussian_smooth(r, 1.0), b = gaussian_smooth(shifted, 1.0);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::fabs(b[i] - a[i] - 0.25) < 1e-12);
}

TEST_CASE("reconstruct_view with zero and with huge inverse depth") {
  const Tensor src = random_image(4, 12, 5);
  const Calib c = Calib::make(20.0, 0.5);
  const Sampled same = reconstruct_view(src, Tensor({1, 1, 4, 12}), c, 1);
  CHECK(same.mask.count() == 48);
  for (std::size_t i = 0; i < src.size(); ++i) CHECK(same.values[i] == src[i]);
  // Disparity fb * rho = 13 > W.
  const Sampled none = reconstruct_view(src, Tensor({1, 1, 4, 12}, 1.3), c, 1);
  CHECK(none.mask.count() == 0);
}

TEST_CASE("round trip on a horizontally linear image at constant inverse depth") {
  const std::size_t H = 3, W = 20;
  const Tensor right = ramp_image(H, W, 0.1, 0.04);
  const Calib c = Calib::make(40.0, 0.1);
  const Tensor rho({1, 1, H, W}, 0.6);  // disparity 2.4 px
  const Sampled left = reconstruct_view(right, rho, c, 1);
  const Sampled back = reconstruct_view(left.values, rho, c, -1);
  std::size_t checked = 0;
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      if (!back.mask.at(0, y, x)) continue;
      const double col = static_cast<double>(x) + 2.4;
      const auto i0 = static_cast<std::size_t>(std::floor(col));
      if (!left.mask.at(0, y, i0) || (i0 + 1 < W && !left.mask.at(0, y, i0 + 1))) continue;
      CHECK(std::fabs(back.values.at(0, 0, y, x) - right.at(0, 0, y, x)) < 1e-10);
      ++checked;
    }
  CHECK(checked > 3 * 10);
}

TEST_CASE("valid set shrinks as uniform inverse depth grows") {
  const Tensor src = random_image(2, 16, 8);
  const Calib c = Calib::make(10.0, 1.0);
  Tensor prev_flags;
  for (double rho = 0.0; rho < 1.8; rho += 0.07) {
    const Sampled s = reconstruct_view(src, Tensor({1, 1, 2, 16}, rho), c, 1);
    if (!prev_flags.empty()) {
      for (std::size_t i = 0; i < prev_flags.size(); ++i) CHECK((s.mask.flags[i] <= prev_flags[i]));
    }
    prev_flags = s.mask.flags;
  }
}

TEST_CASE("warp_columns honours per-item calibration") {
  const Tensor rho({2, 1, 1, 3}, 0.5);
  const Tensor cols = warp_columns(rho, {Calib::make(10.0, 1.0), Calib::make(4.0, 1.0)}, 1);
  CHECK(cols.at(0, 0, 0, 2) == doctest::Approx(2.0 - 5.0));
  CHECK(cols.at(1, 0, 0, 2) == doctest::Approx(2.0 - 2.0));
  CHECK_THROWS(warp_columns(rho, {Calib::make(1, 1), Calib::make(1, 1), Calib::make(1, 1)}, 1));
}
