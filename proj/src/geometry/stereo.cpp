#include "geometry/stereo.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "util/error.hpp"
#include "util/faults.hpp"

namespace depthforge {
namespace {

int effective_sign(int sign) {
  if (sign != 1 && sign != -1) throw InvalidArgument("warp sign must be +1 or -1, got " + std::to_string(sign));
  return fault_active(Fault::kWarpSignFlip) ? -sign : sign;
}

double fb_for(const std::vector<Calib>& calib, std::size_t n, std::size_t batch) {
  if (calib.size() == 1) return calib.front().fb();
  if (calib.size() != batch) {
    throw ShapeError("calibration count " + std::to_string(calib.size()) + " does not match batch " + std::to_string(batch));
  }
  return calib[n].fb();
}

struct Footprint {
  std::size_t x0;
  double frac;
  bool valid;
};

Footprint footprint(double col, std::size_t width) {
  if (!std::isfinite(col)) throw NumericError("sample_bilinear: non-finite coordinate");
  const double hi = static_cast<double>(width - 1);
  if (col < 0.0 || col > hi) return {0, 0.0, false};
  if (width == 1) return {0, 0.0, true};
  auto x0 = static_cast<std::size_t>(std::floor(col));
  if (x0 >= width - 1) x0 = width - 2;
  return {x0, col - static_cast<double>(x0), true};
}

void check_pair(const Tensor& image, const Tensor& cols) {
  require_rank4(image, "sample_bilinear image");
  if (image.dim(1) != 1) throw ShapeError("sample_bilinear: expected single-channel image, got " + shape_string(image.shape()));
  require_shape(cols, image.shape(), "sample_bilinear coordinates");
}

}  // namespace

Calib Calib::make(double f_px, double baseline_m) {
  if (!(f_px > 0.0) || !(baseline_m > 0.0) || !std::isfinite(f_px) || !std::isfinite(baseline_m)) {
    throw InvalidArgument("calibration requires f > 0 and b > 0 (got f=" + std::to_string(f_px) +
                          ", b=" + std::to_string(baseline_m) + ")");
  }
  return Calib{f_px, baseline_m};
}

std::size_t ValidMask::count() const {
  std::size_t c = 0;
  for (double v : flags.values()) c += v != 0.0;
  return c;
}

DepthMap DepthMap::dense(Tensor depth) {
  Tensor valid(depth.shape(), 1.0);
  return {std::move(depth), std::move(valid)};
}

std::size_t DepthMap::count() const {
  std::size_t c = 0;
  for (double v : valid.values()) c += v != 0.0;
  return c;
}

PixelCoord warp_coord(PixelCoord x, double rho, const Calib& calib, int sign) {
  return {x.col - effective_sign(sign) * calib.fb() * rho, x.row};
}

Sampled sample_bilinear(const Tensor& image, const Tensor& cols) {
  check_pair(image, cols);
  const Dims4 d = image.dims4();
  Sampled out{Tensor(image.shape()), ValidMask{Tensor(image.shape())}};
  for (std::size_t row = 0; row < d.n * d.h; ++row) {
    const double* src = image.data() + row * d.w;
    for (std::size_t x = 0; x < d.w; ++x) {
      const std::size_t i = row * d.w + x;
      const Footprint fp = footprint(cols[i], d.w);
      if (!fp.valid) continue;
      out.mask.flags[i] = 1.0;
      out.values[i] = d.w == 1 ? src[0] : src[fp.x0] * (1.0 - fp.frac) + src[fp.x0 + 1] * fp.frac;
    }
  }
  return out;
}

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) throw InvalidArgument("gaussian_kernel: sigma must be > 0");
  const auto radius = static_cast<std::size_t>(std::ceil(3.0 * sigma));
  std::vector<double> taps(2 * radius + 1);
  double total = 0.0;
  for (std::size_t i = 0; i < taps.size(); ++i) {
    const double x = static_cast<double>(i) - static_cast<double>(radius);
    taps[i] = std::exp(-x * x / (2.0 * sigma * sigma));
    total += taps[i];
  }
  for (double& t : taps) t /= total;
  return taps;
}

Tensor gaussian_smooth(const Tensor& image, double sigma) {
  require_rank4(image, "gaussian_smooth image");
  const std::vector<double> taps = gaussian_kernel(sigma);
  const auto radius = static_cast<std::ptrdiff_t>(taps.size() / 2);
  const Dims4 d = image.dims4();
  const auto h = static_cast<std::ptrdiff_t>(d.h);
  const auto w = static_cast<std::ptrdiff_t>(d.w);
  Tensor tmp(image.shape());
  Tensor out(image.shape());
  for (std::size_t p = 0; p < d.n * d.c; ++p) {
    const double* src = image.data() + p * d.h * d.w;
    double* mid = tmp.data() + p * d.h * d.w;
    double* dst = out.data() + p * d.h * d.w;
    for (std::ptrdiff_t y = 0; y < h; ++y) {
      for (std::ptrdiff_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
          acc += taps[static_cast<std::size_t>(k + radius)] * src[y * w + std::clamp(x + k, std::ptrdiff_t{0}, w - 1)];
        }
        mid[y * w + x] = acc;
      }
    }
    for (std::ptrdiff_t y = 0; y < h; ++y) {
      for (std::ptrdiff_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
          acc += taps[static_cast<std::size_t>(k + radius)] * mid[std::clamp(y + k, std::ptrdiff_t{0}, h - 1) * w + x];
        }
        dst[y * w + x] = acc;
      }
    }
  }
  return out;
}

Tensor warp_columns(const Tensor& rho, const std::vector<Calib>& calib, int sign) {
  require_rank4(rho, "warp_columns rho");
  const int s = effective_sign(sign);
  const Dims4 d = rho.dims4();
  Tensor cols(rho.shape());
  for (std::size_t n = 0; n < d.n; ++n) {
    const double fb = fb_for(calib, n, d.n);
    for (std::size_t c = 0; c < d.c; ++c) {
      for (std::size_t y = 0; y < d.h; ++y) {
        for (std::size_t x = 0; x < d.w; ++x) {
          cols.at(n, c, y, x) = static_cast<double>(x) - s * fb * rho.at(n, c, y, x);
        }
      }
    }
  }
  return cols;
}

Sampled reconstruct_view(const Tensor& source, const Tensor& rho, const std::vector<Calib>& calib, int sign) {
  require_shape(rho, source.shape(), "reconstruct_view rho");
  return sample_bilinear(source, warp_columns(rho, calib, sign));
}

Sampled reconstruct_view(const Tensor& source, const Tensor& rho, const Calib& calib, int sign) {
  return reconstruct_view(source, rho, std::vector<Calib>{calib}, sign);
}

namespace ad {

Var warp_columns(const Var& rho, const std::vector<Calib>& calib, int sign) {
  Tensor cols = depthforge::warp_columns(rho.value(), calib, sign);
  const int s = effective_sign(sign);
  return rho.tape().record("warp_columns", std::move(cols), {rho}, [rho, calib, s](Tape& t, const Tensor& g) {
    Tensor& acc = t.adjoint(rho);
    const Dims4 d = acc.dims4();
    const std::size_t per_item = d.c * d.h * d.w;
    for (std::size_t n = 0; n < d.n; ++n) {
      const double k = -s * fb_for(calib, n, d.n);
      for (std::size_t i = n * per_item; i < (n + 1) * per_item; ++i) acc[i] += k * g[i];
    }
  });
}

Var sample_bilinear(const Var& image, const Var& cols, ValidMask* mask) {
  Sampled s = depthforge::sample_bilinear(image.value(), cols.value());
  auto flags = std::make_shared<Tensor>(s.mask.flags);
  if (mask) *mask = s.mask;
  return image.tape().record("sample_bilinear", std::move(s.values), {image, cols},
                             [image, cols, flags](Tape& t, const Tensor& g) {
                               const Tensor& img = image.value();
                               const Tensor& c = cols.value();
                               const Dims4 d = img.dims4();
                               const bool want_img = t.requires_grad(image);
                               const bool want_cols = t.requires_grad(cols);
                               Tensor* gi = want_img ? &t.adjoint(image) : nullptr;
                               Tensor* gc = want_cols ? &t.adjoint(cols) : nullptr;
                               for (std::size_t row = 0; row < d.n * d.h; ++row) {
                                 const std::size_t base = row * d.w;
                                 for (std::size_t x = 0; x < d.w; ++x) {
                                   const std::size_t i = base + x;
                                   if ((*flags)[i] == 0.0 || d.w == 1) {
                                     if ((*flags)[i] != 0.0 && gi) (*gi)[base] += g[i];
                                     continue;
                                   }
                                   const Footprint fp = footprint(c[i], d.w);
                                   if (gi) {
                                     (*gi)[base + fp.x0] += g[i] * (1.0 - fp.frac);
                                     (*gi)[base + fp.x0 + 1] += g[i] * fp.frac;
                                   }
                                   if (gc) (*gc)[i] += g[i] * (img[base + fp.x0 + 1] - img[base + fp.x0]);
                                 }
                               }
                             });
}

}  // namespace ad
}  // namespace depthforge
