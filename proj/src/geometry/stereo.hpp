#pragma once

#include <cstddef>
#include <vector>

#include "autodiff/tape.hpp"
#include "tensor/tensor.hpp"

namespace depthforge {

/// Rectified stereo calibration: focal length in pixels, baseline in meters.
struct Calib {
  double f = 0.0;
  double b = 0.0;

  double fb() const { return f * b; }
  /// Throws InvalidArgument unless f > 0 and b > 0.
  static Calib make(double f_px, double baseline_m);
};

/// 0/1 flags over N x 1 x H x W marking pixels whose warped coordinate lands
/// inside the other image.
struct ValidMask {
  Tensor flags;

  std::size_t count() const;
  bool at(std::size_t n, std::size_t y, std::size_t x) const { return flags.at(n, 0, y, x) != 0.0; }
};

/// Metric depth with a validity mask (the sparse ground-truth set), both N x 1 x H x W.
struct DepthMap {
  Tensor depth;
  Tensor valid;

  static DepthMap dense(Tensor depth);
  std::size_t count() const;
};

struct PixelCoord {
  double col;
  double row;
};

/// x - sign * fb * rho along the scanline; sign +1 looks up the right image
/// from the left view, -1 the left image from the right view.
PixelCoord warp_coord(PixelCoord x, double rho, const Calib& calib, int sign);

struct Sampled {
  Tensor values;
  ValidMask mask;
};

/// Linear interpolation along each scanline at per-pixel column coordinates
/// (N x 1 x H x W). A pixel is valid iff its coordinate lies in [0, W - 1];
/// invalid pixels get 0.
Sampled sample_bilinear(const Tensor& image, const Tensor& cols);

/// Normalized Gaussian taps of radius ceil(3 sigma).
std::vector<double> gaussian_kernel(double sigma);

/// Separable Gaussian blur with edge replication.
Tensor gaussian_smooth(const Tensor& image, double sigma = 1.0);

/// Warped column coordinates for every pixel of rho (N x 1 x H x W).
/// `calib` holds one entry per batch item, or one entry for all.
Tensor warp_columns(const Tensor& rho, const std::vector<Calib>& calib, int sign);

/// Reconstructs the view of `rho` by sampling `source` at the warped pixels.
Sampled reconstruct_view(const Tensor& source, const Tensor& rho, const std::vector<Calib>& calib, int sign);
Sampled reconstruct_view(const Tensor& source, const Tensor& rho, const Calib& calib, int sign);

namespace ad {

/// Differentiable warp_columns (gradient to rho).
Var warp_columns(const Var& rho, const std::vector<Calib>& calib, int sign);

/// Differentiable sample_bilinear: gradients flow to both the image and the
/// column coordinates. Writes the validity mask to `mask` when non-null.
Var sample_bilinear(const Var& image, const Var& cols, ValidMask* mask);

}  // namespace ad
}  // namespace depthforge
