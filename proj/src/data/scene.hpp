#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "geometry/stereo.hpp"
#include "loss/loss.hpp"
#include "tensor/tensor.hpp"

namespace depthforge {

enum class View { kLeft, kRight };

/// Per-pixel provenance of a rendered scene, used by the exactness oracles.
struct SceneTruth {
  /// Index of the visible layer (0 = background), per view, H x W.
  std::vector<int> layer_left, layer_right;
  /// Linear texture piece of the visible layer, per view.
  std::vector<long> piece_left, piece_right;
  std::vector<double> layer_depth;
  std::size_t width = 0, height = 0;

  /// Pixels of `view` whose warp into the other view is exact: over the
  /// +-margin box the source layer is unchanged, and every bilinear pair of the
  /// shifted footprint in the other view lies on that layer within one linear
  /// texture piece and inside the image. Occluded and disoccluded pixels drop out.
  Tensor exact_mask(View view, std::size_t margin, double fb) const;
};

struct StereoSample {
  Tensor left;   // 1 x 1 x H x W in [0, 1]
  Tensor right;
  DepthMap depth_left;
  DepthMap depth_right;
  Calib calib;
  /// Dense inverse depth, synthetic scenes only (empty otherwise).
  Tensor true_rho_left;
  Tensor true_rho_right;
  std::shared_ptr<const SceneTruth> truth;

  std::size_t height() const { return left.dim(2); }
  std::size_t width() const { return left.dim(3); }
  /// Throws ShapeError / InvalidArgument when the contract is violated.
  void validate() const;
};

struct SceneConfig {
  std::size_t width = 64;
  std::size_t height = 32;
  /// Rectangles in front of the full-frame background.
  std::size_t num_layers = 3;
  double depth_min = 6.0;
  double depth_max = 36.0;
  double f_px = 72.0;
  double baseline_m = 0.5;
  /// World-space period of the triangle textures; apparent period shrinks with depth.
  double texture_period_m = 12.0;
  double texture_amplitude = 0.3;
  double vertical_amplitude = 0.1;
  /// Attenuation toward mid-gray with distance, 0 disables.
  double haze = 0.0;
  /// Blend of each layer's mean brightness toward a ramp that brightens with
  /// depth (0 = random brightness, 1 = brightness fixed by depth).
  double depth_shading = 1.0;
  /// Independent Gaussian noise per view, 0 disables (breaks exactness).
  double noise_sigma = 0.0;
  double gt_density = 1.0;
  double gt_rows_band = 1.0;

  void validate() const;
};

/// Layered fronto-parallel rectangles with piecewise-linear textures and exact
/// ground truth in both views. Sparse GT follows gt_density / gt_rows_band.
StereoSample gen_scene(const SceneConfig& cfg, std::uint64_t seed);

/// Uniform random subset of the valid pixels in the lowest rows_band of each
/// image; keeps round(density * eligible) pixels per item.
DepthMap sparsify_gt(const DepthMap& dense, double density, double rows_band, std::uint64_t seed);

struct AugmentRanges {
  double alpha_lo = 0.8, alpha_hi = 1.2;
  double gamma_lo = 0.8, gamma_hi = 1.2;
};

/// I <- clamp(I^gamma * alpha, 0, 1) on both views with one draw per sample.
StereoSample augment(const StereoSample& sample, std::uint64_t seed, const AugmentRanges& ranges = {});
StereoSample augment_with(const StereoSample& sample, double alpha, double gamma);

/// Stacks samples into a loss batch (all the same size).
StereoBatch make_batch(const std::vector<const StereoSample*>& samples);

}  // namespace depthforge
