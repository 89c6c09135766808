#pragma once

#include <cstdint>
#include <vector>

#include "autodiff/tape.hpp"
#include "geometry/stereo.hpp"
#include "tensor/tensor.hpp"

namespace depthforge {

struct LossWeights {
  double beta = 1.0;   // asymptotic supervised weight
  double gamma = 0.5;  // unsupervised weight
  std::int64_t t = 1;  // optimizer iteration, >= 1
  /// Weight of the smoothness term (1 in the standard objective).
  double regularizer = 1.0;

  static LossWeights make(double beta, double gamma, std::int64_t t);
};

enum class SupervisedNorm { kBerhu, kL2 };

struct LossOptions {
  /// Gaussian presmoothing of both images; 0 disables it.
  double sigma = 1.0;
  /// Edge-aware weight exp(-eta * |grad I|) with I scaled to 0..intensity_scale.
  double eta = 1.0 / 255.0;
  double intensity_scale = 255.0;
  /// Divide each term by its pixel count (GT pixels for the supervised term,
  /// all pixels of both views for the other two).
  bool normalize_terms = true;
  /// Evaluate the alignment term only where no ground truth exists.
  bool unsup_excludes_gt = false;
  SupervisedNorm supervised_norm = SupervisedNorm::kBerhu;
  /// Positive: use this berHu threshold instead of the adaptive one. Lets a
  /// finite-difference check hold the (detached) threshold constant.
  double fixed_delta = 0.0;
  /// Which way the left view warps into the right one (+1 normal, -1 with the views exchanged).
  int warp_sign = 1;
};

struct LossBreakdown {
  double supervised = 0.0;
  double unsupervised = 0.0;
  double regularizer = 0.0;
  double lambda_t = 0.0;
  double gamma = 0.0;
  double total = 0.0;
  double delta = 0.0;
};

/// Batched inputs of the combined loss; every tensor is N x 1 x H x W,
/// images in [0, 1], depth in meters.
struct StereoBatch {
  Tensor left;
  Tensor right;
  DepthMap depth_left;
  DepthMap depth_right;
  std::vector<Calib> calib;  // one per item

  std::size_t size() const { return left.empty() ? 0 : left.dim(0); }
  /// Exchanges the two views.
  StereoBatch swapped() const;
};

constexpr double kDeltaFloor = 1e-6;
constexpr double kRhoFloor = 1e-6;

/// Reverse Huber: |d| up to delta, (d^2 + delta^2) / (2 delta) beyond.
double berhu(double d, double delta);
double berhu_derivative(double d, double delta);

/// 0.2 * max |1/rho - Z| over the ground-truth pixels, floored at kDeltaFloor.
double adaptive_delta(const Tensor& pred_depth, const DepthMap& gt);
/// Same, pooled over several (prediction, ground truth) pairs.
double adaptive_delta(const std::vector<const Tensor*>& pred_depth, const std::vector<const DepthMap*>& gt);

/// beta * exp(-10 / t).
double lambda_schedule(std::int64_t t, double beta);

namespace ad {

/// Supervised term over both views. delta is pooled over both views and the
/// whole batch and held constant for differentiation.
Var supervised_loss(const Var& rho_l, const Var& rho_r, const DepthMap& z_l, const DepthMap& z_r,
                    const LossOptions& options, double* delta_out = nullptr);

/// Direct alignment error in both directions over the valid warped pixels.
/// `pixels_l` / `pixels_r` optionally restrict the evaluated pixel sets.
Var unsupervised_loss(const Tensor& image_l, const Tensor& image_r, const Var& rho_l, const Var& rho_r,
                      const std::vector<Calib>& calib, const LossOptions& options, const Tensor* pixels_l = nullptr,
                      const Tensor* pixels_r = nullptr);

/// Edge-aware smoothness of both inverse-depth maps (forward differences).
Var regularization_loss(const Tensor& image_l, const Tensor& image_r, const Var& rho_l, const Var& rho_r,
                        const LossOptions& options);

struct TotalLoss {
  Var total;
  LossBreakdown breakdown;
};

/// lambda_t * L_S + gamma * L_U + w_R * L_R.
TotalLoss total_loss(const StereoBatch& batch, const Var& rho_l, const Var& rho_r, const LossWeights& weights,
                     const LossOptions& options);

}  // namespace ad

// Evaluation without gradients.
double supervised_loss(const Tensor& rho_l, const Tensor& rho_r, const DepthMap& z_l, const DepthMap& z_r,
                       const LossOptions& options = {});
double unsupervised_loss(const Tensor& image_l, const Tensor& image_r, const Tensor& rho_l, const Tensor& rho_r,
                         const std::vector<Calib>& calib, const LossOptions& options = {},
                         const Tensor* pixels_l = nullptr, const Tensor* pixels_r = nullptr);
double regularization_loss(const Tensor& image_l, const Tensor& image_r, const Tensor& rho_l, const Tensor& rho_r,
                           const LossOptions& options = {});
LossBreakdown total_loss(const StereoBatch& batch, const Tensor& rho_l, const Tensor& rho_r,
                         const LossWeights& weights, const LossOptions& options = {});

/// lambda_t * L_S + gamma * L_U + L_R from already-evaluated components.
LossBreakdown combine_terms(double supervised, double unsupervised, double regularizer, const LossWeights& weights);

}  // namespace depthforge
