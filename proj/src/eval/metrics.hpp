#pragma once

#include <optional>
#include <string>
#include <vector>

#include "geometry/stereo.hpp"
#include "tensor/tensor.hpp"

namespace depthforge {

/// Fractional rectangle [top, bottom) x [left, right) of the image; pixel
/// bounds are truncated toward zero.
struct CropRect {
  double top = 0.0, bottom = 1.0, left = 0.0, right = 1.0;
};

/// Rows 40.81%..99.19%, columns 3.59%..96.41%.
CropRect eigen_crop();

struct Protocol {
  std::string name;
  double gt_min = 0.0;
  double gt_max = 0.0;
  std::optional<std::pair<double, double>> pred_clamp;
  std::optional<CropRect> crop;

  void validate() const;

  static Protocol eigen80(const CropRect& crop = eigen_crop());
  static Protocol garg50(const CropRect& crop = eigen_crop());
  static Protocol ablation();
  /// Throws InvalidArgument listing known_names() for anything else.
  static Protocol by_name(const std::string& name);
  static const std::vector<std::string>& known_names();
};

struct DepthPairs {
  std::vector<double> pred;
  std::vector<double> gt;
  std::size_t size() const { return gt.size(); }
  void append(const DepthPairs& other);
};

/// Collects (prediction, ground truth) depth pairs that survive the protocol.
/// Tensors are N x 1 x H x W (or any shape matching the map). Throws when nothing
/// survives unless `allow_empty`.
DepthPairs apply_protocol(const Tensor& pred_depth, const DepthMap& gt, const Protocol& protocol,
                          bool allow_empty = false);

struct Metrics {
  double rmse = 0.0;
  double rmse_log = 0.0;
  double ard = 0.0;
  double srd = 0.0;
  double acc1 = 0.0, acc2 = 0.0, acc3 = 0.0;
  std::size_t count = 0;
};

/// Errors with natural log; accuracy counts max(p/z, z/p) < 1.25^k strictly.
Metrics compute_metrics(const DepthPairs& pairs);

/// Depth from inverse depth, elementwise 1 / rho; nonpositive rho maps to +inf.
Tensor depth_from_inverse(const Tensor& rho);

/// "rmse,rmse_log,ard,srd,acc1,acc2,acc3"
std::string metrics_csv_header();
std::string metrics_csv_row(const Metrics& m);

}  // namespace depthforge
