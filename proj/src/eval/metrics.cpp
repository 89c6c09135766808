#include "eval/metrics.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "util/error.hpp"

namespace depthforge {

CropRect eigen_crop() { return {0.40810811, 0.99189189, 0.03594771, 0.96405229}; }

void Protocol::validate() const {
  if (!(gt_min >= 0.0) || !(gt_min < gt_max)) throw InvalidArgument("protocol " + name + ": need 0 <= gt_min < gt_max");
  if (pred_clamp && !(pred_clamp->first > 0.0 && pred_clamp->first <= pred_clamp->second)) {
    throw InvalidArgument("protocol " + name + ": prediction clamp bounds must be positive and ordered");
  }
  if (crop) {
    const CropRect& c = *crop;
    if (!(0.0 <= c.top && c.top < c.bottom && c.bottom <= 1.0 && 0.0 <= c.left && c.left < c.right &&
          c.right <= 1.0)) {
      throw InvalidArgument("protocol " + name + ": crop fractions must be ordered within [0, 1]");
    }
  }
}

Protocol Protocol::eigen80(const CropRect& crop) {
  Protocol p;
  p.name = "eigen80";
  p.gt_min = 1e-3;
  p.gt_max = 80.0;
  p.pred_clamp = std::pair{1e-3, 80.0};
  p.crop = crop;
  return p;
}

Protocol Protocol::garg50(const CropRect& crop) {
  Protocol p;
  p.name = "garg50";
  p.gt_min = 1.0;
  p.gt_max = 50.0;
  p.pred_clamp = std::pair{1.0, 50.0};
  p.crop = crop;
  return p;
}

Protocol Protocol::ablation() {
  Protocol p;
  p.name = "ablation";
  p.gt_min = 5.0;
  p.gt_max = std::numeric_limits<double>::infinity();
  return p;
}

const std::vector<std::string>& Protocol::known_names() {
  static const std::vector<std::string> names = {"eigen80", "garg50", "ablation"};
  return names;
}

Protocol Protocol::by_name(const std::string& name) {
  if (name == "eigen80") return eigen80();
  if (name == "garg50") return garg50();
  if (name == "ablation") return ablation();
  std::string list;
  for (const auto& n : known_names()) list += (list.empty() ? "" : ", ") + n;
  throw InvalidArgument("unknown protocol '" + name + "' (known: " + list + ")");
}

void DepthPairs::append(const DepthPairs& other) {
  pred.insert(pred.end(), other.pred.begin(), other.pred.end());
  gt.insert(gt.end(), other.gt.begin(), other.gt.end());
}

DepthPairs apply_protocol(const Tensor& pred_depth, const DepthMap& gt, const Protocol& protocol, bool allow_empty) {
  protocol.validate();
  if (!pred_depth.same_shape(gt.depth) || !gt.valid.same_shape(gt.depth)) {
    throw ShapeError("apply_protocol: prediction " + shape_string(pred_depth.shape()) + " vs ground truth " +
                     shape_string(gt.depth.shape()));
  }
  if (pred_depth.rank() < 2) throw ShapeError("apply_protocol: need at least a 2-d map");
  const std::size_t H = pred_depth.dim(pred_depth.rank() - 2);
  const std::size_t W = pred_depth.dim(pred_depth.rank() - 1);
  std::size_t y0 = 0, y1 = H, x0 = 0, x1 = W;
  if (protocol.crop) {
    y0 = static_cast<std::size_t>(protocol.crop->top * static_cast<double>(H));
    y1 = static_cast<std::size_t>(protocol.crop->bottom * static_cast<double>(H));
    x0 = static_cast<std::size_t>(protocol.crop->left * static_cast<double>(W));
    x1 = static_cast<std::size_t>(protocol.crop->right * static_cast<double>(W));
  }
  DepthPairs out;
  const std::size_t planes = pred_depth.size() / (H * W);
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = y0; y < y1; ++y) {
      for (std::size_t x = x0; x < x1; ++x) {
        const std::size_t i = (p * H + y) * W + x;
        if (gt.valid[i] == 0.0) continue;
        const double z = gt.depth[i];
        if (z < protocol.gt_min || z > protocol.gt_max) continue;
        double d = pred_depth[i];
        if (std::isnan(d)) throw NumericError("apply_protocol: NaN prediction");
        if (protocol.pred_clamp) d = std::clamp(d, protocol.pred_clamp->first, protocol.pred_clamp->second);
        out.pred.push_back(d);
        out.gt.push_back(z);
      }
    }
  }
  if (out.size() == 0 && !allow_empty) {
    throw InvalidArgument("apply_protocol: no ground-truth pixel survives the " + protocol.name + " protocol");
  }
  return out;
}

Metrics compute_metrics(const DepthPairs& pairs) {
  if (pairs.pred.size() != pairs.gt.size()) throw InvalidArgument("compute_metrics: ragged pair lists");
  if (pairs.gt.empty()) throw InvalidArgument("compute_metrics: no pairs");
  const auto n = static_cast<Eigen::Index>(pairs.gt.size());
  const Eigen::Map<const Eigen::ArrayXd> p(pairs.pred.data(), n);
  const Eigen::Map<const Eigen::ArrayXd> z(pairs.gt.data(), n);
  if (!((p > 0.0).all() && (z > 0.0).all())) throw InvalidArgument("compute_metrics: depths must be positive");
  if (!(z.isFinite().all())) throw InvalidArgument("compute_metrics: ground truth must be finite");
  if ((p.isNaN()).any()) throw InvalidArgument("compute_metrics: NaN prediction");

  const Eigen::ArrayXd diff = p - z;
  const Eigen::ArrayXd ratio = (p / z).max(z / p);
  Metrics m;
  m.count = pairs.gt.size();
  const double dn = static_cast<double>(n);
  m.rmse = std::sqrt(diff.square().sum() / dn);
  m.rmse_log = std::sqrt((p.log() - z.log()).square().sum() / dn);
  m.ard = (diff.abs() / z).sum() / dn;
  m.srd = (diff.square() / z).sum() / dn;
  m.acc1 = static_cast<double>((ratio < 1.25).count()) / dn;
  m.acc2 = static_cast<double>((ratio < 1.25 * 1.25).count()) / dn;
  m.acc3 = static_cast<double>((ratio < 1.25 * 1.25 * 1.25).count()) / dn;
  return m;
}

Tensor depth_from_inverse(const Tensor& rho) {
  Tensor out = rho;
  for (double& v : out.values()) v = v > 0.0 ? 1.0 / v : std::numeric_limits<double>::infinity();
  return out;
}

std::string metrics_csv_header() { return "rmse,rmse_log,ard,srd,acc1,acc2,acc3"; }

std::string metrics_csv_row(const Metrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f", m.rmse, m.rmse_log, m.ard, m.srd, m.acc1,
                m.acc2, m.acc3);
  return buf;
}

}  // namespace depthforge
