#include "loss/loss.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "autodiff/ops.hpp"
#include "util/error.hpp"
#include "util/faults.hpp"

namespace depthforge {
namespace {

double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void check_map(const Tensor& rho, const DepthMap& z, const char* what) {
  require_rank4(rho, what);
  require_shape(z.depth, rho.shape(), what);
  require_shape(z.valid, rho.shape(), what);
}

double residual(double rho, double z) { return 1.0 / std::max(rho, kRhoFloor) - z; }

double norm_value(double d, double delta, SupervisedNorm norm) {
  return norm == SupervisedNorm::kL2 ? d * d : berhu(d, delta);
}

double norm_derivative(double d, double delta, SupervisedNorm norm) {
  return norm == SupervisedNorm::kL2 ? 2.0 * d : berhu_derivative(d, delta);
}

Tensor smoothed(const Tensor& image, double sigma) { return sigma > 0.0 ? gaussian_smooth(image, sigma) : image; }

Tensor complement(const Tensor& valid) {
  Tensor out(valid.shape());
  for (std::size_t i = 0; i < valid.size(); ++i) out[i] = valid[i] != 0.0 ? 0.0 : 1.0;
  return out;
}

// Forward differences with zero at the last column / row.
double diff_x(const Tensor& t, std::size_t i, std::size_t x, std::size_t w) { return x + 1 < w ? t[i + 1] - t[i] : 0.0; }
double diff_y(const Tensor& t, std::size_t i, std::size_t y, std::size_t h, std::size_t w) {
  return y + 1 < h ? t[i + w] - t[i] : 0.0;
}

struct EdgeWeights {
  Tensor wx;
  Tensor wy;
};

EdgeWeights edge_weights(const Tensor& image, const LossOptions& o) {
  const Dims4 d = image.dims4();
  EdgeWeights e{Tensor(image.shape()), Tensor(image.shape())};
  const double k = o.eta * o.intensity_scale;
  for (std::size_t p = 0; p < d.n * d.c; ++p) {
    for (std::size_t y = 0; y < d.h; ++y) {
      for (std::size_t x = 0; x < d.w; ++x) {
        const std::size_t i = (p * d.h + y) * d.w + x;
        e.wx[i] = std::exp(-k * std::abs(diff_x(image, i, x, d.w)));
        e.wy[i] = std::exp(-k * std::abs(diff_y(image, i, y, d.h, d.w)));
      }
    }
  }
  return e;
}

}  // namespace

LossWeights LossWeights::make(double beta, double gamma, std::int64_t t) {
  if (!(beta >= 0.0) || !(gamma >= 0.0)) throw InvalidArgument("loss weights must be nonnegative");
  if (t < 1) throw InvalidArgument("iteration counter t must be >= 1, got " + std::to_string(t));
  return {beta, gamma, t};
}

StereoBatch StereoBatch::swapped() const { return {right, left, depth_right, depth_left, calib}; }

double berhu(double d, double delta) {
  if (!(delta > 0.0)) throw InvalidArgument("berhu: delta must be > 0");
  const double a = std::abs(d);
  const bool linear = fault_active(Fault::kBerhuBranchSwap) ? a > delta : a <= delta;
  return linear ? a : (d * d + delta * delta) / (2.0 * delta);
}

double berhu_derivative(double d, double delta) {
  if (!(delta > 0.0)) throw InvalidArgument("berhu: delta must be > 0");
  const double a = std::abs(d);
  const bool linear = fault_active(Fault::kBerhuBranchSwap) ? a > delta : a <= delta;
  return linear ? sign_of(d) : d / delta;
}

double adaptive_delta(const std::vector<const Tensor*>& pred_depth, const std::vector<const DepthMap*>& gt) {
  if (pred_depth.size() != gt.size()) throw InvalidArgument("adaptive_delta: prediction/ground-truth count mismatch");
  double worst = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < gt.size(); ++k) {
    require_shape(gt[k]->depth, pred_depth[k]->shape(), "adaptive_delta ground truth");
    require_shape(gt[k]->valid, pred_depth[k]->shape(), "adaptive_delta mask");
    for (std::size_t i = 0; i < pred_depth[k]->size(); ++i) {
      if (gt[k]->valid[i] == 0.0) continue;
      worst = std::max(worst, std::abs((*pred_depth[k])[i] - gt[k]->depth[i]));
      ++count;
    }
  }
  if (count == 0) throw InvalidArgument("adaptive_delta: no ground-truth pixels");
  return std::max(0.2 * worst, kDeltaFloor);
}

double adaptive_delta(const Tensor& pred_depth, const DepthMap& gt) { return adaptive_delta({&pred_depth}, {&gt}); }

double lambda_schedule(std::int64_t t, double beta) {
  if (t < 1) throw InvalidArgument("lambda_schedule: t must be >= 1, got " + std::to_string(t));
  return beta * std::exp(-10.0 / static_cast<double>(t));
}

LossBreakdown combine_terms(double supervised, double unsupervised, double regularizer, const LossWeights& weights) {
  LossBreakdown b;
  b.supervised = supervised;
  b.unsupervised = unsupervised;
  b.regularizer = regularizer;
  b.lambda_t = lambda_schedule(weights.t, weights.beta);
  b.gamma = weights.gamma;
  b.total = b.lambda_t * supervised + weights.gamma * unsupervised + weights.regularizer * regularizer;
  return b;
}

namespace ad {

Var supervised_loss(const Var& rho_l, const Var& rho_r, const DepthMap& z_l, const DepthMap& z_r,
                    const LossOptions& options, double* delta_out) {
  check_map(rho_l.value(), z_l, "supervised_loss left");
  check_map(rho_r.value(), z_r, "supervised_loss right");
  const std::size_t count = z_l.count() + z_r.count();
  if (count == 0) throw InvalidArgument("supervised_loss: no ground-truth pixels in either view");

  const Tensor* rhos[2] = {&rho_l.value(), &rho_r.value()};
  const DepthMap* zs[2] = {&z_l, &z_r};
  double worst = 0.0;
  for (int v = 0; v < 2; ++v) {
    for (std::size_t i = 0; i < rhos[v]->size(); ++i) {
      if (zs[v]->valid[i] != 0.0) worst = std::max(worst, std::abs(residual((*rhos[v])[i], zs[v]->depth[i])));
    }
  }
  const double delta = options.fixed_delta > 0.0 ? options.fixed_delta : std::max(0.2 * worst, kDeltaFloor);
  if (delta_out) *delta_out = delta;
  const double norm = options.normalize_terms ? static_cast<double>(count) : 1.0;
  const SupervisedNorm kind = options.supervised_norm;

  double total = 0.0;
  for (int v = 0; v < 2; ++v) {
    for (std::size_t i = 0; i < rhos[v]->size(); ++i) {
      if (zs[v]->valid[i] != 0.0) total += norm_value(residual((*rhos[v])[i], zs[v]->depth[i]), delta, kind);
    }
  }
  auto maps = std::make_shared<std::pair<DepthMap, DepthMap>>(z_l, z_r);
  return rho_l.tape().record(
      "supervised_loss", Tensor({1}, total / norm), {rho_l, rho_r},
      [rho_l, rho_r, maps, delta, norm, kind](Tape& t, const Tensor& g) {
        const Var vars[2] = {rho_l, rho_r};
        const DepthMap* zs[2] = {&maps->first, &maps->second};
        for (int v = 0; v < 2; ++v) {
          if (!t.requires_grad(vars[v])) continue;
          const Tensor& rho = vars[v].value();
          Tensor& acc = t.adjoint(vars[v]);
          for (std::size_t i = 0; i < rho.size(); ++i) {
            if (zs[v]->valid[i] == 0.0 || rho[i] <= kRhoFloor) continue;
            const double d = residual(rho[i], zs[v]->depth[i]);
            acc[i] += g[0] * norm_derivative(d, delta, kind) * (-1.0 / (rho[i] * rho[i])) / norm;
          }
        }
      });
}

Var unsupervised_loss(const Tensor& image_l, const Tensor& image_r, const Var& rho_l, const Var& rho_r,
                      const std::vector<Calib>& calib, const LossOptions& options, const Tensor* pixels_l,
                      const Tensor* pixels_r) {
  require_rank4(image_l, "unsupervised_loss left image");
  require_shape(image_r, image_l.shape(), "unsupervised_loss right image");
  require_shape(rho_l.value(), image_l.shape(), "unsupervised_loss rho_l");
  require_shape(rho_r.value(), image_l.shape(), "unsupervised_loss rho_r");
  if (pixels_l) require_shape(*pixels_l, image_l.shape(), "unsupervised_loss left pixel set");
  if (pixels_r) require_shape(*pixels_r, image_l.shape(), "unsupervised_loss right pixel set");

  Tape& tape = rho_l.tape();
  auto smooth_l = std::make_shared<Tensor>(smoothed(image_l, options.sigma));
  auto smooth_r = std::make_shared<Tensor>(smoothed(image_r, options.sigma));
  ValidMask valid_l, valid_r;
  const Var warped_l =
      sample_bilinear(tape.constant(*smooth_r), warp_columns(rho_l, calib, options.warp_sign), &valid_l);
  const Var warped_r =
      sample_bilinear(tape.constant(*smooth_l), warp_columns(rho_r, calib, -options.warp_sign), &valid_r);

  // Active pixel weights (0/1): valid warp and inside the requested pixel set.
  auto active = std::make_shared<std::pair<Tensor, Tensor>>(std::move(valid_l.flags), std::move(valid_r.flags));
  if (pixels_l) {
    for (std::size_t i = 0; i < active->first.size(); ++i) active->first[i] *= (*pixels_l)[i] != 0.0 ? 1.0 : 0.0;
  }
  if (pixels_r) {
    for (std::size_t i = 0; i < active->second.size(); ++i) active->second[i] *= (*pixels_r)[i] != 0.0 ? 1.0 : 0.0;
  }
  const double norm = options.normalize_terms ? 2.0 * static_cast<double>(image_l.size()) : 1.0;

  double total = 0.0;
  for (std::size_t i = 0; i < image_l.size(); ++i) {
    if (active->first[i] != 0.0) total += std::abs((*smooth_l)[i] - warped_l.value()[i]);
    if (active->second[i] != 0.0) total += std::abs((*smooth_r)[i] - warped_r.value()[i]);
  }
  return tape.record("alignment_l1", Tensor({1}, total / norm), {warped_l, warped_r},
                     [warped_l, warped_r, smooth_l, smooth_r, active, norm](Tape& t, const Tensor& g) {
                       const Var warped[2] = {warped_l, warped_r};
                       const Tensor* target[2] = {smooth_l.get(), smooth_r.get()};
                       const Tensor* mask[2] = {&active->first, &active->second};
                       for (int v = 0; v < 2; ++v) {
                         if (!t.requires_grad(warped[v])) continue;
                         Tensor& acc = t.adjoint(warped[v]);
                         const Tensor& w = warped[v].value();
                         for (std::size_t i = 0; i < w.size(); ++i) {
                           if ((*mask[v])[i] != 0.0) acc[i] -= g[0] * sign_of((*target[v])[i] - w[i]) / norm;
                         }
                       }
                     });
}

Var regularization_loss(const Tensor& image_l, const Tensor& image_r, const Var& rho_l, const Var& rho_r,
                        const LossOptions& options) {
  require_rank4(image_l, "regularization_loss left image");
  require_shape(image_r, image_l.shape(), "regularization_loss right image");
  require_shape(rho_l.value(), image_l.shape(), "regularization_loss rho_l");
  require_shape(rho_r.value(), image_l.shape(), "regularization_loss rho_r");
  auto weights = std::make_shared<std::pair<EdgeWeights, EdgeWeights>>(edge_weights(image_l, options),
                                                                       edge_weights(image_r, options));
  const Dims4 d = image_l.dims4();
  const double norm = options.normalize_terms ? 2.0 * static_cast<double>(image_l.size()) : 1.0;

  auto inner = [d](const Tensor& rho, const EdgeWeights& e, std::size_t i, std::size_t y, std::size_t x) {
    return e.wx[i] * diff_x(rho, i, x, d.w) + e.wy[i] * diff_y(rho, i, y, d.h, d.w);
  };
  double total = 0.0;
  const Tensor* rhos[2] = {&rho_l.value(), &rho_r.value()};
  const EdgeWeights* ews[2] = {&weights->first, &weights->second};
  for (int v = 0; v < 2; ++v) {
    for (std::size_t p = 0; p < d.n * d.c; ++p) {
      for (std::size_t y = 0; y < d.h; ++y) {
        for (std::size_t x = 0; x < d.w; ++x) {
          total += std::abs(inner(*rhos[v], *ews[v], (p * d.h + y) * d.w + x, y, x));
        }
      }
    }
  }
  return rho_l.tape().record(
      "edge_aware_smoothness", Tensor({1}, total / norm), {rho_l, rho_r},
      [rho_l, rho_r, weights, d, norm, inner](Tape& t, const Tensor& g) {
        const Var vars[2] = {rho_l, rho_r};
        const EdgeWeights* ews[2] = {&weights->first, &weights->second};
        for (int v = 0; v < 2; ++v) {
          if (!t.requires_grad(vars[v])) continue;
          const Tensor& rho = vars[v].value();
          Tensor& acc = t.adjoint(vars[v]);
          for (std::size_t p = 0; p < d.n * d.c; ++p) {
            for (std::size_t y = 0; y < d.h; ++y) {
              for (std::size_t x = 0; x < d.w; ++x) {
                const std::size_t i = (p * d.h + y) * d.w + x;
                const double s = g[0] * sign_of(inner(rho, *ews[v], i, y, x)) / norm;
                if (s == 0.0) continue;
                if (x + 1 < d.w) {
                  acc[i + 1] += s * ews[v]->wx[i];
                  acc[i] -= s * ews[v]->wx[i];
                }
                if (y + 1 < d.h) {
                  acc[i + d.w] += s * ews[v]->wy[i];
                  acc[i] -= s * ews[v]->wy[i];
                }
              }
            }
          }
        }
      });
}

TotalLoss total_loss(const StereoBatch& batch, const Var& rho_l, const Var& rho_r, const LossWeights& weights,
                     const LossOptions& options) {
  Tape& tape = rho_l.tape();
  const bool has_gt = batch.depth_left.count() + batch.depth_right.count() > 0;
  if (!has_gt && weights.beta > 0.0) throw InvalidArgument("total_loss: supervised weight > 0 but no ground truth");

  TotalLoss out;
  Var supervised = has_gt ? supervised_loss(rho_l, rho_r, batch.depth_left, batch.depth_right, options,
                                            &out.breakdown.delta)
                          : tape.constant(Tensor({1}, 0.0));
  Var unsupervised;
  if (options.unsup_excludes_gt) {
    const Tensor free_l = complement(batch.depth_left.valid);
    const Tensor free_r = complement(batch.depth_right.valid);
    unsupervised = unsupervised_loss(batch.left, batch.right, rho_l, rho_r, batch.calib, options, &free_l, &free_r);
  } else {
    unsupervised = unsupervised_loss(batch.left, batch.right, rho_l, rho_r, batch.calib, options);
  }
  Var regularizer = regularization_loss(batch.left, batch.right, rho_l, rho_r, options);

  const double delta = out.breakdown.delta;
  out.breakdown = combine_terms(supervised.value()[0], unsupervised.value()[0], regularizer.value()[0], weights);
  out.breakdown.delta = delta;
  out.total = weighted_sum({supervised, unsupervised, regularizer}, {out.breakdown.lambda_t, weights.gamma, weights.regularizer});
  return out;
}

}  // namespace ad

double supervised_loss(const Tensor& rho_l, const Tensor& rho_r, const DepthMap& z_l, const DepthMap& z_r,
                       const LossOptions& options) {
  ad::Tape tape;
  return ad::supervised_loss(tape.constant(rho_l), tape.constant(rho_r), z_l, z_r, options).value()[0];
}

double unsupervised_loss(const Tensor& image_l, const Tensor& image_r, const Tensor& rho_l, const Tensor& rho_r,
                         const std::vector<Calib>& calib, const LossOptions& options, const Tensor* pixels_l,
                         const Tensor* pixels_r) {
  ad::Tape tape;
  return ad::unsupervised_loss(image_l, image_r, tape.constant(rho_l), tape.constant(rho_r), calib, options, pixels_l,
                               pixels_r)
      .value()[0];
}

double regularization_loss(const Tensor& image_l, const Tensor& image_r, const Tensor& rho_l, const Tensor& rho_r,
                           const LossOptions& options) {
  ad::Tape tape;
  return ad::regularization_loss(image_l, image_r, tape.constant(rho_l), tape.constant(rho_r), options).value()[0];
}

LossBreakdown total_loss(const StereoBatch& batch, const Tensor& rho_l, const Tensor& rho_r,
                         const LossWeights& weights, const LossOptions& options) {
  ad::Tape tape;
  return ad::total_loss(batch, tape.constant(rho_l), tape.constant(rho_r), weights, options).breakdown;
}

}  // namespace depthforge
