#include "train/objective.hpp"

#include "autodiff/ops.hpp"

namespace depthforge {

ad::TotalLoss network_loss(const Network& net, ad::Tape& tape, const ad::ParamVars& params, const StereoBatch& batch,
                           const LossWeights& weights, const LossOptions& options, Mode mode,
                           std::uint64_t dropout_seed, BNStore* bn_update) {
  const std::size_t n = batch.size();
  const Dims4 d = batch.left.dims4();
  const Tensor images = concat_batch({&batch.left, &batch.right});
  const ad::Var half = net.forward(tape, params, images, mode, dropout_seed, bn_update);
  const ad::Var rho = ad::resize_bilinear(half, d.h, d.w);
  const ad::Var rho_l = ad::slice_batch(rho, 0, n);
  const ad::Var rho_r = ad::slice_batch(rho, n, n);
  return ad::total_loss(batch, rho_l, rho_r, weights, options);
}

Tensor predict_full_resolution(const Network& net, const Tensor& images, std::size_t height, std::size_t width) {
  return resize_bilinear(net.predict(images), height, width);
}

}  // namespace depthforge
