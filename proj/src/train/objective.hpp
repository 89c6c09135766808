#pragma once

#include <cstdint>

#include "autodiff/tape.hpp"
#include "loss/loss.hpp"
#include "net/network.hpp"

namespace depthforge {

/// Predicts inverse depth for both views with one shared network pass over
/// the stacked 2N batch, upsamples it to image resolution and evaluates the
/// combined loss. In train mode `bn_update` (may be null) receives the batch
/// statistics.
ad::TotalLoss network_loss(const Network& net, ad::Tape& tape, const ad::ParamVars& params, const StereoBatch& batch,
                           const LossWeights& weights, const LossOptions& options, Mode mode,
                           std::uint64_t dropout_seed = 0, BNStore* bn_update = nullptr);

/// Eval-mode inverse depth for a batch of images, resized to H x W.
Tensor predict_full_resolution(const Network& net, const Tensor& images, std::size_t height, std::size_t width);

}  // namespace depthforge
