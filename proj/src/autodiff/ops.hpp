#pragma once

#include <optional>
#include <vector>

#include "autodiff/tape.hpp"
#include "tensor/tensor.hpp"

// Differentiable wrappers around the tensor primitives.
namespace depthforge::ad {

Var conv2d(const Var& input, const Var& weights, const std::optional<Var>& bias, const ConvSpec& spec);
Var max_pool2d(const Var& input, std::size_t kernel, std::size_t stride);

/// Train mode uses batch statistics and updates `state` when non-null.
Var batch_norm_train(const Var& input, const Var& gamma, const Var& beta, BNState* state);
Var batch_norm_eval(const Var& input, const Var& gamma, const Var& beta, const BNState& state);

Var relu(const Var& input);
Var softplus(const Var& input);
Var unpool2x(const Var& input);
Var crop(const Var& input, std::size_t h, std::size_t w);
Var resize_bilinear(const Var& input, std::size_t h, std::size_t w);
Var slice_batch(const Var& input, std::size_t begin, std::size_t count);

Var add(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& input, double factor);
/// Elementwise product with a constant mask (dropout, masking).
Var mask_multiply(const Var& input, const Tensor& mask);

Var sum(const Var& input);
/// sum_i weights[i] * terms[i] over scalar terms.
Var weighted_sum(const std::vector<Var>& terms, const std::vector<double>& weights);

}  // namespace depthforge::ad
