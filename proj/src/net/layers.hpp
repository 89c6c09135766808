#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "autodiff/gradcheck.hpp"
#include "autodiff/tape.hpp"
#include "tensor/tensor.hpp"

namespace depthforge {

using ParamStore = ad::ParamTensors;
using BNStore = std::map<std::string, BNState>;

/// Declared convolution; parameters live under "<name>.w" (and "<name>.b").
struct ConvLayer {
  std::string name;
  ConvSpec spec;
  bool bias = false;
};

/// Owns layer declarations, their parameters and BN running statistics.
class LayerStore {
 public:
  const ConvLayer& add_conv(const std::string& name, std::size_t kernel, std::size_t stride, std::size_t in,
                            std::size_t out, bool bias = false);
  /// BN parameters "<name>.bn.gamma" / "<name>.bn.beta" plus running statistics.
  void add_batch_norm(const std::string& name, std::size_t channels);

  const ConvLayer& conv(const std::string& name) const;
  const std::vector<ConvLayer>& convs() const { return convs_; }
  const std::vector<std::string>& batch_norms() const { return bns_; }

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  BNStore& bn_states() { return bn_; }
  const BNStore& bn_states() const { return bn_; }

  /// Glorot-uniform conv weights in declaration order, zero biases, BN at
  /// gamma 1 / beta 0 with fresh running statistics.
  void init_params(std::uint64_t seed);

 private:
  std::vector<ConvLayer> convs_;
  std::map<std::string, std::size_t> conv_index_;
  std::vector<std::string> bns_;
  ParamStore params_;
  BNStore bn_;
};

/// Everything a layer needs to record itself on a tape.
struct LayerContext {
  ad::Tape& tape;
  const ad::ParamVars& params;
  const LayerStore& store;
  Mode mode;
  /// Train mode only: running statistics to update (may be null).
  BNStore* bn_update = nullptr;
};

ad::Var apply_conv(const LayerContext& ctx, const std::string& name, const ad::Var& x);
ad::Var apply_batch_norm(const LayerContext& ctx, const std::string& name, const ad::Var& x);
/// conv -> BN, optionally followed by ReLU.
ad::Var conv_bn(const LayerContext& ctx, const std::string& name, const ad::Var& x, bool relu);

/// Bottleneck residual block. Type 1: identity shortcut, shape preserving.
/// Type 2: 1x1 projection shortcut with the block's stride.
struct ResBlock {
  std::string name;
  int type = 1;
  std::size_t stride = 1;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
};

/// Declares a residual block whose inner convolutions use out/4 channels.
ResBlock build_resblock(LayerStore& store, const std::string& name, int type, std::size_t stride,
                        std::size_t in_channels, std::size_t out_channels);
ad::Var apply(const LayerContext& ctx, const ResBlock& block, const ad::Var& x);

/// Naive upprojection: 2x unpooling, then a residual block halving channels
/// (5x5 -> 3x3 main path, 5x5 projection).
struct Upproject {
  std::string name;
  std::size_t in_channels = 0;
  std::size_t out_channels() const { return in_channels / 2; }
};

Upproject build_upproject(LayerStore& store, const std::string& name, std::size_t in_channels);
/// Crops the unpooled map to h x w before convolving (2 * ceil(E/2) >= E).
ad::Var apply(const LayerContext& ctx, const Upproject& up, const ad::Var& x, std::size_t h, std::size_t w);
ad::Var apply(const LayerContext& ctx, const Upproject& up, const ad::Var& x);

double glorot_bound(std::size_t in_channels, std::size_t out_channels, std::size_t kernel);

}  // namespace depthforge
