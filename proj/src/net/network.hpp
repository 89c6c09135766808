#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "autodiff/gradcheck.hpp"
#include "autodiff/tape.hpp"
#include "net/layers.hpp"
#include "tensor/tensor.hpp"

namespace depthforge {

struct NetConfig {
  std::size_t in_channels = 1;
  /// Channels of the first convolution at full width.
  std::size_t base_width = 64;
  /// Residual blocks per encoder stage; the first block of every stage projects.
  std::vector<std::size_t> blocks_per_stage{3, 4, 6, 3};
  double width_multiplier = 1.0;
  bool use_long_skips = true;
  double dropout_p = 0.5;
  /// Inverse depth produced by a freshly initialized network.
  double init_rho = 5e-4;

  std::size_t stages() const { return blocks_per_stage.size(); }
  /// Downsampling factor of the encoder output (32 for four stages).
  std::size_t bottleneck_scale() const { return std::size_t{4} << (stages() - 1); }
  std::size_t first_width() const;
  /// Throws ConfigError on inconsistent settings.
  void validate() const;
};

/// Shape record of one forward pass.
struct ForwardTrace {
  Shape bottleneck;
  std::vector<Shape> skips;
  std::vector<Shape> decoder;
};

/// Residual encoder-decoder predicting inverse depth at half input resolution.
class Network {
 public:
  explicit Network(NetConfig config);

  const NetConfig& config() const { return config_; }
  ParamStore& params() { return layers_.params(); }
  const ParamStore& params() const { return layers_.params(); }
  BNStore& bn_states() { return layers_.bn_states(); }
  const BNStore& bn_states() const { return layers_.bn_states(); }
  const LayerStore& layers() const { return layers_; }

  /// Glorot-uniform convolutions, unit BN scales, and an output layer whose
  /// prediction starts near init_rho.
  void init_params(std::uint64_t seed);

  /// Conv weights receive weight decay; BN scales/shifts and biases do not.
  static bool decays(const std::string& param_name);

  /// Train mode: batch statistics (folded into the running statistics) and
  /// dropout drawn from `dropout_seed`.
  ad::Var forward_train(ad::Tape& tape, const ad::ParamVars& params, const Tensor& images, std::uint64_t dropout_seed,
                        ForwardTrace* trace = nullptr);
  /// Eval mode; does not modify the network.
  ad::Var forward_eval(ad::Tape& tape, const ad::ParamVars& params, const Tensor& images,
                       ForwardTrace* trace = nullptr) const;

  /// General form: train mode folds batch statistics into `bn_update` when it
  /// is non-null, so a null pointer gives a side-effect-free train forward.
  ad::Var forward(ad::Tape& tape, const ad::ParamVars& params, const Tensor& images, Mode mode,
                  std::uint64_t dropout_seed, BNStore* bn_update, ForwardTrace* trace = nullptr) const;

  /// Eval-mode inverse depth, N x 1 x ceil(H/2) x ceil(W/2).
  Tensor predict(const Tensor& images, ForwardTrace* trace = nullptr) const;

  ad::ParamVars register_params(ad::Tape& tape) const;
  std::size_t parameter_count() const;

 private:
  NetConfig config_;
  LayerStore layers_;
  std::vector<std::vector<ResBlock>> stages_;
  std::vector<Upproject> ups_;
  /// Channels of the encoder stage feeding upprojection k (index k - 1; 0 = none).
  std::vector<std::size_t> skip_channels_;
};

struct Checkpoint {
  NetConfig net;
  std::uint64_t seed = 0;
  std::int64_t iteration = 0;
  ParamStore params;
  BNStore bn;
  ParamStore velocity;
  std::map<std::string, std::string> extra;
};

Checkpoint make_checkpoint(const Network& net, std::uint64_t seed, std::int64_t iteration);
Network network_from_checkpoint(const Checkpoint& ckpt);

/// Text manifest (config, seed, iteration, tensor names and shapes) followed
/// by the tensor blobs in manifest order. Written through a temp file and rename.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace depthforge
