#include "net/layers.hpp"

#include <cmath>
#include <random>

#include "autodiff/ops.hpp"
#include "util/error.hpp"

namespace depthforge {

const ConvLayer& LayerStore::add_conv(const std::string& name, std::size_t kernel, std::size_t stride, std::size_t in,
                                      std::size_t out, bool bias) {
  if (conv_index_.count(name)) throw InvalidArgument("duplicate layer name '" + name + "'");
  if (in == 0 || out == 0) throw ConfigError("layer '" + name + "' has zero channels");
  convs_.push_back(ConvLayer{name, ConvSpec{kernel, stride, in, out}, bias});
  conv_index_.emplace(name, convs_.size() - 1);
  params_.emplace(name + ".w", Tensor({out, in, kernel, kernel}));
  if (bias) params_.emplace(name + ".b", Tensor({out}));
  return convs_.back();
}

void LayerStore::add_batch_norm(const std::string& name, std::size_t channels) {
  bns_.push_back(name);
  params_.emplace(name + ".bn.gamma", Tensor({channels}, 1.0));
  params_.emplace(name + ".bn.beta", Tensor({channels}, 0.0));
  bn_.emplace(name, BNState::fresh(channels));
}

const ConvLayer& LayerStore::conv(const std::string& name) const {
  auto it = conv_index_.find(name);
  if (it == conv_index_.end()) throw InvalidArgument("unknown layer '" + name + "'");
  return convs_[it->second];
}

void LayerStore::init_params(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (const ConvLayer& c : convs_) {
    const double bound = glorot_bound(c.spec.in_channels, c.spec.out_channels, c.spec.kernel);
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : params_.at(c.name + ".w").values()) v = dist(rng);
    if (c.bias) params_.at(c.name + ".b").fill(0.0);
  }
  for (const std::string& b : bns_) {
    params_.at(b + ".bn.gamma").fill(1.0);
    params_.at(b + ".bn.beta").fill(0.0);
    bn_[b] = BNState::fresh(params_.at(b + ".bn.gamma").size());
  }
}

double glorot_bound(std::size_t in_channels, std::size_t out_channels, std::size_t kernel) {
  const double fan_in = static_cast<double>(in_channels * kernel * kernel);
  const double fan_out = static_cast<double>(out_channels * kernel * kernel);
  return std::sqrt(6.0 / (fan_in + fan_out));
}

ad::Var apply_conv(const LayerContext& ctx, const std::string& name, const ad::Var& x) {
  const ConvLayer& c = ctx.store.conv(name);
  std::optional<ad::Var> bias;
  if (c.bias) bias = ctx.params.at(name + ".b");
  return ad::conv2d(x, ctx.params.at(name + ".w"), bias, c.spec);
}

ad::Var apply_batch_norm(const LayerContext& ctx, const std::string& name, const ad::Var& x) {
  const ad::Var& gamma = ctx.params.at(name + ".bn.gamma");
  const ad::Var& beta = ctx.params.at(name + ".bn.beta");
  if (ctx.mode == Mode::kTrain) {
    BNState* state = ctx.bn_update ? &ctx.bn_update->at(name) : nullptr;
    return ad::batch_norm_train(x, gamma, beta, state);
  }
  return ad::batch_norm_eval(x, gamma, beta, ctx.store.bn_states().at(name));
}

ad::Var conv_bn(const LayerContext& ctx, const std::string& name, const ad::Var& x, bool relu) {
  ad::Var y = apply_batch_norm(ctx, name, apply_conv(ctx, name, x));
  return relu ? ad::relu(y) : y;
}

ResBlock build_resblock(LayerStore& store, const std::string& name, int type, std::size_t stride,
                        std::size_t in_channels, std::size_t out_channels) {
  if (type != 1 && type != 2) throw InvalidArgument("residual block type must be 1 or 2");
  if (type == 1 && (stride != 1 || in_channels != out_channels)) {
    throw InvalidArgument("residual block '" + name + "': type 1 cannot change shape (stride " + std::to_string(stride) +
                          ", " + std::to_string(in_channels) + " -> " + std::to_string(out_channels) +
                          " channels); use type 2");
  }
  if (out_channels % 4 != 0) {
    throw ConfigError("residual block '" + name + "': output channels " + std::to_string(out_channels) +
                      " not divisible by 4");
  }
  const std::size_t inner = out_channels / 4;
  store.add_conv(name + ".a", 1, stride, in_channels, inner);
  store.add_batch_norm(name + ".a", inner);
  store.add_conv(name + ".b", 3, 1, inner, inner);
  store.add_batch_norm(name + ".b", inner);
  store.add_conv(name + ".c", 1, 1, inner, out_channels);
  store.add_batch_norm(name + ".c", out_channels);
  if (type == 2) {
    store.add_conv(name + ".proj", 1, stride, in_channels, out_channels);
    store.add_batch_norm(name + ".proj", out_channels);
  }
  return ResBlock{name, type, stride, in_channels, out_channels};
}

ad::Var apply(const LayerContext& ctx, const ResBlock& block, const ad::Var& x) {
  ad::Var r = conv_bn(ctx, block.name + ".a", x, true);
  r = conv_bn(ctx, block.name + ".b", r, true);
  r = conv_bn(ctx, block.name + ".c", r, false);
  const ad::Var shortcut = block.type == 2 ? conv_bn(ctx, block.name + ".proj", x, false) : x;
  return ad::relu(ad::add(r, shortcut));
}

Upproject build_upproject(LayerStore& store, const std::string& name, std::size_t in_channels) {
  if (in_channels < 2 || in_channels % 2 != 0) {
    throw InvalidArgument("upprojection '" + name + "' needs an even channel count, got " + std::to_string(in_channels));
  }
  const std::size_t out = in_channels / 2;
  store.add_conv(name + ".conv1", 5, 1, in_channels, out);
  store.add_batch_norm(name + ".conv1", out);
  store.add_conv(name + ".conv2", 3, 1, out, out);
  store.add_batch_norm(name + ".conv2", out);
  store.add_conv(name + ".proj", 5, 1, in_channels, out);
  store.add_batch_norm(name + ".proj", out);
  return Upproject{name, in_channels};
}

ad::Var apply(const LayerContext& ctx, const Upproject& up, const ad::Var& x, std::size_t h, std::size_t w) {
  const ad::Var u = ad::crop(ad::unpool2x(x), h, w);
  ad::Var r = conv_bn(ctx, up.name + ".conv1", u, true);
  r = conv_bn(ctx, up.name + ".conv2", r, false);
  const ad::Var p = conv_bn(ctx, up.name + ".proj", u, false);
  return ad::relu(ad::add(r, p));
}

ad::Var apply(const LayerContext& ctx, const Upproject& up, const ad::Var& x) {
  const Dims4 d = x.value().dims4();
  return apply(ctx, up, x, 2 * d.h, 2 * d.w);
}

}  // namespace depthforge
