#include "net/network.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "autodiff/ops.hpp"
#include "util/error.hpp"

namespace depthforge {

namespace {

std::string stage_name(std::size_t i, std::size_t j) {
  return "s" + std::to_string(i + 1) + ".b" + std::to_string(j + 1);
}

std::string up_name(std::size_t k) { return "up" + std::to_string(k); }

}  // namespace

std::size_t NetConfig::first_width() const {
  return static_cast<std::size_t>(std::llround(static_cast<double>(base_width) * width_multiplier));
}

void NetConfig::validate() const {
  if (in_channels == 0) throw ConfigError("in_channels must be positive");
  if (blocks_per_stage.empty()) throw ConfigError("blocks_per_stage must list at least one stage");
  if (blocks_per_stage.size() > 6) throw ConfigError("at most 6 encoder stages are supported");
  for (std::size_t b : blocks_per_stage) {
    if (b == 0) throw ConfigError("every stage needs at least one residual block");
  }
  if (!(width_multiplier > 0.0) || width_multiplier > 1.0) throw ConfigError("width_multiplier must lie in (0, 1]");
  const double w = static_cast<double>(base_width) * width_multiplier;
  if (w < 1.0 || std::fabs(w - std::round(w)) > 1e-9) {
    throw ConfigError("base_width * width_multiplier must be a positive integer, got " + std::to_string(w));
  }
  if (!(dropout_p >= 0.0) || dropout_p >= 1.0) throw ConfigError("dropout_p must lie in [0, 1)");
  if (!(init_rho > 0.0) || !std::isfinite(init_rho)) throw ConfigError("init_rho must be positive");
}

Network::Network(NetConfig config) : config_(std::move(config)) {
  config_.validate();
  const std::size_t n = config_.stages();
  const std::size_t first = config_.first_width();

  layers_.add_conv("conv1", 7, 2, config_.in_channels, first);
  layers_.add_batch_norm("conv1", first);

  std::size_t channels = first;
  std::vector<std::size_t> stage_out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t large = 4 * (first << i);
    std::vector<ResBlock> blocks;
    for (std::size_t j = 0; j < config_.blocks_per_stage[i]; ++j) {
      const bool head = j == 0;
      blocks.push_back(build_resblock(layers_, stage_name(i, j), head ? 2 : 1, head && i > 0 ? 2 : 1, channels, large));
      channels = large;
    }
    stages_.push_back(std::move(blocks));
    stage_out.push_back(large);
  }

  layers_.add_conv("conv2", 1, 1, channels, channels / 2);
  layers_.add_batch_norm("conv2", channels / 2);
  channels /= 2;

  skip_channels_.assign(n, 0);
  for (std::size_t k = 1; k <= n; ++k) {
    if (k >= 2) {
      // Concatenation followed by a 1x1 conv, stored as its two weight blocks.
      const std::string merge = up_name(k) + ".merge";
      layers_.add_conv(merge + "_dec", 1, 1, channels, channels);
      if (config_.use_long_skips) {
        skip_channels_[k - 1] = stage_out[n - k];
        layers_.add_conv(merge + "_skip", 1, 1, skip_channels_[k - 1], channels);
      }
      layers_.add_batch_norm(merge, channels);
    }
    ups_.push_back(build_upproject(layers_, up_name(k), channels));
    channels /= 2;
  }

  layers_.add_conv("conv3", 3, 1, channels, 1, true);
}

void Network::init_params(std::uint64_t seed) {
  layers_.init_params(seed);
  for (double& v : params().at("conv3.w").values()) v *= 1e-3;
  // softplus(b) == init_rho
  params().at("conv3.b").fill(std::log(std::expm1(config_.init_rho)));
}

bool Network::decays(const std::string& param_name) {
  return param_name.size() > 2 && param_name.compare(param_name.size() - 2, 2, ".w") == 0;
}

ad::ParamVars Network::register_params(ad::Tape& tape) const {
  ad::ParamVars vars;
  for (const auto& [name, value] : params()) vars.emplace(name, tape.parameter(name, value));
  return vars;
}

std::size_t Network::parameter_count() const {
  std::size_t total = 0;
  for (const auto& [name, value] : params()) total += value.size();
  return total;
}

ad::Var Network::forward_train(ad::Tape& tape, const ad::ParamVars& params, const Tensor& images,
                               std::uint64_t dropout_seed, ForwardTrace* trace) {
  return forward(tape, params, images, Mode::kTrain, dropout_seed, &bn_states(), trace);
}

ad::Var Network::forward_eval(ad::Tape& tape, const ad::ParamVars& params, const Tensor& images,
                              ForwardTrace* trace) const {
  return forward(tape, params, images, Mode::kEval, 0, nullptr, trace);
}

Tensor Network::predict(const Tensor& images, ForwardTrace* trace) const {
  ad::Tape tape;
  ad::ParamVars vars;
  for (const auto& [name, value] : params()) vars.emplace(name, tape.constant(value));
  return forward_eval(tape, vars, images, trace).value();
}

ad::Var Network::forward(ad::Tape& tape, const ad::ParamVars& params, const Tensor& images, Mode mode,
                         std::uint64_t dropout_seed, BNStore* update, ForwardTrace* trace) const {
  require_rank4(images, "network input");
  const Dims4 d = images.dims4();
  if (d.c != config_.in_channels) {
    throw ShapeError("network expects " + std::to_string(config_.in_channels) + " input channel(s), got " +
                     std::to_string(d.c));
  }
  const std::size_t min_size = config_.bottleneck_scale();
  if (d.h < min_size || d.w < min_size) {
    throw ShapeError("input " + std::to_string(d.w) + "x" + std::to_string(d.h) + " is smaller than the minimum " +
                     std::to_string(min_size) + "x" + std::to_string(min_size));
  }
  for (const auto& [name, value] : this->params()) {
    auto it = params.find(name);
    if (it == params.end()) throw InvalidArgument("missing parameter '" + name + "'");
    if (!it->second.value().same_shape(value)) throw ShapeError("parameter '" + name + "' has the wrong shape");
  }

  const LayerContext ctx{tape, params, layers_, mode, update};
  const std::size_t n = config_.stages();

  ad::Var x = conv_bn(ctx, "conv1", tape.constant(images), true);
  x = ad::max_pool2d(x, 3, 2);
  std::vector<ad::Var> stage_out;
  for (const auto& blocks : stages_) {
    for (const ResBlock& b : blocks) x = apply(ctx, b, x);
    stage_out.push_back(x);
  }
  if (trace) {
    trace->bottleneck = x.shape();
    trace->skips.clear();
    trace->decoder.clear();
  }

  x = conv_bn(ctx, "conv2", x, true);
  for (std::size_t k = 1; k <= n; ++k) {
    if (k >= 2) {
      const std::string merge = up_name(k) + ".merge";
      ad::Var m = apply_conv(ctx, merge + "_dec", x);
      if (config_.use_long_skips) {
        const ad::Var& skip = stage_out[n - k];
        if (trace) trace->skips.push_back(skip.shape());
        m = ad::add(m, apply_conv(ctx, merge + "_skip", skip));
      }
      x = ad::relu(apply_batch_norm(ctx, merge, m));
    }
    const std::size_t scale = min_size >> k;
    x = apply(ctx, ups_[k - 1], x, ceil_div(d.h, scale), ceil_div(d.w, scale));
    if (trace) trace->decoder.push_back(x.shape());
  }

  if (mode == Mode::kTrain && config_.dropout_p > 0.0) {
    Tensor mask(x.shape());
    std::mt19937_64 rng(dropout_seed);
    std::bernoulli_distribution keep(1.0 - config_.dropout_p);
    const double kept = 1.0 / (1.0 - config_.dropout_p);
    for (double& v : mask.values()) v = keep(rng) ? kept : 0.0;
    x = ad::mask_multiply(x, mask);
  }

  return ad::softplus(apply_conv(ctx, "conv3", x));
}

Checkpoint make_checkpoint(const Network& net, std::uint64_t seed, std::int64_t iteration) {
  Checkpoint c;
  c.net = net.config();
  c.seed = seed;
  c.iteration = iteration;
  c.params = net.params();
  c.bn = net.bn_states();
  return c;
}

Network network_from_checkpoint(const Checkpoint& ckpt) {
  Network net(ckpt.net);
  for (auto& [name, value] : net.params()) {
    auto it = ckpt.params.find(name);
    if (it == ckpt.params.end()) throw IoError("checkpoint lacks parameter '" + name + "'");
    if (!it->second.same_shape(value)) throw IoError("checkpoint parameter '" + name + "' has the wrong shape");
    value = it->second;
  }
  for (auto& [name, state] : net.bn_states()) {
    auto it = ckpt.bn.find(name);
    if (it == ckpt.bn.end()) throw IoError("checkpoint lacks BN statistics for '" + name + "'");
    if (!it->second.running_mean.same_shape(state.running_mean)) {
      throw IoError("checkpoint BN statistics for '" + name + "' have the wrong shape");
    }
    state = it->second;
  }
  return net;
}

namespace {

constexpr const char* kMagic = "depthforge-checkpoint 1";

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void manifest_tensor(std::ostream& out, const char* kind, const std::string& name, const Tensor& t) {
  out << "tensor " << kind << ' ' << name << ' ' << t.rank();
  for (std::size_t e : t.shape()) out << ' ' << e;
  out << '\n';
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ostringstream m;
  m << kMagic << '\n';
  m << "net.in_channels " << ckpt.net.in_channels << '\n';
  m << "net.base_width " << ckpt.net.base_width << '\n';
  m << "net.blocks_per_stage " << ckpt.net.blocks_per_stage.size();
  for (std::size_t b : ckpt.net.blocks_per_stage) m << ' ' << b;
  m << '\n';
  m << "net.width_multiplier " << fmt(ckpt.net.width_multiplier) << '\n';
  m << "net.use_long_skips " << (ckpt.net.use_long_skips ? 1 : 0) << '\n';
  m << "net.dropout_p " << fmt(ckpt.net.dropout_p) << '\n';
  m << "net.init_rho " << fmt(ckpt.net.init_rho) << '\n';
  m << "seed " << ckpt.seed << '\n';
  m << "iteration " << ckpt.iteration << '\n';
  for (const auto& [k, v] : ckpt.extra) {
    if (k.find_first_of(" \n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw InvalidArgument("checkpoint extra entry '" + k + "' contains a separator");
    }
    m << "extra " << k << ' ' << v << '\n';
  }
  std::vector<const Tensor*> blobs;
  for (const auto& [name, t] : ckpt.params) {
    manifest_tensor(m, "param", name, t);
    blobs.push_back(&t);
  }
  for (const auto& [name, s] : ckpt.bn) {
    manifest_tensor(m, "bn_mean", name, s.running_mean);
    manifest_tensor(m, "bn_var", name, s.running_var);
    blobs.push_back(&s.running_mean);
    blobs.push_back(&s.running_var);
  }
  for (const auto& [name, t] : ckpt.velocity) {
    manifest_tensor(m, "velocity", name, t);
    blobs.push_back(&t);
  }
  m << "end\n";

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint '" + tmp + "'");
    out << m.str();
    for (const Tensor* t : blobs) write_tensor(out, *t);
    out.flush();
    if (!out) throw IoError("failed writing checkpoint '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at '" + path + "': " + ec.message());
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  auto bad = [&](const std::string& why) { return IoError("corrupt checkpoint '" + path + "': " + why); };

  std::string line;
  if (!std::getline(in, line) || line != kMagic) throw bad("bad header");

  Checkpoint c;
  struct Entry {
    std::string kind, name;
    Shape shape;
  };
  std::vector<Entry> entries;
  bool ended = false;
  while (std::getline(in, line)) {
    if (line == "end") {
      ended = true;
      break;
    }
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "net.in_channels") {
      ls >> c.net.in_channels;
    } else if (key == "net.base_width") {
      ls >> c.net.base_width;
    } else if (key == "net.blocks_per_stage") {
      std::size_t count = 0;
      ls >> count;
      c.net.blocks_per_stage.assign(count, 0);
      for (auto& b : c.net.blocks_per_stage) ls >> b;
    } else if (key == "net.width_multiplier") {
      ls >> c.net.width_multiplier;
    } else if (key == "net.use_long_skips") {
      int v = 0;
      ls >> v;
      c.net.use_long_skips = v != 0;
    } else if (key == "net.dropout_p") {
      ls >> c.net.dropout_p;
    } else if (key == "net.init_rho") {
      ls >> c.net.init_rho;
    } else if (key == "seed") {
      ls >> c.seed;
    } else if (key == "iteration") {
      ls >> c.iteration;
    } else if (key == "extra") {
      std::string k;
      ls >> k;
      std::string v;
      std::getline(ls, v);
      if (!v.empty() && v.front() == ' ') v.erase(0, 1);
      c.extra[k] = v;
      continue;
    } else if (key == "tensor") {
      Entry e;
      std::size_t rank = 0;
      ls >> e.kind >> e.name >> rank;
      e.shape.assign(rank, 0);
      for (auto& x : e.shape) ls >> x;
      entries.push_back(std::move(e));
    } else {
      throw bad("unknown manifest key '" + key + "'");
    }
    if (ls.fail()) throw bad("unreadable line '" + line + "'");
  }
  if (!ended) throw bad("manifest not terminated");

  for (const Entry& e : entries) {
    Tensor t;
    try {
      t = read_tensor(in);
    } catch (const Error& err) {
      throw bad(std::string("blob for '") + e.name + "': " + err.what());
    }
    if (t.shape() != e.shape) throw bad("blob for '" + e.name + "' does not match its manifest shape");
    if (e.kind == "param") {
      c.params[e.name] = std::move(t);
    } else if (e.kind == "bn_mean") {
      c.bn[e.name].running_mean = std::move(t);
    } else if (e.kind == "bn_var") {
      c.bn[e.name].running_var = std::move(t);
    } else if (e.kind == "velocity") {
      c.velocity[e.name] = std::move(t);
    } else {
      throw bad("unknown tensor kind '" + e.kind + "'");
    }
  }
  return c;
}

}  // namespace depthforge
