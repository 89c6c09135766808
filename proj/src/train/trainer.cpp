#include "train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "train/objective.hpp"
#include "util/faults.hpp"
#include "util/seed.hpp"

namespace depthforge {

namespace fs = std::filesystem;

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) { return mix_seed(a, b); }

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_extra(const Checkpoint& c, const std::string& key) {
  auto it = c.extra.find(key);
  if (it == c.extra.end()) throw IoError("checkpoint lacks training field '" + key + "'");
  try {
    return std::stod(it->second);
  } catch (const std::exception&) {
    throw IoError("checkpoint field '" + key + "' is not a number");
  }
}

bool all_finite(const Tensor& t) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(t[i])) return false;
  }
  return true;
}

std::string describe(const LossBreakdown& b) {
  return "L_S=" + fmt(b.supervised) + " L_U=" + fmt(b.unsupervised) + " L_R=" + fmt(b.regularizer) +
         " lambda_t=" + fmt(b.lambda_t) + " total=" + fmt(b.total);
}

void require_nonempty(const std::vector<StereoSample>& d, const char* what) {
  if (d.empty()) throw InvalidArgument(std::string(what) + " dataset is empty");
}

StereoBatch batch_of(const std::vector<StereoSample>& data, std::size_t begin, std::size_t end) {
  std::vector<const StereoSample*> ptrs;
  for (std::size_t i = begin; i < end; ++i) ptrs.push_back(&data[i]);
  return make_batch(ptrs);
}

}  // namespace

DivergenceError::DivergenceError(std::int64_t iteration, LossBreakdown last, const std::string& what)
    : NumericError("training diverged at iteration " + std::to_string(iteration) + ": " + what + " (" +
                   describe(last) + ")"),
      iteration_(iteration),
      breakdown_(last) {}

void sgd_step(ParamStore& params, const ad::Gradients& grads, TrainState& state, const TrainConfig& cfg,
              const std::function<bool(const std::string&)>& decays) {
  if (grads.size() != params.size()) throw InvalidArgument("sgd_step: gradient and parameter sets differ in size");
  for (const auto& [name, value] : params) {
    auto g = grads.find(name);
    if (g == grads.end()) throw InvalidArgument("sgd_step: no gradient for parameter '" + name + "'");
    if (!g->second.same_shape(value)) throw ShapeError("sgd_step: gradient shape mismatch for '" + name + "'");
  }
  const bool drop_decay = fault_active(Fault::kDropWeightDecay);
  for (auto& [name, theta] : params) {
    const Tensor& g = grads.at(name);
    auto [it, fresh] = state.velocity.try_emplace(name, Tensor::zeros_like(theta));
    Tensor& v = it->second;
    if (!v.same_shape(theta)) throw ShapeError("sgd_step: velocity shape mismatch for '" + name + "'");
    const double wd = (!drop_decay && decays(name)) ? cfg.weight_decay : 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      v[i] = cfg.momentum * v[i] + (g[i] + wd * theta[i]);
      theta[i] -= cfg.lr * v[i];
    }
  }
  ++state.t;
}

double gradient_norm(const ad::Gradients& grads) {
  double s = 0.0;
  for (const auto& [name, g] : grads) {
    for (std::size_t i = 0; i < g.size(); ++i) s += g[i] * g[i];
  }
  return std::sqrt(s);
}

LossBreakdown dataset_loss(const Network& net, const std::vector<StereoSample>& data, const TrainConfig& cfg,
                           std::int64_t t) {
  require_nonempty(data, "evaluation");
  const LossWeights w = cfg.loss_weights(std::max<std::int64_t>(t, 1));
  const LossOptions opts = cfg.loss_options();
  LossBreakdown sum;
  for (std::size_t b = 0; b < data.size(); b += cfg.batch_size) {
    const std::size_t e = std::min(data.size(), b + cfg.batch_size);
    const StereoBatch batch = batch_of(data, b, e);
    ad::Tape tape;
    const ad::ParamVars vars = net.register_params(tape);
    const LossBreakdown l = network_loss(net, tape, vars, batch, w, opts, Mode::kEval).breakdown;
    const double k = static_cast<double>(e - b);
    sum.supervised += k * l.supervised;
    sum.unsupervised += k * l.unsupervised;
    sum.regularizer += k * l.regularizer;
    sum.total += k * l.total;
    sum.lambda_t = l.lambda_t;
    sum.gamma = l.gamma;
  }
  const double n = static_cast<double>(data.size());
  sum.supervised /= n;
  sum.unsupervised /= n;
  sum.regularizer /= n;
  sum.total /= n;
  return sum;
}

double validation_loss(const Network& net, const std::vector<StereoSample>& val, const TrainConfig& cfg,
                       std::int64_t t) {
  return dataset_loss(net, val, cfg, t).total;
}

std::string format_log_header() {
  return "# val_total: full objective on the validation set, eval mode, lambda_t at the epoch's last iteration\n"
         "epoch,t,lambda_t,L_S,L_U,L_R,total,val_total,lr\n";
}

std::string format_log_row(const EpochLog& r) {
  return std::to_string(r.epoch) + "," + std::to_string(r.t) + "," + fmt(r.lambda_t) + "," + fmt(r.L_S) + "," +
         fmt(r.L_U) + "," + fmt(r.L_R) + "," + fmt(r.total) + "," + fmt(r.val_total) + "," + fmt(r.lr) + "\n";
}

TrainResult train(const std::vector<StereoSample>& data, const std::vector<StereoSample>& val, const NetConfig& net_cfg,
                  const TrainConfig& cfg, const TrainOptions& options) {
  require_nonempty(data, "training");
  require_nonempty(val, "validation");
  net_cfg.validate();
  cfg.validate();
  for (const auto& s : data) s.validate();
  for (const auto& s : val) s.validate();

  Network net(net_cfg);
  TrainState state;
  TrainResult result;
  bool have_best = false;

  if (!options.resume.empty()) {
    const Checkpoint ck = load_checkpoint(options.resume);
    if (format_run_config({ck.net, cfg}) != format_run_config({net_cfg, cfg})) {
      throw ConfigError("resume checkpoint '" + options.resume + "' was trained with a different network config");
    }
    if (ck.seed != cfg.seed) throw ConfigError("resume checkpoint '" + options.resume + "' has a different seed");
    net = network_from_checkpoint(ck);
    state.t = ck.iteration;
    state.velocity = ck.velocity;
    state.epoch = static_cast<std::size_t>(parse_extra(ck, "epoch"));
    state.best_val = parse_extra(ck, "best_val");
    state.epochs_since_improvement = static_cast<std::size_t>(parse_extra(ck, "since_improvement"));
    if (state.t < 1) throw IoError("resume checkpoint has iteration < 1");
    result.last = ck;
    const fs::path best_path = fs::path(options.resume).parent_path() / "best.ckpt";
    if (fs::exists(best_path)) {
      result.best = load_checkpoint(best_path.string());
    } else {
      result.best = ck;
      result.best.velocity.clear();
    }
    have_best = true;
  } else {
    net.init_params(cfg.seed);
  }

  fs::path log_path;
  if (!options.out_dir.empty()) {
    std::error_code ec;
    fs::create_directories(options.out_dir, ec);
    if (ec || !fs::is_directory(options.out_dir)) {
      throw IoError("cannot create output directory '" + options.out_dir + "'");
    }
    log_path = fs::path(options.out_dir) / "train_log.csv";
    if (options.resume.empty() || !fs::exists(log_path)) {
      std::ofstream out(log_path, std::ios::trunc);
      if (!out) throw IoError("cannot write '" + log_path.string() + "'");
      out << format_log_header();
    }
  }

  if (state.epoch >= cfg.max_epochs) {
    result.stop_reason = "max_epochs";
    return result;
  }
  if (state.epochs_since_improvement >= cfg.early_stop_patience) {
    result.stop_reason = "early_stop";
    return result;
  }

  const LossOptions loss_opts = cfg.loss_options();
  std::vector<std::size_t> order(data.size());

  while (state.epoch < cfg.max_epochs) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffle_rng(mix(cfg.seed, 0x5f00 + state.epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    LossBreakdown sum;
    std::size_t steps = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(order.size(), b + cfg.batch_size);
      const std::int64_t t = state.t;
      std::vector<StereoSample> augmented;
      std::vector<const StereoSample*> ptrs;
      if (cfg.augment) {
        augmented.reserve(e - b);
        for (std::size_t i = b; i < e; ++i) {
          augmented.push_back(augment(data[order[i]], mix(mix(cfg.seed, static_cast<std::uint64_t>(t)), i - b)));
        }
        for (const auto& s : augmented) ptrs.push_back(&s);
      } else {
        for (std::size_t i = b; i < e; ++i) ptrs.push_back(&data[order[i]]);
      }
      const StereoBatch batch = make_batch(ptrs);

      LossBreakdown last;
      try {
        ad::Tape tape;
        const ad::ParamVars vars = net.register_params(tape);
        const std::uint64_t dropout_seed = mix(cfg.seed ^ 0xd409u, static_cast<std::uint64_t>(t));
        ad::TotalLoss loss = network_loss(net, tape, vars, batch, cfg.loss_weights(t), loss_opts, Mode::kTrain,
                                          dropout_seed, &net.bn_states());
        last = loss.breakdown;
        if (!std::isfinite(last.total)) throw DivergenceError(t, last, "non-finite loss");
        ad::Gradients grads = tape.backward(loss.total);
        for (const auto& [name, g] : grads) {
          if (!all_finite(g)) throw DivergenceError(t, last, "non-finite gradient for '" + name + "'");
        }
        if (cfg.grad_clip_norm > 0.0) {
          const double norm = gradient_norm(grads);
          if (norm > cfg.grad_clip_norm) {
            const double s = cfg.grad_clip_norm / norm;
            for (auto& [name, g] : grads) {
              for (std::size_t i = 0; i < g.size(); ++i) g[i] *= s;
            }
          }
        }
        sgd_step(net.params(), grads, state, cfg);
      } catch (const DivergenceError&) {
        throw;
      } catch (const NumericError& err) {
        throw DivergenceError(t, last, err.what());
      }
      sum.supervised += last.supervised;
      sum.unsupervised += last.unsupervised;
      sum.regularizer += last.regularizer;
      sum.total += last.total;
      ++steps;
    }
    ++state.epoch;

    const std::int64_t t_done = state.t - 1;
    EpochLog row;
    row.epoch = state.epoch;
    row.t = t_done;
    row.lambda_t = lambda_schedule(t_done, cfg.beta);
    row.L_S = sum.supervised / static_cast<double>(steps);
    row.L_U = sum.unsupervised / static_cast<double>(steps);
    row.L_R = sum.regularizer / static_cast<double>(steps);
    row.total = sum.total / static_cast<double>(steps);
    row.lr = cfg.lr;
    LossBreakdown vb;
    try {
      vb = dataset_loss(net, val, cfg, t_done);
    } catch (const NumericError& err) {
      throw DivergenceError(t_done, vb, std::string("validation: ") + err.what());
    }
    row.val_total = vb.total;
    if (!std::isfinite(row.val_total)) throw DivergenceError(t_done, vb, "non-finite validation loss");

    const bool improved = row.val_total < state.best_val;
    if (improved) {
      state.best_val = row.val_total;
      state.epochs_since_improvement = 0;
      result.best = make_checkpoint(net, cfg.seed, state.t);
      result.best.extra["epoch"] = std::to_string(state.epoch);
      result.best.extra["val_total"] = fmt(row.val_total);
      have_best = true;
    } else {
      ++state.epochs_since_improvement;
    }

    result.last = make_checkpoint(net, cfg.seed, state.t);
    result.last.velocity = state.velocity;
    result.last.extra["epoch"] = std::to_string(state.epoch);
    result.last.extra["best_val"] = fmt(state.best_val);
    result.last.extra["since_improvement"] = std::to_string(state.epochs_since_improvement);
    result.log.push_back(row);

    if (!options.out_dir.empty()) {
      std::ofstream out(log_path, std::ios::app);
      out << format_log_row(row);
      if (!out) throw IoError("cannot append to '" + log_path.string() + "'");
      out.close();
      save_checkpoint((fs::path(options.out_dir) / "last.ckpt").string(), result.last);
      if (improved) save_checkpoint((fs::path(options.out_dir) / "best.ckpt").string(), result.best);
    }
    if (options.on_epoch) options.on_epoch(row);

    if (state.epochs_since_improvement >= cfg.early_stop_patience) {
      result.stop_reason = "early_stop";
      return result;
    }
  }
  if (!have_best) result.best = result.last;
  result.stop_reason = "max_epochs";
  return result;
}

}  // namespace depthforge
