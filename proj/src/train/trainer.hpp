#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "data/scene.hpp"
#include "net/network.hpp"
#include "train/config.hpp"
#include "util/error.hpp"

namespace depthforge {

struct TrainState {
  /// Iteration of the next optimizer step (starts at 1).
  std::int64_t t = 1;
  ParamStore velocity;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t epochs_since_improvement = 0;
  /// Completed epochs.
  std::size_t epoch = 0;
};

/// v <- momentum * v + (g + w_d * theta) ; theta <- theta - lr * v ; t <- t + 1.
/// Decay applies to names accepted by `decays`.
void sgd_step(ParamStore& params, const ad::Gradients& grads, TrainState& state, const TrainConfig& cfg,
              const std::function<bool(const std::string&)>& decays = Network::decays);

/// Euclidean norm over all gradient tensors.
double gradient_norm(const ad::Gradients& grads);

struct EpochLog {
  std::size_t epoch = 0;
  std::int64_t t = 0;
  double lambda_t = 0.0;
  double L_S = 0.0, L_U = 0.0, L_R = 0.0, total = 0.0;
  double val_total = 0.0;
  double lr = 0.0;
};

/// Non-finite loss or gradient during training.
class DivergenceError : public NumericError {
 public:
  DivergenceError(std::int64_t iteration, LossBreakdown last, const std::string& what);
  std::int64_t iteration() const { return iteration_; }
  const LossBreakdown& breakdown() const { return breakdown_; }

 private:
  std::int64_t iteration_;
  LossBreakdown breakdown_;
};

struct TrainOptions {
  /// Directory for train_log.csv, last.ckpt and best.ckpt; empty writes nothing.
  std::string out_dir;
  /// Checkpoint to continue from (its directory may also hold best.ckpt).
  std::string resume;
  std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
  Checkpoint best;
  Checkpoint last;
  std::vector<EpochLog> log;
  std::string stop_reason;  // "max_epochs" or "early_stop"
};

TrainResult train(const std::vector<StereoSample>& data, const std::vector<StereoSample>& val, const NetConfig& net_cfg,
                  const TrainConfig& cfg, const TrainOptions& options = {});

/// Mean objective over `val` in eval mode with lambda evaluated at `t`.
double validation_loss(const Network& net, const std::vector<StereoSample>& val, const TrainConfig& cfg,
                       std::int64_t t);

/// Mean breakdown over `data` in eval mode, one batch of cfg.batch_size at a time.
LossBreakdown dataset_loss(const Network& net, const std::vector<StereoSample>& data, const TrainConfig& cfg,
                           std::int64_t t);

std::string format_log_header();
std::string format_log_row(const EpochLog& row);

}  // namespace depthforge
