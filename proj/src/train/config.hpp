#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "loss/loss.hpp"
#include "net/network.hpp"

namespace depthforge {

struct TrainConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 4e-5;
  std::size_t batch_size = 4;
  std::size_t max_epochs = 10;
  double beta = 1.0;
  double gamma = 0.5;
  double regularizer_weight = 1.0;
  double sigma = 1.0;
  double eta = 1.0 / 255.0;
  std::uint64_t seed = 0;
  bool unsup_excludes_gt = false;
  bool normalize_terms = true;
  std::size_t early_stop_patience = 3;
  bool augment = true;
  /// Global gradient-norm cap; 0 disables it.
  double grad_clip_norm = 0.0;
  SupervisedNorm supervised_norm = SupervisedNorm::kBerhu;

  void validate() const;
  LossOptions loss_options() const;
  LossWeights loss_weights(std::int64_t t) const;
};

struct RunConfig {
  NetConfig net;
  TrainConfig train;
};

/// Flat `key = value` lines; `#` starts a comment. Every key listed by
/// config_keys() must be present exactly once and nothing else is accepted.
RunConfig parse_run_config(const std::string& text, const std::string& source = "config");
RunConfig load_run_config(const std::string& path);
/// Canonical text form, one key per line in config_keys() order.
std::string format_run_config(const RunConfig& cfg);
const std::vector<std::string>& config_keys();

/// Accepts decimals and simple fractions such as "1/8".
double parse_number(const std::string& text, const std::string& what);

}  // namespace depthforge
