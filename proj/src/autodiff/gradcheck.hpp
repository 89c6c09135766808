#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "autodiff/tape.hpp"

namespace depthforge::ad {

using ParamVars = std::map<std::string, Var>;
using ParamTensors = std::map<std::string, Tensor>;

/// Builds a scalar on `tape` from parameters already registered on it.
using ScalarFn = std::function<Var(Tape& tape, const ParamVars& params)>;

struct ParamGradError {
  std::string name;
  std::size_t coords_checked = 0;
  /// Coordinates dropped by the kink guard.
  std::size_t coords_skipped = 0;
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;  // at the worst coordinate
  double numeric = 0.0;
};

struct GradReport {
  std::vector<ParamGradError> params;
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;
  double tol = 0.0;
  bool passed = true;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t coords_checked = 0;
  std::size_t coords_skipped = 0;
};

struct GradCheckOptions {
  double eps = 1e-3;
  double tol = 1e-4;
  /// 0 checks every coordinate; otherwise a seeded random subset per tensor.
  std::size_t max_coords_per_param = 0;
  std::uint64_t seed = 0;
  /// Also differences with eps / 2 and drops coordinates where the two
  /// estimates disagree by more than tol / 4 (a ReLU, max-pool or sampling
  /// kink inside the stencil, or roundoff on a tiny gradient). The check
  /// fails when more than max_skip_fraction of the coordinates are dropped.
  bool kink_guard = false;
  double max_skip_fraction = 0.1;
};

/// Relative error |a - n| / max(|a|, |n|, 1e-8).
double relative_error(double analytic, double numeric);

/// Central differences (f(p + eps e) - f(p - eps e)) / 2 eps against backward().
GradReport grad_check(const ScalarFn& f, const ParamTensors& params, const GradCheckOptions& options = {});

/// Evaluates f once and returns (value, gradients).
std::pair<double, Gradients> value_and_grad(const ScalarFn& f, const ParamTensors& params);

std::string format_report(const GradReport& report);

}  // namespace depthforge::ad
