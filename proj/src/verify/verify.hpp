#pragma once

#include <functional>
#include <string>
#include <vector>

#include "autodiff/gradcheck.hpp"

namespace depthforge {

enum class VerifyLevel { kQuick, kFull };

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

/// Max gradient error of one loss term through the network.
struct GradTableRow {
  std::string term;
  ad::GradReport report;
};

struct VerifyReport {
  std::vector<CheckResult> checks;
  std::vector<GradTableRow> grad_table;  // full level only
  bool passed() const;
};

VerifyReport run_verify(VerifyLevel level, const std::function<void(const CheckResult&)>& on_check = {});

std::string format_grad_table(const std::vector<GradTableRow>& rows);

// Individual suites.
CheckResult check_primitive_gradients();
CheckResult check_warping(std::size_t scenes);
CheckResult check_alignment_oracle(std::size_t scenes);
CheckResult check_berhu(std::size_t cases);
CheckResult check_schedule();
CheckResult check_loss_gradients();
CheckResult check_weight_decay();
CheckResult check_metric_oracle(std::size_t sets);
CheckResult check_protocols();
CheckResult check_shapes();

/// Central differences of one term ("total", "supervised", "unsupervised",
/// "regularizer") through a two-stage width-1/8 network on a 32x16 scene.
ad::GradReport network_gradcheck(const std::string& term, std::size_t coords_per_tensor = 128);

}  // namespace depthforge
