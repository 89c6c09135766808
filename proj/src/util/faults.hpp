#pragma once

#include <optional>
#include <string_view>

namespace depthforge {

// Deliberate defects used as negative controls for the verification suites.
// Nothing enables them outside `verify --inject-fault`.
enum class Fault {
  kNone,
  kWarpSignFlip,
  kBerhuBranchSwap,
  kDropWeightDecay,
};

void inject_fault(Fault f);
Fault active_fault();
inline bool fault_active(Fault f) { return active_fault() == f; }

std::optional<Fault> parse_fault(std::string_view name);
std::string_view fault_name(Fault f);

}  // namespace depthforge
