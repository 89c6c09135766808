#include "util/faults.hpp"

#include <atomic>

namespace depthforge {
namespace {
std::atomic<Fault> g_fault{Fault::kNone};
}

void inject_fault(Fault f) { g_fault.store(f); }
Fault active_fault() { return g_fault.load(std::memory_order_relaxed); }

std::optional<Fault> parse_fault(std::string_view name) {
  if (name == "none") return Fault::kNone;
  if (name == "warp_sign") return Fault::kWarpSignFlip;
  if (name == "berhu_branch") return Fault::kBerhuBranchSwap;
  if (name == "weight_decay") return Fault::kDropWeightDecay;
  return std::nullopt;
}

std::string_view fault_name(Fault f) {
  switch (f) {
    case Fault::kNone: return "none";
    case Fault::kWarpSignFlip: return "warp_sign";
    case Fault::kBerhuBranchSwap: return "berhu_branch";
    case Fault::kDropWeightDecay: return "weight_decay";
  }
  return "none";
}

}  // namespace depthforge
