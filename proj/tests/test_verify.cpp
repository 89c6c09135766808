#include "doctest.h"
#include "util/faults.hpp"
#include "verify/verify.hpp"

using namespace depthforge;

namespace {

struct FaultGuard {
  explicit FaultGuard(Fault f) { inject_fault(f); }
  ~FaultGuard() { inject_fault(Fault::kNone); }
};

}  // namespace

TEST_CASE("quick verification passes on a correct build") {
  const VerifyReport rep = run_verify(VerifyLevel::kQuick);
  for (const auto& c : rep.checks) {
    INFO(c.name << ": " << c.detail);
    CHECK(c.passed);
  }
  CHECK(rep.passed());
  CHECK(rep.grad_table.empty());
}

TEST_CASE("each injected fault is caught by the suite aimed at it") {
  {
    FaultGuard g(Fault::kWarpSignFlip);
    CHECK_FALSE(check_warping(3).passed);
    CHECK_FALSE(check_alignment_oracle(3).passed);
    CHECK(check_berhu(100).passed);
  }
  {
    FaultGuard g(Fault::kBerhuBranchSwap);
    CHECK_FALSE(check_berhu(100).passed);
    CHECK(check_warping(2).passed);
  }
  {
    FaultGuard g(Fault::kDropWeightDecay);
    CHECK_FALSE(check_weight_decay().passed);
  }
  CHECK(check_weight_decay().passed);
}

TEST_CASE("metric and protocol suites pass") {
  CHECK(check_metric_oracle(100).passed);
  CHECK(check_protocols().passed);
  CHECK(check_schedule().passed);
  CHECK(check_shapes().passed);
}

TEST_CASE("gradient table rows report one term each") {
  const auto rep = network_gradcheck("regularizer", 8);
  CHECK(rep.passed);
  CHECK(rep.params.size() > 10);
  CHECK_THROWS(network_gradcheck("nope", 1));
}
