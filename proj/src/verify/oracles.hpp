#pragma once

#include <cstdint>

#include "eval/metrics.hpp"

namespace depthforge {

/// Straight scalar loops over the metric definitions, one pass per metric, in
/// long double. Independent of compute_metrics.
Metrics reference_metrics(const DepthPairs& pairs);

/// Random positive depth pairs (log-uniform in [0.5, 100]); a fraction of the
/// predictions sits within a few percent of the ground truth so every accuracy
/// bin is populated.
DepthPairs random_pairs(std::size_t n, std::uint64_t seed);

/// Largest field difference, each scaled by max(1, |b|); a count mismatch
/// returns +inf.
double metrics_max_difference(const Metrics& a, const Metrics& b);

}  // namespace depthforge
