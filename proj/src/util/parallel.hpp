#pragma once

#include <cstddef>
#include <functional>

namespace depthforge {

// Worker cap shared by all primitive ops. Reductions are always performed in a
// fixed order, so results do not depend on the thread count.
void set_thread_count(int n);
int thread_count();

void set_deterministic(bool on);
bool deterministic();

/// Runs fn(i) for i in [0, n). Work items must write disjoint outputs.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace depthforge
