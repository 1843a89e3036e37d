#pragma once

#include <cstddef>
#include <functional>

namespace pf {

// Worker cap shared by every parallel loop. Results never depend on it: all
// parallel loops write disjoint outputs and reductions happen in index order.
void set_num_threads(int n);
int num_threads();

// Runs fn(i) for i in [0, n), statically partitioned across workers.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace pf
