#pragma once

#include <cstddef>
#include <functional>

namespace ncconv {

// Intra-op worker count. Default 1. Every parallel region writes disjoint outputs, and
// reductions are done afterwards in index order, so results do not depend on this value.
void set_num_threads(int threads);
int num_threads();

void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

}  // namespace ncconv
