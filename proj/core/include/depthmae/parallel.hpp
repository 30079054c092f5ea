#pragma once

#include <cstddef>
#include <functional>

namespace depthmae {

/// Worker count used by kernels. 1 (the default) runs everything inline.
void set_num_threads(unsigned count);
unsigned num_threads();

/// Calls fn(begin, end) over disjoint chunks of [0, n). Each index is handled
/// by exactly one call, so results never depend on the thread count.
void parallel_for(std::size_t n, std::size_t min_chunk,
                  const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace depthmae
