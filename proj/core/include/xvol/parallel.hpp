#pragma once

#include <cstddef>
#include <functional>

namespace xvol {

/// Worker count used by the operator library. Defaults to 1; results do not
/// depend on it because every output element is owned by exactly one worker.
void set_num_threads(int n);
int num_threads();

/// Runs body(i) for i in [0, count), split into contiguous chunks.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

}  // namespace xvol
