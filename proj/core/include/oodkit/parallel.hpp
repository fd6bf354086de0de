#pragma once

#include <cstddef>
#include <functional>

namespace oodkit {

/// Worker count used when a call passes threads == 0. Resolves, in order,
/// the value set by set_default_threads, the OODKIT_THREADS environment
/// variable, then std::thread::hardware_concurrency().
std::size_t default_threads();
void set_default_threads(std::size_t threads);

/// Runs body(i) for i in [0, n) across contiguous chunks. Each index is
/// visited exactly once, so results are schedule-independent as long as
/// body(i) only writes slot i.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body,
                  std::size_t threads = 0);

}  // namespace oodkit
