#pragma once

#include <cstddef>
#include <functional>

namespace marsim {

/// Number of worker threads used by parallel_for (default: hardware concurrency).
void set_thread_count(unsigned n);
unsigned thread_count();

/// Run fn(i) for i in [0, n). Each index must write only its own outputs; results are
/// then independent of the schedule. Nested calls from inside a worker run serially.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace marsim
