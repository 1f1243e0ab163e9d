#pragma once

#include <cstddef>
#include <functional>

namespace protoeval {

/// Worker cap: PROTOEVAL_THREADS if set, else hardware concurrency, unless
/// overridden by a live ThreadLimit.
std::size_t max_threads();

/// Scoped override of max_threads(); restores the previous value on exit.
class ThreadLimit {
 public:
  explicit ThreadLimit(std::size_t threads);
  ~ThreadLimit();
  ThreadLimit(const ThreadLimit&) = delete;
  ThreadLimit& operator=(const ThreadLimit&) = delete;

 private:
  std::size_t previous_;
};

/// Runs body(i) for i in [0, n). Callers write results into per-index slots
/// and reduce serially afterwards, so output never depends on scheduling.
/// The first exception thrown by any body is rethrown on the caller.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace protoeval
