#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace pixeltrap {

/// Process-wide cap on worker threads (0 = hardware concurrency).
inline std::atomic<unsigned>& max_threads()
{
  static std::atomic<unsigned> value{0};
  return value;
}

inline unsigned worker_count()
{
  unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  unsigned cap = max_threads().load();
  return cap == 0 ? hw : std::min(cap, hw);
}

/// Runs fn(i) for i in [0, n) over contiguous chunks. fn must only write
/// to per-index state.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn)
{
  unsigned workers = static_cast<unsigned>(std::min<std::size_t>(worker_count(), n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::size_t chunk = (n + workers - 1) / workers;
  for (unsigned w = 0; w < workers; ++w) {
    std::size_t begin = w * chunk;
    std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] {
      for (std::size_t i = begin; i < end; ++i) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace pixeltrap
