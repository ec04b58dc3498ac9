#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace gslight {

/// Number of workers to use when the caller passes 0.
inline int default_workers() { return std::max(1u, std::thread::hardware_concurrency()); }

/// Splits [0, count) into `workers` contiguous chunks and runs
/// fn(worker, begin, end) on each. Chunk boundaries depend only on
/// (count, workers), so per-worker reductions are reproducible.
inline void parallel_chunks(std::size_t count, int workers,
                            const std::function<void(int, std::size_t, std::size_t)>& fn) {
  if (workers <= 0) workers = default_workers();
  workers = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(workers), std::max<std::size_t>(count, 1)));
  if (workers == 1) {
    fn(0, 0, count);
    return;
  }
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::jthread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    const std::size_t begin = count * static_cast<std::size_t>(w) / static_cast<std::size_t>(workers);
    const std::size_t end = count * static_cast<std::size_t>(w + 1) / static_cast<std::size_t>(workers);
    pool.emplace_back([&, w, begin, end] {
      try {
        fn(w, begin, end);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
  }
  pool.clear();
  if (error) std::rethrow_exception(error);
}

inline void parallel_for(std::size_t count, int workers, const std::function<void(std::size_t)>& fn) {
  parallel_chunks(count, workers, [&](int, std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) fn(i);
  });
}

}  // namespace gslight
