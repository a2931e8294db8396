#pragma once

#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace graphfnp {

// Worker cap: GRAPHFNP_NUM_THREADS when set, hardware concurrency otherwise.
inline int worker_threads() {
  if (const char* env = std::getenv("GRAPHFNP_NUM_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Applies fn(i) for i in [0, n) and returns results in index order. Work is
// statically partitioned; results are identical to the sequential run no
// matter the thread count, since each slot is computed independently.
template <typename T, typename Fn>
std::vector<T> parallel_map(int n, Fn&& fn) {
  std::vector<T> results(static_cast<std::size_t>(n));
  const int threads = std::min(worker_threads(), n);
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) results[i] = fn(i);
    return results;
  }
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mutex;
  for (int w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int i = w; i < n; i += threads) results[i] = fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
  return results;
}

}  // namespace graphfnp
