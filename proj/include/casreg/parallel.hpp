#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace casreg {

namespace detail {
inline std::atomic<int>& thread_setting() {
  static std::atomic<int> n{0};
  return n;
}
inline thread_local bool in_parallel_region = false;
}  // namespace detail

/// Worker count for parallel loops. 0 (default) means all hardware threads.
inline void set_num_threads(int n) { detail::thread_setting().store(std::max(0, n)); }

inline int num_threads() {
  int n = detail::thread_setting().load();
  if (n <= 0) n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  return n;
}

/// Runs fn(i) for i in [begin, end) across worker threads using static contiguous chunks.
/// Nested calls run serially on the calling thread. Each index is processed exactly once, so
/// results written per-index do not depend on the thread count.
template <typename Fn>
void parallel_for(std::ptrdiff_t begin, std::ptrdiff_t end, Fn&& fn) {
  const std::ptrdiff_t n = end - begin;
  if (n <= 0) return;
  const int workers = static_cast<int>(std::min<std::ptrdiff_t>(num_threads(), n));
  if (workers <= 1 || detail::in_parallel_region) {
    for (std::ptrdiff_t i = begin; i < end; ++i) fn(i);
    return;
  }

  std::exception_ptr error;
  std::mutex error_mutex;
  auto run = [&](std::ptrdiff_t lo, std::ptrdiff_t hi) {
    detail::in_parallel_region = true;
    try {
      for (std::ptrdiff_t i = lo; i < hi; ++i) fn(i);
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mutex);
      if (!error) error = std::current_exception();
    }
    detail::in_parallel_region = false;
  };

  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers - 1));
  const std::ptrdiff_t chunk = (n + workers - 1) / workers;
  for (int t = 1; t < workers; ++t) {
    const std::ptrdiff_t lo = begin + t * chunk;
    const std::ptrdiff_t hi = std::min(end, lo + chunk);
    if (lo < hi) pool.emplace_back(run, lo, hi);
  }
  run(begin, std::min(end, begin + chunk));
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

/// Sum of fn(i) over [0, n), accumulated in index order so the result is bit-identical for any
/// thread count.
template <typename Fn>
double ordered_sum(std::ptrdiff_t n, Fn&& fn) {
  std::vector<double> partial(static_cast<std::size_t>(std::max<std::ptrdiff_t>(n, 0)), 0.0);
  parallel_for(0, n, [&](std::ptrdiff_t i) { partial[static_cast<std::size_t>(i)] = fn(i); });
  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}

}  // namespace casreg
