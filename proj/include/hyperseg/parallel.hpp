#pragma once

// Minimal worker-spawning parallel_for. Chunks are contiguous index ranges
// with disjoint outputs, so results are bit-identical for any thread count.
// HYPERSEG_THREADS caps the worker count (0/unset = hardware concurrency).

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace hyperseg {

inline int max_threads() {
  if (const char* env = std::getenv("HYPERSEG_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

// fn(begin, end) is called on contiguous sub-ranges of [0, n)
inline void parallel_for(long n, const std::function<void(long, long)>& fn) {
  if (n <= 0) return;
  int workers = std::min<long>(max_threads(), n);
  if (workers <= 1) {
    fn(0, n);
    return;
  }
  long chunk = (n + workers - 1) / workers;
  std::vector<std::thread> threads;
  threads.reserve(static_cast<std::size_t>(workers - 1));
  for (int w = 1; w < workers; ++w) {
    long b = w * chunk;
    long e = std::min(n, b + chunk);
    if (b >= e) break;
    threads.emplace_back([&fn, b, e] { fn(b, e); });
  }
  fn(0, std::min(n, chunk));
  for (auto& t : threads) t.join();
}

}  // namespace hyperseg
