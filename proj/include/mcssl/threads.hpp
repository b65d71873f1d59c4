#pragma once

#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace mcssl {

// Intra-op parallelism cap. MCSSL_THREADS overrides; default is 1 so that
// results are reproducible unless the user opts in to more.
inline int thread_count() {
  static int n = [] {
    if (const char* env = std::getenv("MCSSL_THREADS")) {
      int v = std::atoi(env);
      if (v >= 1) return v;
    }
    return 1;
  }();
  return n;
}

// Static partition over [0, n); deterministic for any thread count because
// each item's work is independent and writes to disjoint outputs.
inline void parallel_for(int64_t n, const std::function<void(int64_t)>& fn) {
  int nt = thread_count();
  if (nt <= 1 || n <= 1) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  if (nt > n) nt = static_cast<int>(n);
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(nt));
  for (int t = 0; t < nt; ++t) {
    pool.emplace_back([&, t] {
      for (int64_t i = t; i < n; i += nt) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace mcssl
