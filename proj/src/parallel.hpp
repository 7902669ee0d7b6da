#pragma once

#include <algorithm>
#include <cstdint>
#include <thread>
#include <vector>

namespace mmpivot {

// Splits [0, n) into contiguous chunks, one worker per chunk. Workers write
// to disjoint output slots, so results do not depend on the thread count.
template <typename Fn>
void parallel_for(int64_t n, unsigned threads, Fn&& fn) {
  if (n <= 0) return;
  if (threads <= 1 || n == 1) {
    fn(int64_t(0), n);
    return;
  }
  const int64_t workers = std::min<int64_t>(threads, n);
  const int64_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  for (int64_t w = 0; w < workers; ++w) {
    const int64_t begin = w * chunk;
    const int64_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace mmpivot
