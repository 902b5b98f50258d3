#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace trilevel {

// Runs body(i) for i in [0, n) on `workers` threads with contiguous static
// chunks. body must only write state owned by index i.
template <class Body>
void parallel_for(std::size_t n, unsigned workers, Body&& body) {
  workers = std::max(1U, workers);
  if (workers == 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  const std::size_t chunks = std::min<std::size_t>(workers, n);
  std::vector<std::jthread> pool;
  pool.reserve(chunks);
  for (std::size_t w = 0; w < chunks; ++w) {
    const std::size_t begin = n * w / chunks;
    const std::size_t end = n * (w + 1) / chunks;
    pool.emplace_back([begin, end, &body] {
      for (std::size_t i = begin; i < end; ++i) body(i);
    });
  }
}

inline unsigned default_workers() {
  return std::max(1U, std::thread::hardware_concurrency());
}

}  // namespace trilevel
