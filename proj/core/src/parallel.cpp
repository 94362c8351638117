// SPDX-License-Identifier: Apache-2.0

#include "rblr/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace rblr {

std::size_t max_threads() {
  static const std::size_t cap = [] {
    std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("RBLR_THREADS")) {
      try {
        const long v = std::stol(env);
        if (v >= 1) return std::min<std::size_t>(static_cast<std::size_t>(v), hw);
      } catch (...) {
      }
    }
    return hw;
  }();
  return cap;
}

void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body) {
  const std::size_t workers = std::min(max_threads(), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < count; i += workers) body(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace rblr
