// SPDX-License-Identifier: Apache-2.0
//
// Chunked parallel-for. Work is split into fixed-size blocks whose
// boundaries do not depend on the worker count, so per-block outputs can be
// merged in block order and every reduction stays bit-identical whether it
// runs on 1 thread or 8.

#pragma once

#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace gemreg {

inline std::size_t chunk_count(std::size_t n, std::size_t block) {
  return block == 0 ? 0 : (n + block - 1) / block;
}

/// fn(chunk_index, begin, end) is called once per block. With workers > 1 the
/// blocks are claimed from an atomic counter; fn must only write state owned
/// by its chunk index.
template <typename Fn>
void parallel_chunks(std::size_t n, std::size_t block, unsigned workers, Fn&& fn) {
  if (n == 0) return;
  const std::size_t chunks = chunk_count(n, block);
  if (workers <= 1 || chunks <= 1) {
    for (std::size_t c = 0; c < chunks; ++c) {
      const std::size_t begin = c * block;
      const std::size_t end = std::min(n, begin + block);
      fn(c, begin, end);
    }
    return;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t c = next.fetch_add(1);
      if (c >= chunks) break;
      const std::size_t begin = c * block;
      const std::size_t end = std::min(n, begin + block);
      fn(c, begin, end);
    }
  };
  std::vector<std::thread> pool;
  const unsigned spawn = static_cast<unsigned>(std::min<std::size_t>(workers, chunks));
  pool.reserve(spawn);
  for (unsigned i = 0; i < spawn; ++i) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();
}

}  // namespace gemreg
