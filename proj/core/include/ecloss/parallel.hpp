#pragma once

#include <cstddef>
#include <functional>

namespace ecloss {

// Worker count: ECLOSS_THREADS if set and positive, otherwise all cores.
std::size_t worker_count();

// Runs fn(chunk_index, begin, end) over fixed-size chunks of [0, n).
// Chunk boundaries depend only on (n, chunk_size), never on the worker
// count, so callers that combine per-chunk results in chunk order get
// bit-identical output no matter how many threads ran.
void for_chunks(std::size_t n, std::size_t chunk_size,
                const std::function<void(std::size_t, std::size_t, std::size_t)>& fn);

}  // namespace ecloss
