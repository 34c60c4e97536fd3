#pragma once

#include <cstddef>
#include <functional>
#include <vector>

namespace nsg {

/// Number of worker threads used by the kernels (0 = runtime default).
void set_num_threads(int n);
int num_threads();

/// Fixed number of index chunks for reductions. Results are bitwise
/// reproducible for a fixed chunk count, independent of the thread count.
void set_chunk_count(int n);
int chunk_count();

/// [begin, end) of chunk c when splitting n items into `chunks` pieces.
std::pair<size_t, size_t> chunk_range(size_t n, int chunks, int c);

/// Runs body(c) for every chunk index c in [0, chunks), in parallel.
void parallel_chunks(int chunks, const std::function<void(int)>& body);

/// Sum of body(begin, end) over the chunks of [0, n), combined in chunk order.
double chunked_sum(size_t n, const std::function<double(size_t, size_t)>& body);

}  // namespace nsg
