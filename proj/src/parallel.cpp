#include "nsg/parallel.hpp"

#include <algorithm>
#include <atomic>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace nsg {

namespace {
std::atomic<int> g_chunks{64};
}  // namespace

void set_num_threads(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

int num_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_chunk_count(int n) { g_chunks = std::max(1, n); }
int chunk_count() { return g_chunks; }

std::pair<size_t, size_t> chunk_range(size_t n, int chunks, int c) {
  const size_t k = static_cast<size_t>(chunks);
  const size_t i = static_cast<size_t>(c);
  return {n * i / k, n * (i + 1) / k};
}

void parallel_chunks(int chunks, const std::function<void(int)>& body) {
#pragma omp parallel for schedule(dynamic, 1)
  for (int c = 0; c < chunks; ++c) body(c);
}

double chunked_sum(size_t n, const std::function<double(size_t, size_t)>& body) {
  const int chunks = chunk_count();
  std::vector<double> partial(static_cast<size_t>(chunks), 0.0);
  parallel_chunks(chunks, [&](int c) {
    const auto [b, e] = chunk_range(n, chunks, c);
    partial[static_cast<size_t>(c)] = b < e ? body(b, e) : 0.0;
  });
  double total = 0.0;
  for (double v : partial) total += v;
  return total;
}

}  // namespace nsg
