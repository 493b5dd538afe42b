#pragma once

#include <cstddef>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace deid {

// Execution mode for batch kernels. Iterations of every parallel kernel
// are independent and write disjoint, pre-sized output slots, so Serial
// and Parallel produce bit-identical results. Serial stays around as the
// reference implementation for equivalence tests and benchmarks.
enum class Exec { Serial, Parallel };

template <typename F>
void for_each_index(Exec mode, size_t n, F&& f) {
#ifdef _OPENMP
  if (mode == Exec::Parallel && n > 1) {
#pragma omp parallel for schedule(dynamic)
    for (long long i = 0; i < static_cast<long long>(n); ++i) {
      f(static_cast<size_t>(i));
    }
    return;
  }
#else
  (void)mode;
#endif
  for (size_t i = 0; i < n; ++i) f(i);
}

inline int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace deid
