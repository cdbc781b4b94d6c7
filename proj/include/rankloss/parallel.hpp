#pragma once

#include <cstddef>

namespace rankloss {

// Number of OpenMP threads the library's kernels will use. Defaults to the
// OpenMP maximum, capped by the RANKLOSS_THREADS environment variable.
int thread_cap();

// Programmatic override; takes precedence over the environment. n <= 0
// restores the default.
void set_thread_cap(int n);

// Fixed-shape pairwise reduction. The result depends only on the contents of
// v, never on thread count or scheduling, so parallel callers that fill a
// buffer and reduce it here stay bit-reproducible.
double pairwise_sum(const double* v, std::size_t n);

}  // namespace rankloss
