#include "rankloss/parallel.hpp"

#include <algorithm>
#include <cstdlib>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace rankloss {

namespace {

int g_override = 0;

int env_cap() {
  static const int cap = [] {
    const char* s = std::getenv("RANKLOSS_THREADS");
    if (!s) return 0;
    const long v = std::strtol(s, nullptr, 10);
    return v > 0 ? static_cast<int>(v) : 0;
  }();
  return cap;
}

}  // namespace

int thread_cap() {
  if (g_override > 0) return g_override;
#ifdef _OPENMP
  int n = omp_get_max_threads();
#else
  int n = 1;
#endif
  if (const int env = env_cap(); env > 0) n = std::min(n, env);
  return std::max(n, 1);
}

void set_thread_cap(int n) { g_override = n > 0 ? n : 0; }

double pairwise_sum(const double* v, std::size_t n) {
  if (n == 0) return 0.0;
  if (n <= 8) {
    double acc = v[0];
    for (std::size_t i = 1; i < n; ++i) acc += v[i];
    return acc;
  }
  const std::size_t half = n / 2;
  return pairwise_sum(v, half) + pairwise_sum(v + half, n - half);
}

}  // namespace rankloss
