#pragma once

#include <cstdint>
#include <vector>

#include "rankloss/matrix.hpp"

namespace rankloss {

// Thin SVD a = u * diag(s) * v^T with r = min(rows, cols) columns.
struct SvdResult {
  Matrix u;               // rows x r, orthonormal columns
  std::vector<double> s;  // r singular values, non-increasing
  Matrix v;               // cols x r, orthonormal columns
};

// Rank-k pair w ~ l * r^T. diag(s) is folded into l, so the pair alone
// reproduces the truncated matrix.
struct FactorPair {
  Matrix l;  // N x k
  Matrix r;  // M x k
  int rank = 0;

  Matrix product() const;  // l * r^T
  std::int64_t param_count() const;
};

struct NoiseStats {
  Matrix delta;  // l * r^T - w, the perturbation a swap to the pair injects
  double max_abs = 0.0;
  double fro = 0.0;
};

// One-sided Jacobi SVD. Deterministic: fixed sweep order, stable ordering of
// equal singular values, and a sign convention that makes the first nonzero
// entry of every u column non-negative. Throws ConvergenceError (with the
// residual reached) if the sweep budget of 100 * min(N, M) runs out.
SvdResult svd(const Matrix& a);

FactorPair truncate(const SvdResult& decomposition, int k);

NoiseStats noise(const Matrix& w, const FactorPair& f);

}  // namespace rankloss
