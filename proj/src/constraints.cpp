#include "rankloss/constraints.hpp"

#include <cmath>
#include <string>

namespace rankloss {

int max_compressive_rank(int n_rows, int m_cols) {
  if (n_rows < 1 || m_cols < 1)
    throw InvalidInputError("max_compressive_rank: dimensions must be >= 1");
  const long long nm = static_cast<long long>(n_rows) * m_cols;
  const long long sum = static_cast<long long>(n_rows) + m_cols;
  long long k = nm / sum;
  if (nm % sum == 0) --k;  // k * sum must stay strictly below nm
  return static_cast<int>(k < 0 ? 0 : k);
}

bool lossless_condition(const Matrix& w, const FactorPair& f, double eps) {
  if (!(eps > 0.0) || !std::isfinite(eps))
    throw InvalidInputError("lossless_condition: eps must be positive");
  return noise(w, f).max_abs <= eps;
}

double predicted_loss_delta(const Matrix& grad, const Matrix& delta) {
  if (!grad.same_shape(delta))
    throw InvalidInputError("predicted_loss_delta: shape mismatch");
  require_finite(grad, "predicted_loss_delta grad");
  require_finite(delta, "predicted_loss_delta delta");
  double acc = 0.0;
  for (std::size_t e = 0; e < grad.data.size(); ++e)
    acc += grad.data[e] * delta.data[e];
  return acc;
}

ConstraintVerdict check(const Matrix& w, const FactorPair& f,
                        const Matrix& grad, double eps) {
  if (!(eps > 0.0) || !std::isfinite(eps))
    throw InvalidInputError("check: eps must be positive");
  if (!grad.same_shape(w)) throw InvalidInputError("check: grad shape mismatch");
  const NoiseStats ns = noise(w, f);
  ConstraintVerdict v;
  v.max_abs_noise = ns.max_abs;
  v.fro_noise = ns.fro;
  v.exact = ns.max_abs <= 1e-12 * w.max_abs();
  v.lossless = ns.max_abs <= eps;
  v.compressive = f.rank >= 1 && f.rank <= max_compressive_rank(w.rows, w.cols);
  v.predicted_delta = predicted_loss_delta(grad, ns.delta);
  return v;
}

}  // namespace rankloss
