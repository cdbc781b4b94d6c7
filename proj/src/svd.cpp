#include "rankloss/svd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace rankloss {

namespace {

constexpr double kJacobiTol = 1e-12;

struct JacobiOutcome {
  bool converged = false;
  double residual = 0.0;  // worst normalized off-diagonal seen in the last sweep
};

// Orthogonalizes the columns of b (rows >= cols) by plane rotations,
// accumulating them into v. Classic one-sided Jacobi with a relative
// convergence test per column pair.
JacobiOutcome jacobi_orthogonalize(Matrix& b, Matrix& v, long max_sweeps) {
  const int n = b.rows;
  const int m = b.cols;
  v = Matrix::identity(m);

  double worst = 0.0;
  for (long sweep = 0; sweep < max_sweeps; ++sweep) {
    worst = 0.0;
    for (int p = 0; p < m - 1; ++p) {
      for (int q = p + 1; q < m; ++q) {
        double app = 0.0, aqq = 0.0, apq = 0.0;
        for (int i = 0; i < n; ++i) {
          const double bip = b(i, p);
          const double biq = b(i, q);
          app += bip * bip;
          aqq += biq * biq;
          apq += bip * biq;
        }
        const double denom = std::sqrt(app) * std::sqrt(aqq);
        if (denom == 0.0 || std::abs(apq) <= kJacobiTol * denom) continue;
        worst = std::max(worst, std::abs(apq) / denom);

        const double tau = (aqq - app) / (2.0 * apq);
        const double t =
            (tau >= 0.0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;
        for (int i = 0; i < n; ++i) {
          const double bip = b(i, p);
          const double biq = b(i, q);
          b(i, p) = c * bip - s * biq;
          b(i, q) = s * bip + c * biq;
        }
        for (int i = 0; i < m; ++i) {
          const double vip = v(i, p);
          const double viq = v(i, q);
          v(i, p) = c * vip - s * viq;
          v(i, q) = s * vip + c * viq;
        }
      }
    }
    if (worst == 0.0) return {true, 0.0};
  }
  return {false, worst};
}

// Fills column j of u with a unit vector orthogonal to all columns already
// placed. Picks the canonical basis vector with the largest residual, so the
// completion is deterministic.
void complete_column(Matrix& u, int j) {
  const int n = u.rows;
  const int m = u.cols;
  int best = -1;
  double best_norm = -1.0;
  std::vector<double> best_res(n), res(n);
  for (int cand = 0; cand < n; ++cand) {
    for (int i = 0; i < n; ++i) res[i] = 0.0;
    res[cand] = 1.0;
    for (int k = 0; k < m; ++k) {
      if (k == j) continue;
      double dot = u(cand, k);
      for (int i = 0; i < n; ++i) res[i] -= dot * u(i, k);
    }
    double norm = 0.0;
    for (int i = 0; i < n; ++i) norm += res[i] * res[i];
    if (norm > best_norm) {
      best_norm = norm;
      best = cand;
      best_res = res;
    }
  }
  (void)best;
  // One re-orthogonalization pass for hygiene, then normalize.
  for (int k = 0; k < m; ++k) {
    if (k == j) continue;
    double dot = 0.0;
    for (int i = 0; i < n; ++i) dot += best_res[i] * u(i, k);
    for (int i = 0; i < n; ++i) best_res[i] -= dot * u(i, k);
  }
  double norm = 0.0;
  for (int i = 0; i < n; ++i) norm += best_res[i] * best_res[i];
  norm = std::sqrt(norm);
  for (int i = 0; i < n; ++i) u(i, j) = best_res[i] / norm;
}

void fix_signs(Matrix& u, Matrix& v) {
  for (int j = 0; j < u.cols; ++j) {
    double lead = 0.0;
    for (int i = 0; i < u.rows; ++i) {
      if (u(i, j) != 0.0) {
        lead = u(i, j);
        break;
      }
    }
    if (lead < 0.0) {
      for (int i = 0; i < u.rows; ++i) u(i, j) = -u(i, j);
      for (int i = 0; i < v.rows; ++i) v(i, j) = -v(i, j);
    }
  }
}

}  // namespace

SvdResult svd(const Matrix& a) {
  if (a.rows < 1 || a.cols < 1)
    throw InvalidInputError("svd: matrix must be at least 1x1");
  require_finite(a, "svd input");

  const bool transposed = a.rows < a.cols;
  Matrix b = transposed ? transpose(a) : a;
  const int n = b.rows;
  const int m = b.cols;  // m == min(a.rows, a.cols)

  Matrix v;
  const auto outcome = jacobi_orthogonalize(b, v, 100L * m);
  if (!outcome.converged)
    throw ConvergenceError(
        "svd: Jacobi sweep budget exhausted at residual " +
            std::to_string(outcome.residual),
        outcome.residual);

  std::vector<double> norms(m);
  for (int j = 0; j < m; ++j) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += b(i, j) * b(i, j);
    norms[j] = std::sqrt(acc);
  }
  std::vector<int> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int x, int y) { return norms[x] > norms[y]; });

  Matrix u(n, m, 0.0);
  Matrix vs(m, m, 0.0);
  std::vector<double> s(m);
  const double s_max = norms[order[0]];
  const double tiny =
      s_max * std::numeric_limits<double>::epsilon() * std::max(n, m);

  std::vector<int> degenerate;
  for (int jj = 0; jj < m; ++jj) {
    const int src = order[jj];
    s[jj] = norms[src];
    for (int i = 0; i < m; ++i) vs(i, jj) = v(i, src);
    if (norms[src] > tiny) {
      const double inv = 1.0 / norms[src];
      for (int i = 0; i < n; ++i) u(i, jj) = b(i, src) * inv;
    } else {
      degenerate.push_back(jj);
    }
  }
  // Numerically zero singular directions get an explicit orthonormal basis so
  // u keeps its column orthonormality guarantee.
  for (int jj : degenerate) complete_column(u, jj);

  SvdResult out;
  if (transposed) {
    out.u = std::move(vs);
    out.v = std::move(u);
  } else {
    out.u = std::move(u);
    out.v = std::move(vs);
  }
  out.s = std::move(s);
  fix_signs(out.u, out.v);
  return out;
}

Matrix FactorPair::product() const { return matmul(l, transpose(r)); }

std::int64_t FactorPair::param_count() const {
  return static_cast<std::int64_t>(l.rows) * rank +
         static_cast<std::int64_t>(r.rows) * rank;
}

FactorPair truncate(const SvdResult& decomposition, int k) {
  const int r = static_cast<int>(decomposition.s.size());
  if (k < 1 || k > r)
    throw InvalidRankError("truncate: rank " + std::to_string(k) +
                           " outside [1, " + std::to_string(r) + "]");
  FactorPair f;
  f.rank = k;
  f.l = Matrix(decomposition.u.rows, k);
  f.r = Matrix(decomposition.v.rows, k);
  for (int i = 0; i < f.l.rows; ++i)
    for (int j = 0; j < k; ++j)
      f.l(i, j) = decomposition.u(i, j) * decomposition.s[j];
  for (int i = 0; i < f.r.rows; ++i)
    for (int j = 0; j < k; ++j) f.r(i, j) = decomposition.v(i, j);
  return f;
}

NoiseStats noise(const Matrix& w, const FactorPair& f) {
  require_finite(w, "noise weight");
  Matrix p = f.product();
  if (!p.same_shape(w))
    throw InvalidInputError("noise: factor product shape does not match weight");
  NoiseStats ns;
  ns.delta = sub(p, w);
  ns.max_abs = ns.delta.max_abs();
  ns.fro = ns.delta.fro_norm();
  return ns;
}

}  // namespace rankloss
