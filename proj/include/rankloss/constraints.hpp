#pragma once

#include "rankloss/matrix.hpp"
#include "rankloss/svd.hpp"

namespace rankloss {

// Factorizing at rank eps/noise below these bounds is what makes a swap
// acceptable: the pair must be strictly smaller than the dense weight, and
// the injected noise must stay inside the elementwise box.

// Largest k with k * (n + m) < n * m; 0 means no rank shrinks the layer.
int max_compressive_rank(int n_rows, int m_cols);

// Elementwise |w - l r^T| <= eps.
bool lossless_condition(const Matrix& w, const FactorPair& f, double eps);

// First-order loss change <grad, delta>; negative predicts improvement.
double predicted_loss_delta(const Matrix& grad, const Matrix& delta);

struct ConstraintVerdict {
  bool compressive = false;
  bool lossless = false;
  // Reconstruction error at rounding level relative to w. An exact swap is
  // judged by the noise box alone; the sign of a ~1e-16 inner product is
  // noise, not a prediction.
  bool exact = false;
  double max_abs_noise = 0.0;
  double fro_noise = 0.0;
  double predicted_delta = 0.0;
};

ConstraintVerdict check(const Matrix& w, const FactorPair& f,
                        const Matrix& grad, double eps);

}  // namespace rankloss
