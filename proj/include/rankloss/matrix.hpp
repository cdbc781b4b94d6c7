#pragma once

#include <cstddef>
#include <initializer_list>
#include <vector>

#include "rankloss/errors.hpp"

namespace rankloss {

// Dense row-major matrix of doubles; the carrier for weights, factors,
// gradients and factorization noise. Desk-scale on purpose.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int rows_, int cols_, double fill = 0.0);

  static Matrix identity(int n);
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows_);

  double& operator()(int i, int j) {
    return data[static_cast<std::size_t>(i) * cols + j];
  }
  double operator()(int i, int j) const {
    return data[static_cast<std::size_t>(i) * cols + j];
  }

  std::size_t size() const { return data.size(); }
  bool same_shape(const Matrix& other) const {
    return rows == other.rows && cols == other.cols;
  }
  bool all_finite() const;
  double max_abs() const;
  double fro_norm() const;
};

Matrix transpose(const Matrix& a);
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double c);

// Throws InvalidInputError naming `what` if any entry is not finite.
void require_finite(const Matrix& a, const char* what);

}  // namespace rankloss
