#include "rankloss/matrix.hpp"

#include <cmath>
#include <string>

namespace rankloss {

Matrix::Matrix(int rows_, int cols_, double fill) : rows(rows_), cols(cols_) {
  if (rows_ < 0 || cols_ < 0)
    throw InvalidInputError("matrix: negative dimension");
  data.assign(static_cast<std::size_t>(rows_) * cols_, fill);
}

Matrix Matrix::identity(int n) {
  Matrix m(n, n, 0.0);
  for (int i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows_) {
  const int r = static_cast<int>(rows_.size());
  const int c = r > 0 ? static_cast<int>(rows_.begin()->size()) : 0;
  Matrix m(r, c);
  int i = 0;
  for (const auto& row : rows_) {
    if (static_cast<int>(row.size()) != c)
      throw InvalidInputError("matrix: ragged initializer");
    int j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

bool Matrix::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

double Matrix::max_abs() const {
  double m = 0.0;
  for (double v : data) m = std::max(m, std::abs(v));
  return m;
}

double Matrix::fro_norm() const {
  double acc = 0.0;
  for (double v : data) acc += v * v;
  return std::sqrt(acc);
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols, a.rows);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
  return t;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows)
    throw InvalidInputError("matmul: inner dimensions disagree (" +
                            std::to_string(a.cols) + " vs " +
                            std::to_string(b.rows) + ")");
  Matrix c(a.rows, b.cols, 0.0);
  for (int i = 0; i < a.rows; ++i) {
    for (int k = 0; k < a.cols; ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (int j = 0; j < b.cols; ++j) c(i, j) += aik * b(k, j);
    }
  }
  return c;
}

Matrix add(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw InvalidInputError("add: shape mismatch");
  Matrix c = a;
  for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] += b.data[i];
  return c;
}

Matrix sub(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw InvalidInputError("sub: shape mismatch");
  Matrix c = a;
  for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] -= b.data[i];
  return c;
}

Matrix scale(const Matrix& a, double c) {
  Matrix s = a;
  for (double& v : s.data) v *= c;
  return s;
}

void require_finite(const Matrix& a, const char* what) {
  if (!a.all_finite())
    throw InvalidInputError(std::string(what) + ": non-finite entry");
}

}  // namespace rankloss
