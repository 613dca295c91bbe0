#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace rwkv {

// 64-bit floats everywhere. All operations are pure functions with a fixed
// per-entry summation order (ascending inner index), so results are
// reproducible bit-for-bit regardless of thread count.
using Vector = std::vector<double>;

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;  // row-major, data.size() == rows * cols

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  double* row(std::size_t r) { return data.data() + r * cols; }
  const double* row(std::size_t r) const { return data.data() + r * cols; }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

// Analytic operation accounting: every matmul-family call adds 2*m*n*k to a
// global counter. Used by the benchmark harness to assert per-step cost
// independent of wall-clock noise.
std::uint64_t flop_count();
void reset_flop_count();

// Worker cap for the optional threaded mode. 1 (the default) runs everything
// on the calling thread. Values > 1 split matmul-family loops over row ranges;
// per-entry summation order is unchanged, so results do not depend on this.
void set_max_threads(unsigned n);
unsigned max_threads();

// a [m×k] * b [k×n] -> [m×n]. Throws std::invalid_argument on dimension
// mismatch. Each output entry sums over the inner index in ascending order.
Matrix matmul(const Matrix& a, const Matrix& b);

// w [r×c] * x [c] -> [r]
Vector matvec(const Matrix& w, const Vector& x);

Matrix transpose(const Matrix& a);

// Row-wise projection y[t] = w * x[t]: x [T×in], w [out×in] -> [T×out].
// Performs the identical per-entry additions as matvec on each row.
Matrix project(const Matrix& x, const Matrix& w);

// Adjoint of project: g [T×out], w [out×in] -> [T×in], y[t] = w^T * g[t].
Matrix project_back(const Matrix& g, const Matrix& w);

// dw[o][j] += sum_t g[t][o] * x[t][j]; g [T×out], x [T×in], dw [out×in].
void accumulate_outer(Matrix& dw, const Matrix& g, const Matrix& x);

inline constexpr double kLayerNormEps = 1e-5;

// (x - mean) / sqrt(popvar + eps) * gamma + beta, population variance.
Vector layer_norm(const Vector& x, const Vector& gamma, const Vector& beta,
                  double eps = kLayerNormEps);
Matrix layer_norm_rows(const Matrix& x, const Vector& gamma, const Vector& beta,
                       double eps = kLayerNormEps);

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double squared_relu(double x) { return x > 0.0 ? x * x : 0.0; }

Vector sigmoid(const Vector& x);
Vector squared_relu(const Vector& x);
Vector exp(const Vector& x);

// Binary elementwise kinds. Shape mismatch throws std::invalid_argument.
Vector add(const Vector& a, const Vector& b);
Vector mul(const Vector& a, const Vector& b);
Vector vmax(const Vector& a, const Vector& b);
Matrix add(const Matrix& a, const Matrix& b);
Matrix mul(const Matrix& a, const Matrix& b);

bool all_finite(std::span<const double> v);
bool all_finite(const Matrix& m);

}  // namespace rwkv
