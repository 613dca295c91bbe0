#include "rwkv/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <thread>

namespace rwkv {

namespace {

std::atomic<std::uint64_t> g_flops{0};
unsigned g_max_threads = 1;

void count_flops(std::uint64_t m, std::uint64_t n, std::uint64_t k) {
  g_flops.fetch_add(2 * m * n * k, std::memory_order_relaxed);
}

// Splits [0, n) into contiguous ranges, one worker per range. Each output
// entry is produced by exactly one worker with the serial summation order.
template <class F>
void parallel_rows(std::size_t n, F&& body) {
  const unsigned want = g_max_threads;
  if (want <= 1 || n < 64) {
    body(std::size_t{0}, n);
    return;
  }
  const unsigned workers = static_cast<unsigned>(
      std::min<std::size_t>(want, std::max<std::size_t>(1, n / 16)));
  if (workers <= 1) {
    body(std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (unsigned w = 0; w < workers; ++w) {
    const std::size_t lo = std::min(n, w * chunk);
    const std::size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&body, lo, hi] { body(lo, hi); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace

std::uint64_t flop_count() { return g_flops.load(std::memory_order_relaxed); }
void reset_flop_count() { g_flops.store(0, std::memory_order_relaxed); }

void set_max_threads(unsigned n) { g_max_threads = n == 0 ? 1 : n; }
unsigned max_threads() { return g_max_threads; }

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows)
    throw std::invalid_argument("matmul: inner dimensions disagree");
  Matrix out(a.rows, b.cols, 0.0);
  count_flops(a.rows, b.cols, a.cols);
  // ikj order: out[i][j] accumulates over k ascending, identical additions to
  // the naive ijk triple loop, but with a vectorizable contiguous inner loop.
  parallel_rows(a.rows, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      double* out_row = out.row(i);
      const double* a_row = a.row(i);
      for (std::size_t k = 0; k < a.cols; ++k) {
        const double av = a_row[k];
        const double* b_row = b.row(k);
        for (std::size_t j = 0; j < b.cols; ++j) out_row[j] += av * b_row[j];
      }
    }
  });
  return out;
}

Vector matvec(const Matrix& w, const Vector& x) {
  if (w.cols != x.size())
    throw std::invalid_argument("matvec: dimension mismatch");
  Vector out(w.rows, 0.0);
  count_flops(w.rows, 1, w.cols);
  for (std::size_t i = 0; i < w.rows; ++i) {
    const double* w_row = w.row(i);
    double sum = 0.0;
    for (std::size_t j = 0; j < w.cols; ++j) sum += w_row[j] * x[j];
    out[i] = sum;
  }
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) out(j, i) = a(i, j);
  return out;
}

Matrix project(const Matrix& x, const Matrix& w) {
  if (x.cols != w.cols)
    throw std::invalid_argument("project: dimension mismatch");
  Matrix out(x.rows, w.rows, 0.0);
  count_flops(x.rows, w.rows, w.cols);
  if (x.rows < 8) {
    // few rows: plain dot products, no transpose overhead
    for (std::size_t t = 0; t < x.rows; ++t) {
      const double* x_row = x.row(t);
      double* out_row = out.row(t);
      for (std::size_t o = 0; o < w.rows; ++o) {
        const double* w_row = w.row(o);
        double sum = 0.0;
        for (std::size_t j = 0; j < w.cols; ++j) sum += w_row[j] * x_row[j];
        out_row[o] = sum;
      }
    }
    return out;
  }
  // ikj over the transposed weights: the same per-entry additions in the same
  // ascending-j order, with a vectorizable contiguous inner loop
  const Matrix wt = transpose(w);
  parallel_rows(x.rows, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t t = lo; t < hi; ++t) {
      const double* x_row = x.row(t);
      double* out_row = out.row(t);
      for (std::size_t j = 0; j < w.cols; ++j) {
        const double xv = x_row[j];
        const double* wt_row = wt.row(j);
        for (std::size_t o = 0; o < w.rows; ++o) out_row[o] += xv * wt_row[o];
      }
    }
  });
  return out;
}

Matrix project_back(const Matrix& g, const Matrix& w) {
  if (g.cols != w.rows)
    throw std::invalid_argument("project_back: dimension mismatch");
  Matrix out(g.rows, w.cols, 0.0);
  count_flops(g.rows, w.cols, w.rows);
  parallel_rows(g.rows, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t t = lo; t < hi; ++t) {
      const double* g_row = g.row(t);
      double* out_row = out.row(t);
      for (std::size_t o = 0; o < w.rows; ++o) {
        const double gv = g_row[o];
        const double* w_row = w.row(o);
        for (std::size_t j = 0; j < w.cols; ++j) out_row[j] += gv * w_row[j];
      }
    }
  });
  return out;
}

void accumulate_outer(Matrix& dw, const Matrix& g, const Matrix& x) {
  if (g.rows != x.rows || dw.rows != g.cols || dw.cols != x.cols)
    throw std::invalid_argument("accumulate_outer: dimension mismatch");
  count_flops(dw.rows, dw.cols, g.rows);
  parallel_rows(dw.rows, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t o = lo; o < hi; ++o) {
      double* dw_row = dw.row(o);
      for (std::size_t t = 0; t < g.rows; ++t) {
        const double gv = g(t, o);
        const double* x_row = x.row(t);
        for (std::size_t j = 0; j < x.cols; ++j) dw_row[j] += gv * x_row[j];
      }
    }
  });
}

namespace {

void layer_norm_into(const double* x, std::size_t d, const double* gamma,
                     const double* beta, double eps, double* out) {
  double mean = 0.0;
  for (std::size_t i = 0; i < d; ++i) mean += x[i];
  mean /= static_cast<double>(d);
  double var = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double c = x[i] - mean;
    var += c * c;
  }
  var /= static_cast<double>(d);
  const double inv = 1.0 / std::sqrt(var + eps);
  for (std::size_t i = 0; i < d; ++i)
    out[i] = (x[i] - mean) * inv * gamma[i] + beta[i];
}

}  // namespace

Vector layer_norm(const Vector& x, const Vector& gamma, const Vector& beta,
                  double eps) {
  if (x.empty() || gamma.size() != x.size() || beta.size() != x.size())
    throw std::invalid_argument("layer_norm: dimension mismatch");
  if (!(eps > 0.0)) throw std::invalid_argument("layer_norm: eps must be > 0");
  Vector out(x.size());
  layer_norm_into(x.data(), x.size(), gamma.data(), beta.data(), eps, out.data());
  return out;
}

Matrix layer_norm_rows(const Matrix& x, const Vector& gamma, const Vector& beta,
                       double eps) {
  if (gamma.size() != x.cols || beta.size() != x.cols)
    throw std::invalid_argument("layer_norm_rows: dimension mismatch");
  if (!(eps > 0.0)) throw std::invalid_argument("layer_norm_rows: eps must be > 0");
  Matrix out(x.rows, x.cols);
  for (std::size_t t = 0; t < x.rows; ++t)
    layer_norm_into(x.row(t), x.cols, gamma.data(), beta.data(), eps, out.row(t));
  return out;
}

Vector sigmoid(const Vector& x) {
  Vector out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = sigmoid(x[i]);
  return out;
}

Vector squared_relu(const Vector& x) {
  Vector out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = squared_relu(x[i]);
  return out;
}

Vector exp(const Vector& x) {
  Vector out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::exp(x[i]);
  return out;
}

namespace {

template <class Op>
Vector zip(const Vector& a, const Vector& b, Op op, const char* what) {
  if (a.size() != b.size()) throw std::invalid_argument(what);
  Vector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = op(a[i], b[i]);
  return out;
}

}  // namespace

Vector add(const Vector& a, const Vector& b) {
  return zip(a, b, [](double x, double y) { return x + y; }, "add: shape mismatch");
}

Vector mul(const Vector& a, const Vector& b) {
  return zip(a, b, [](double x, double y) { return x * y; }, "mul: shape mismatch");
}

Vector vmax(const Vector& a, const Vector& b) {
  return zip(a, b, [](double x, double y) { return std::max(x, y); },
             "vmax: shape mismatch");
}

Matrix add(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("add: shape mismatch");
  Matrix out(a.rows, a.cols);
  for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] + b.data[i];
  return out;
}

Matrix mul(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("mul: shape mismatch");
  Matrix out(a.rows, a.cols);
  for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] * b.data[i];
  return out;
}

bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

bool all_finite(const Matrix& m) { return all_finite(std::span<const double>(m.data)); }

}  // namespace rwkv
