#include <cmath>

#include "promptreg/kernels.hpp"

namespace promptreg::kernels {

namespace {

double dot_scalar(const double* x, const double* y, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

double sum_scalar(const double* x, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i];
  return s;
}

double sum_sq_scalar(const double* x, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * x[i];
  return s;
}

OverlapSums overlap_sums_scalar(const double* a, const double* b,
                                std::size_t n) {
  OverlapSums s;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    s.ab += a[i] * b[i];
    s.a += a[i];
    s.b += b[i];
    s.sq_diff += d * d;
  }
  return s;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void accumulate_f32_scalar(const float* x, double* acc, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) acc[i] += static_cast<double>(x[i]);
}

double max_abs_scalar(const double* x, std::size_t n) {
  double m = 0.0;
  for (std::size_t i = 0; i < n; ++i) m = std::fmax(m, std::fabs(x[i]));
  return m;
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{
      "scalar",      dot_scalar,  sum_scalar,          sum_sq_scalar,
      overlap_sums_scalar, axpy_scalar, accumulate_f32_scalar, max_abs_scalar};
  return table;
}

}  // namespace promptreg::kernels
