#pragma once

#include <cstddef>
#include <span>
#include <string_view>

// Data-parallel inner loops shared by prototype pooling, cosine similarity
// and the displacement-field loss. Each kernel has a scalar reference
// version and, where the build and CPU allow it, an AVX2/FMA version. The
// active table is picked once at startup; PROMPTREG_SIMD=scalar forces the
// reference path.
namespace promptreg::kernels {

// Sums needed for a soft-Dice plus MSE evaluation of two equally sized arrays.
struct OverlapSums {
  double ab = 0.0;
  double a = 0.0;
  double b = 0.0;
  double sq_diff = 0.0;
};

struct KernelTable {
  const char* name;
  double (*dot)(const double* x, const double* y, std::size_t n);
  double (*sum)(const double* x, std::size_t n);
  double (*sum_sq)(const double* x, std::size_t n);
  OverlapSums (*overlap_sums)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // acc += widen(x)
  void (*accumulate_f32)(const float* x, double* acc, std::size_t n);
  double (*max_abs)(const double* x, std::size_t n);
};

const KernelTable& scalar_table();
// nullptr when the variant was not compiled in or the CPU lacks AVX2/FMA.
const KernelTable* avx2_table();
const KernelTable& active_table();
// Overrides the startup choice; returns false if the named table is unavailable.
bool select(std::string_view name);

inline double dot(std::span<const double> x, std::span<const double> y) {
  return active_table().dot(x.data(), y.data(), x.size());
}
inline double sum(std::span<const double> x) {
  return active_table().sum(x.data(), x.size());
}
inline double sum_sq(std::span<const double> x) {
  return active_table().sum_sq(x.data(), x.size());
}
inline OverlapSums overlap_sums(std::span<const double> a,
                                std::span<const double> b) {
  return active_table().overlap_sums(a.data(), b.data(), a.size());
}
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  active_table().axpy(alpha, x.data(), y.data(), x.size());
}
inline void accumulate(std::span<const float> x, std::span<double> acc) {
  active_table().accumulate_f32(x.data(), acc.data(), x.size());
}
inline double max_abs(std::span<const double> x) {
  return active_table().max_abs(x.data(), x.size());
}

}  // namespace promptreg::kernels
