#pragma once

#include <cstddef>
#include <string_view>

namespace lsattn::simd {

// Row kernels over contiguous f64 spans. These are the inner loops of every
// hot path (convolution taps, dense layers, gate math, the ADAM update).
//
// Every backend implements the exact same per-element IEEE operation
// sequence, so a kernel's output is bitwise identical no matter which
// backend ran it. That property is what makes training results reproducible
// across machines, and it is enforced by tests/test_simd.cpp.
//
// `dot` is the one reduction in the set. Its reference order is fixed as
// four interleaved partial sums (bank l accumulates elements i with
// i % 4 == l) combined as (s0 + s1) + (s2 + s3); a 4-lane vector register
// reproduces that order exactly.
struct Kernels {
  std::string_view name;

  void (*add)(const double* a, const double* b, double* dst, std::size_t n);
  void (*sub)(const double* a, const double* b, double* dst, std::size_t n);
  void (*mul)(const double* a, const double* b, double* dst, std::size_t n);
  // y[i] += a * x[i]
  void (*axpy)(double a, const double* x, double* y, std::size_t n);
  // dst[i] = a * x[i]
  void (*scale)(double a, const double* x, double* dst, std::size_t n);
  // acc[i] += a[i] * b[i]
  void (*madd)(const double* a, const double* b, double* acc, std::size_t n);
  double (*dot)(const double* a, const double* b, std::size_t n);

  void (*relu)(const double* x, double* dst, std::size_t n);
  void (*leaky_relu)(double slope, const double* x, double* dst, std::size_t n);
  // acc[i] += g[i] where x[i] > 0
  void (*relu_grad)(const double* x, const double* g, double* acc, std::size_t n);
  // acc[i] += g[i] * (x[i] > 0 ? 1 : slope)
  void (*leaky_relu_grad)(double slope, const double* x, const double* g,
                          double* acc, std::size_t n);

  // Bias-corrected ADAM step. inv_bc1/inv_bc2 are 1/(1-beta1^t), 1/(1-beta2^t),
  // precomputed by the caller so both backends consume identical scalars.
  void (*adam)(double* p, const double* g, double* m, double* v, std::size_t n,
               double lr, double beta1, double beta2, double eps,
               double inv_bc1, double inv_bc2);

  // Fused row-batch forms of the above, defined as the loops they replace
  // (same per-element order, so still bitwise reproducible). mat is (m x n)
  // row-major. These carry the convolution and dense-layer inner loops.
  //   acc[j]    += sum_i a[i] * mat[i*n + j]        (madd_mat)
  //   acc[i*n+j] += a[i] * b[j]                     (madd_outer)
  //   acc[i]    += dot(mat row i, v)                (madd_matvec, dot order)
  void (*madd_mat)(const double* a, const double* mat, double* acc,
                   std::size_t m, std::size_t n);
  void (*madd_outer)(const double* a, const double* b, double* acc,
                     std::size_t m, std::size_t n);
  void (*madd_matvec)(const double* mat, const double* v, double* acc,
                      std::size_t m, std::size_t n);
};

enum class Backend { scalar, avx2 };

const Kernels& get(Backend b);      // throws std::invalid_argument if unsupported
bool supported(Backend b);
Backend detect_best();

// Process-wide active backend, chosen at first use via CPU detection.
const Kernels& active();
Backend active_backend();
void force_backend(Backend b);      // for tests and the CLI --simd flag

}  // namespace lsattn::simd
