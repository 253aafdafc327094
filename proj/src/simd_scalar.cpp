#include "lsattn/simd.hpp"

#include <cmath>

// Scalar reference kernels. These define the semantics the SIMD variants
// must reproduce bit for bit; keep the operation order explicit and do not
// introduce fused multiply-adds (the build also disables contraction).

namespace lsattn::simd {
namespace {

void add_k(const double* a, const double* b, double* dst, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] = a[i] + b[i];
}

void sub_k(const double* a, const double* b, double* dst, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] = a[i] - b[i];
}

void mul_k(const double* a, const double* b, double* dst, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] = a[i] * b[i];
}

void axpy_k(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = y[i] + a * x[i];
}

void scale_k(double a, const double* x, double* dst, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] = a * x[i];
}

void madd_k(const double* a, const double* b, double* acc, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) acc[i] = acc[i] + a[i] * b[i];
}

double dot_k(const double* a, const double* b, std::size_t n) {
  // Fixed 4-bank reduction order; see simd.hpp.
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 = s0 + a[i] * b[i];
    s1 = s1 + a[i + 1] * b[i + 1];
    s2 = s2 + a[i + 2] * b[i + 2];
    s3 = s3 + a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) {
    switch (i & 3) {
      case 0: s0 = s0 + a[i] * b[i]; break;
      case 1: s1 = s1 + a[i] * b[i]; break;
      case 2: s2 = s2 + a[i] * b[i]; break;
      default: s3 = s3 + a[i] * b[i]; break;
    }
  }
  return (s0 + s1) + (s2 + s3);
}

void relu_k(const double* x, double* dst, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void leaky_relu_k(double slope, const double* x, double* dst, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] = x[i] > 0.0 ? x[i] : slope * x[i];
}

void relu_grad_k(const double* x, const double* g, double* acc, std::size_t n) {
  // unconditional add of a masked term, same as the vector form
  for (std::size_t i = 0; i < n; ++i) {
    acc[i] = acc[i] + (x[i] > 0.0 ? g[i] : 0.0);
  }
}

void leaky_relu_grad_k(double slope, const double* x, const double* g,
                       double* acc, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    acc[i] = acc[i] + g[i] * (x[i] > 0.0 ? 1.0 : slope);
  }
}

void madd_mat_k(const double* a, const double* mat, double* acc, std::size_t m,
                std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    axpy_k(a[i], mat + i * n, acc, n);
  }
}

void madd_outer_k(const double* a, const double* b, double* acc, std::size_t m,
                  std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    axpy_k(a[i], b, acc + i * n, n);
  }
}

void madd_matvec_k(const double* mat, const double* v, double* acc, std::size_t m,
                   std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    acc[i] = acc[i] + dot_k(mat + i * n, v, n);
  }
}

void adam_k(double* p, const double* g, double* m, double* v, std::size_t n,
            double lr, double beta1, double beta2, double eps,
            double inv_bc1, double inv_bc2) {
  const double omb1 = 1.0 - beta1;
  const double omb2 = 1.0 - beta2;
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = beta1 * m[i] + omb1 * g[i];
    v[i] = beta2 * v[i] + omb2 * (g[i] * g[i]);
    const double mhat = m[i] * inv_bc1;
    const double vhat = v[i] * inv_bc2;
    p[i] = p[i] - lr * (mhat / (std::sqrt(vhat) + eps));
  }
}

}  // namespace

extern const Kernels kScalarKernels;
const Kernels kScalarKernels = {
    "scalar", add_k,  sub_k,        mul_k,         axpy_k,
    scale_k,  madd_k, dot_k,        relu_k,        leaky_relu_k,
    relu_grad_k,      leaky_relu_grad_k,           adam_k,
    madd_mat_k,       madd_outer_k, madd_matvec_k,
};

}  // namespace lsattn::simd
