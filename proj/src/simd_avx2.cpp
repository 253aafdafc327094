#include "lsattn/simd.hpp"

// AVX2 variants. Compiled with -mavx2 for this translation unit only; the
// dispatcher never hands them out unless the CPU reports AVX2.
//
// Each kernel mirrors the scalar reference's operation order exactly:
// 4-wide main loop (one vector op per scalar op, no FMA), scalar tail using
// the reference expressions. sqrt and div are correctly rounded per IEEE-754,
// so the ADAM kernel is also bit-exact.

#if defined(__x86_64__) || defined(__i386__)

#include <immintrin.h>

#include <cmath>

namespace lsattn::simd {
namespace {

void add_k(const double* a, const double* b, double* dst, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(dst + i, _mm256_add_pd(_mm256_loadu_pd(a + i),
                                            _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) dst[i] = a[i] + b[i];
}

void sub_k(const double* a, const double* b, double* dst, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(dst + i, _mm256_sub_pd(_mm256_loadu_pd(a + i),
                                            _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) dst[i] = a[i] - b[i];
}

void mul_k(const double* a, const double* b, double* dst, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(dst + i, _mm256_mul_pd(_mm256_loadu_pd(a + i),
                                            _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) dst[i] = a[i] * b[i];
}

void axpy_k(double a, const double* x, double* y, std::size_t n) {
  const __m256d av = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d prod = _mm256_mul_pd(av, _mm256_loadu_pd(x + i));
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
  }
  for (; i < n; ++i) y[i] = y[i] + a * x[i];
}

void scale_k(double a, const double* x, double* dst, std::size_t n) {
  const __m256d av = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(dst + i, _mm256_mul_pd(av, _mm256_loadu_pd(x + i)));
  }
  for (; i < n; ++i) dst[i] = a * x[i];
}

void madd_k(const double* a, const double* b, double* acc, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d prod =
        _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
    _mm256_storeu_pd(acc + i, _mm256_add_pd(_mm256_loadu_pd(acc + i), prod));
  }
  for (; i < n; ++i) acc[i] = acc[i] + a[i] * b[i];
}

double dot_k(const double* a, const double* b, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc = _mm256_add_pd(
        acc, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  }
  alignas(32) double s[4];
  _mm256_store_pd(s, acc);
  for (; i < n; ++i) s[i & 3] = s[i & 3] + a[i] * b[i];
  return (s[0] + s[1]) + (s[2] + s[3]);
}

void relu_k(const double* x, double* dst, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d xv = _mm256_loadu_pd(x + i);
    const __m256d mask = _mm256_cmp_pd(xv, zero, _CMP_GT_OQ);
    _mm256_storeu_pd(dst + i, _mm256_and_pd(xv, mask));
  }
  for (; i < n; ++i) dst[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void leaky_relu_k(double slope, const double* x, double* dst, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  const __m256d sv = _mm256_set1_pd(slope);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d xv = _mm256_loadu_pd(x + i);
    const __m256d mask = _mm256_cmp_pd(xv, zero, _CMP_GT_OQ);
    _mm256_storeu_pd(dst + i,
                     _mm256_blendv_pd(_mm256_mul_pd(sv, xv), xv, mask));
  }
  for (; i < n; ++i) dst[i] = x[i] > 0.0 ? x[i] : slope * x[i];
}

void relu_grad_k(const double* x, const double* g, double* acc, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + i), zero, _CMP_GT_OQ);
    const __m256d gated = _mm256_and_pd(_mm256_loadu_pd(g + i), mask);
    _mm256_storeu_pd(acc + i, _mm256_add_pd(_mm256_loadu_pd(acc + i), gated));
  }
  for (; i < n; ++i) acc[i] = acc[i] + (x[i] > 0.0 ? g[i] : 0.0);
}

void leaky_relu_grad_k(double slope, const double* x, const double* g,
                       double* acc, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d sv = _mm256_set1_pd(slope);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + i), zero, _CMP_GT_OQ);
    const __m256d factor = _mm256_blendv_pd(sv, one, mask);
    const __m256d prod = _mm256_mul_pd(_mm256_loadu_pd(g + i), factor);
    _mm256_storeu_pd(acc + i, _mm256_add_pd(_mm256_loadu_pd(acc + i), prod));
  }
  for (; i < n; ++i) acc[i] = acc[i] + g[i] * (x[i] > 0.0 ? 1.0 : slope);
}

void madd_mat_k(const double* a, const double* mat, double* acc, std::size_t m,
                std::size_t n) {
  // j-chunks held in registers across the whole i loop; per-element
  // accumulation order matches the scalar reference exactly
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8) {
    __m256d acc0 = _mm256_loadu_pd(acc + j);
    __m256d acc1 = _mm256_loadu_pd(acc + j + 4);
    for (std::size_t i = 0; i < m; ++i) {
      const __m256d av = _mm256_set1_pd(a[i]);
      acc0 = _mm256_add_pd(acc0, _mm256_mul_pd(av, _mm256_loadu_pd(mat + i * n + j)));
      acc1 = _mm256_add_pd(acc1, _mm256_mul_pd(av, _mm256_loadu_pd(mat + i * n + j + 4)));
    }
    _mm256_storeu_pd(acc + j, acc0);
    _mm256_storeu_pd(acc + j + 4, acc1);
  }
  for (; j + 4 <= n; j += 4) {
    __m256d acc0 = _mm256_loadu_pd(acc + j);
    for (std::size_t i = 0; i < m; ++i) {
      const __m256d av = _mm256_set1_pd(a[i]);
      acc0 = _mm256_add_pd(acc0, _mm256_mul_pd(av, _mm256_loadu_pd(mat + i * n + j)));
    }
    _mm256_storeu_pd(acc + j, acc0);
  }
  for (; j < n; ++j) {
    double s = acc[j];
    for (std::size_t i = 0; i < m; ++i) s = s + a[i] * mat[i * n + j];
    acc[j] = s;
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
  const __m256d b1v = _mm256_set1_pd(beta1);
  const __m256d b2v = _mm256_set1_pd(beta2);
  const __m256d omb1v = _mm256_set1_pd(omb1);
  const __m256d omb2v = _mm256_set1_pd(omb2);
  const __m256d bc1v = _mm256_set1_pd(inv_bc1);
  const __m256d bc2v = _mm256_set1_pd(inv_bc2);
  const __m256d lrv = _mm256_set1_pd(lr);
  const __m256d epsv = _mm256_set1_pd(eps);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d gv = _mm256_loadu_pd(g + i);
    __m256d mv = _mm256_loadu_pd(m + i);
    __m256d vv = _mm256_loadu_pd(v + i);
    mv = _mm256_add_pd(_mm256_mul_pd(b1v, mv), _mm256_mul_pd(omb1v, gv));
    const __m256d g2 = _mm256_mul_pd(gv, gv);
    vv = _mm256_add_pd(_mm256_mul_pd(b2v, vv), _mm256_mul_pd(omb2v, g2));
    _mm256_storeu_pd(m + i, mv);
    _mm256_storeu_pd(v + i, vv);
    const __m256d mhat = _mm256_mul_pd(mv, bc1v);
    const __m256d vhat = _mm256_mul_pd(vv, bc2v);
    const __m256d denom = _mm256_add_pd(_mm256_sqrt_pd(vhat), epsv);
    const __m256d step = _mm256_mul_pd(lrv, _mm256_div_pd(mhat, denom));
    _mm256_storeu_pd(p + i, _mm256_sub_pd(_mm256_loadu_pd(p + i), step));
  }
  for (; i < n; ++i) {
    m[i] = beta1 * m[i] + omb1 * g[i];
    v[i] = beta2 * v[i] + omb2 * (g[i] * g[i]);
    const double mhat = m[i] * inv_bc1;
    const double vhat = v[i] * inv_bc2;
    p[i] = p[i] - lr * (mhat / (std::sqrt(vhat) + eps));
  }
}

}  // namespace

extern const Kernels kAvx2Kernels;
const Kernels kAvx2Kernels = {
    "avx2",  add_k,  sub_k,        mul_k,         axpy_k,
    scale_k, madd_k, dot_k,        relu_k,        leaky_relu_k,
    relu_grad_k,     leaky_relu_grad_k,           adam_k,
    madd_mat_k,      madd_outer_k, madd_matvec_k,
};

}  // namespace lsattn::simd

#endif  // x86
