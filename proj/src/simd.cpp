#include "lsattn/simd.hpp"

#include <atomic>
#include <stdexcept>

namespace lsattn::simd {

extern const Kernels kScalarKernels;
#if defined(__x86_64__) || defined(__i386__)
extern const Kernels kAvx2Kernels;
#endif

bool supported(Backend b) {
  switch (b) {
    case Backend::scalar:
      return true;
    case Backend::avx2:
#if defined(__x86_64__) || defined(__i386__)
      return __builtin_cpu_supports("avx2");
#else
      return false;
#endif
  }
  return false;
}

const Kernels& get(Backend b) {
  if (!supported(b)) throw std::invalid_argument("simd backend not supported on this CPU");
  switch (b) {
    case Backend::scalar:
      return kScalarKernels;
    case Backend::avx2:
#if defined(__x86_64__) || defined(__i386__)
      return kAvx2Kernels;
#endif
    default:
      return kScalarKernels;
  }
}

Backend detect_best() {
  return supported(Backend::avx2) ? Backend::avx2 : Backend::scalar;
}

namespace {
std::atomic<const Kernels*> g_active{nullptr};
std::atomic<Backend> g_backend{Backend::scalar};

const Kernels* init_active() {
  const Backend b = detect_best();
  g_backend.store(b, std::memory_order_relaxed);
  const Kernels* k = &get(b);
  g_active.store(k, std::memory_order_release);
  return k;
}
}  // namespace

const Kernels& active() {
  const Kernels* k = g_active.load(std::memory_order_acquire);
  if (!k) k = init_active();
  return *k;
}

Backend active_backend() {
  if (!g_active.load(std::memory_order_acquire)) init_active();
  return g_backend.load(std::memory_order_relaxed);
}

void force_backend(Backend b) {
  const Kernels* k = &get(b);  // throws if unsupported
  g_backend.store(b, std::memory_order_relaxed);
  g_active.store(k, std::memory_order_release);
}

}  // namespace lsattn::simd
