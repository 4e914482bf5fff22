#include "nmsparse/kernels.hpp"

#include <cstdlib>
#include <cstring>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace nmsparse::kernels {

void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  const long mi = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * k * n > 16384)
  for (long i = 0; i < mi; ++i) {
    double* crow = c + static_cast<std::size_t>(i) * n;
    std::memset(crow, 0, n * sizeof(double));
    const double* arow = a + static_cast<std::size_t>(i) * k;
    for (std::size_t l = 0; l < k; ++l) {
      const double av = arow[l];
      const double* brow = b + l * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  const long mi = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * k * n > 16384)
  for (long i = 0; i < mi; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    double* crow = c + static_cast<std::size_t>(i) * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::size_t l = 0; l < k; ++l) acc += arow[l] * brow[l];
      crow[j] = acc;
    }
  }
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  const long mi = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * k * n > 16384)
  for (long i = 0; i < mi; ++i) {
    double* crow = c + static_cast<std::size_t>(i) * n;
    std::memset(crow, 0, n * sizeof(double));
    for (std::size_t l = 0; l < k; ++l) {
      const double av = a[l * m + static_cast<std::size_t>(i)];
      const double* brow = b + l * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

namespace serial {

void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t l = 0; l < k; ++l) acc += a[i * k + l] * b[l * n + j];
      c[i * n + j] = acc;
    }
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t l = 0; l < k; ++l) acc += a[i * k + l] * b[j * k + l];
      c[i * n + j] = acc;
    }
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t l = 0; l < k; ++l) acc += a[l * m + i] * b[l * n + j];
      c[i * n + j] = acc;
    }
}

}  // namespace serial

void apply_thread_env() {
#ifdef _OPENMP
  if (const char* env = std::getenv("NMS_THREADS")) {
    int t = std::atoi(env);
    if (t > 0) omp_set_num_threads(t);
  }
#endif
}

int thread_count() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace nmsparse::kernels
