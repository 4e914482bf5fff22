#pragma once

#include <cstddef>

// Dense f64 matrix kernels. The parallel versions split work across output
// rows only, with row-private accumulation, so results are bit-identical
// for any thread count. The serial namespace keeps plain triple-loop
// implementations as the reference the parallel kernels are tested against.
namespace nmsparse::kernels {

// c[m,n] = a[m,k] * b[k,n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n);
// c[m,n] = a[m,k] * b[n,k]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n);
// c[m,n] = a[k,m]^T * b[k,n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n);

namespace serial {
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n);
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n);
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n);
}  // namespace serial

// Applies the NMS_THREADS bound to the OpenMP runtime, if set.
void apply_thread_env();
int thread_count();

}  // namespace nmsparse::kernels
