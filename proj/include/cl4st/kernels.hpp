#pragma once

#include <cstddef>

// Dense numeric kernels. Each kernel has a serial reference implementation
// (used by the test suite as an oracle) and an OpenMP-parallel variant.
// The parallel variants only split independent output elements across
// threads with static scheduling, so results are bit-identical to the
// serial versions.

namespace cl4st::kernels {

// C(m x n) = A(m x k) * B(k x n), row-major.
void matmul_serial(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t k, std::size_t n);
void matmul_omp(const double* a, const double* b, double* c,
                std::size_t m, std::size_t k, std::size_t n);
void matmul(const double* a, const double* b, double* c,
            std::size_t m, std::size_t k, std::size_t n);

// C(m x n) += A(m x k)^T-free GEMM helpers used by backward passes:
// C += A * B^T where A is m x k and B is n x k.
void matmul_nt_acc_serial(const double* a, const double* b, double* c,
                          std::size_t m, std::size_t k, std::size_t n);
void matmul_nt_acc_omp(const double* a, const double* b, double* c,
                       std::size_t m, std::size_t k, std::size_t n);
void matmul_nt_acc(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t k, std::size_t n);

// C += A^T * B where A is k x m and B is k x n.
void matmul_tn_acc_serial(const double* a, const double* b, double* c,
                          std::size_t m, std::size_t k, std::size_t n);
void matmul_tn_acc_omp(const double* a, const double* b, double* c,
                       std::size_t m, std::size_t k, std::size_t n);
void matmul_tn_acc(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t k, std::size_t n);

// out[i] = f(a[i]) elementwise maps used by the autodiff layer.
void axpy(double alpha, const double* x, double* y, std::size_t n);

// Number of threads the OpenMP variants will use (1 without OpenMP).
int thread_count();

}  // namespace cl4st::kernels
