#pragma once

#include <cstddef>

// Row-major dense kernels. Each output row depends only on the matching row
// of the left operand and sums over k in ascending order, so results do not
// depend on how many rows are batched together.
namespace spectradiff::kernels {

/// c[m,n] (+)= a[m,k] * b[k,n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate);
/// c[m,n] (+)= a[m,k] * b[n,k]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate);
/// c[m,n] (+)= a[k,m]^T * b[k,n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate);

}  // namespace spectradiff::kernels
