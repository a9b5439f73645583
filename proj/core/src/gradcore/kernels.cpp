#include "kernels.hpp"

#include <algorithm>
#include <vector>

// Every output element is c0 + sum_p a_ip * b_pj with p ascending, whichever
// path computes it (tiled or edge), so a row's result never depends on the
// other rows in the call.

namespace spectradiff::kernels {

namespace {

constexpr std::size_t kRows = 4;
constexpr std::size_t kCols = 8;

/// c[i..i+kRows, j..j+kCols] over the full k range. `a` is addressed as a(i, p) =
/// a[i * a_row + p * a_col] so the same tile serves both a and a^T.
[[gnu::always_inline]] inline void tile(const double* __restrict a, std::size_t a_row, std::size_t a_col,
                 const double* __restrict b, std::size_t ldb, double* __restrict c, std::size_t ldc,
                 std::size_t k, bool accumulate) {
    double acc[kRows][kCols];
    for (std::size_t r = 0; r < kRows; ++r) {
        for (std::size_t j = 0; j < kCols; ++j) {
            acc[r][j] = accumulate ? c[r * ldc + j] : 0.0;
        }
    }
    for (std::size_t p = 0; p < k; ++p) {
        const double* bp = b + p * ldb;
        double a_r[kRows];
        for (std::size_t r = 0; r < kRows; ++r) {
            a_r[r] = a[r * a_row + p * a_col];
        }
        for (std::size_t r = 0; r < kRows; ++r) {
            for (std::size_t j = 0; j < kCols; ++j) {
                acc[r][j] += a_r[r] * bp[j];
            }
        }
    }
    for (std::size_t r = 0; r < kRows; ++r) {
        for (std::size_t j = 0; j < kCols; ++j) {
            c[r * ldc + j] = acc[r][j];
        }
    }
}

/// Same contract as tile() for an arbitrary (rows x cols) edge block.
[[gnu::always_inline]] inline void edge(const double* a, std::size_t a_row, std::size_t a_col, const double* b,
                 std::size_t ldb, double* c, std::size_t ldc, std::size_t rows, std::size_t cols,
                 std::size_t k, bool accumulate) {
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < cols; ++j) {
            double acc = accumulate ? c[r * ldc + j] : 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                acc += a[r * a_row + p * a_col] * b[p * ldb + j];
            }
            c[r * ldc + j] = acc;
        }
    }
}

// Cache blocks over k and n. Each k block continues from the partial sums
// stored in c, so blocking leaves the summation order untouched.
constexpr std::size_t kBlockK = 128;
constexpr std::size_t kBlockN = 256;

__attribute__((target_clones("avx512f", "avx2", "default")))
void gemm(const double* a, std::size_t a_row, std::size_t a_col, const double* b, double* c,
          std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    if (k == 0) {
        if (!accumulate) std::fill(c, c + m * n, 0.0);
        return;
    }
    const std::size_t m_full = m - m % kRows;
    // Row panels of `a` are packed p-major so the tile reads them contiguously.
    thread_local std::vector<double> panel;
    panel.resize(kRows * std::min(k, kBlockK));
    for (std::size_t jc = 0; jc < n; jc += kBlockN) {
        const std::size_t nc = std::min(kBlockN, n - jc);
        const std::size_t n_full = jc + nc - nc % kCols;
        for (std::size_t pc = 0; pc < k; pc += kBlockK) {
            const std::size_t kc = std::min(kBlockK, k - pc);
            const bool acc = accumulate || pc > 0;
            const double* apc = a + pc * a_col;
            const double* bpc = b + pc * n;
            for (std::size_t i = 0; i < m_full; i += kRows) {
                const double* ai = apc + i * a_row;
                for (std::size_t p = 0; p < kc; ++p) {
                    for (std::size_t r = 0; r < kRows; ++r) {
                        panel[p * kRows + r] = ai[r * a_row + p * a_col];
                    }
                }
                double* ci = c + i * n;
                for (std::size_t j = jc; j < n_full; j += kCols) {
                    tile(panel.data(), 1, kRows, bpc + j, n, ci + j, n, kc, acc);
                }
                if (n_full < jc + nc) {
                    edge(ai, a_row, a_col, bpc + n_full, n, ci + n_full, n, kRows,
                         jc + nc - n_full, kc, acc);
                }
            }
            if (m_full < m) {
                edge(apc + m_full * a_row, a_row, a_col, bpc + jc, n, c + m_full * n + jc, n,
                     m - m_full, nc, kc, acc);
            }
        }
    }
}

}  // namespace

void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
    gemm(a, k, 1, b, c, m, k, n, accumulate);
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
    thread_local std::vector<double> bt;
    bt.resize(k * n);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t p = 0; p < k; ++p) {
            bt[p * n + j] = b[j * k + p];
        }
    }
    gemm(a, k, 1, bt.data(), c, m, k, n, accumulate);
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
    gemm(a, 1, m, b, c, m, k, n, accumulate);
}

}  // namespace spectradiff::kernels
