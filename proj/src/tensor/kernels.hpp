#pragma once

// Inner loops shared by the tensor ops and the attention kernels.

#include <cstddef>

namespace drfuser::kernels {

// C[m,n] += sum_p A[m,p] * B[p,n], accumulated in increasing p for every
// output element. Row-major, leading dimensions equal to the logical widths.
template <typename Real>
void gemm_acc(std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b, Real* c) {
    for (std::size_t i = 0; i < m; ++i) {
        Real* crow = c + i * n;
        const Real* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const Real av = arow[p];
            const Real* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m,n] += sum_p A[p,m] * B[p,n]  (A transposed)
template <typename Real>
void gemm_tn_acc(std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b,
                 Real* c) {
    for (std::size_t p = 0; p < k; ++p) {
        const Real* arow = a + p * m;
        const Real* brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const Real av = arow[i];
            Real* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename Real>
Real dot(const Real* a, const Real* b, std::size_t n) {
    Real s0 = 0, s1 = 0, s2 = 0, s3 = 0, s4 = 0, s5 = 0, s6 = 0, s7 = 0;
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
        s4 += a[i + 4] * b[i + 4];
        s5 += a[i + 5] * b[i + 5];
        s6 += a[i + 6] * b[i + 6];
        s7 += a[i + 7] * b[i + 7];
    }
    for (; i < n; ++i) s0 += a[i] * b[i];
    return ((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7));
}

// C[m,n] += A[m,p] . B[n,p]  (B transposed), unordered reduction.
template <typename Real>
void gemm_nt_acc(std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b,
                 Real* c) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) c[i * n + j] += dot(a + i * k, b + j * k, k);
}

}  // namespace drfuser::kernels
