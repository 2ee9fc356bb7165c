#pragma once
// Row-major f64 matrix multiply kernels. All results are deterministic on a
// given platform (fixed accumulation order per build); no threading inside.
//
//   gemm_nn: C[M,N] (+)= A[M,K] * B[K,N]
//   gemm_nt: C[M,N] (+)= A[M,K] * B[N,K]^T
//   gemm_tn: C[M,N] (+)= A[K,M]^T * B[K,N]
#include <cstdint>
#include <cstring>
#include <algorithm>

#if defined(__AVX512F__) || defined(__AVX2__)
#include <immintrin.h>
#endif

namespace manigrad {

namespace detail {

#if defined(__AVX512F__)

inline void gemm_nn_kernel(std::int64_t M, std::int64_t N, std::int64_t K,
                           const double* A, const double* B, double* C) {
    const std::int64_t N8 = N - (N % 8);
    const std::int64_t M8 = M - (M % 8);
    for (std::int64_t i = 0; i < M8; i += 8) {
        for (std::int64_t j = 0; j < N8; j += 8) {
            __m512d acc0 = _mm512_loadu_pd(C + (i + 0) * N + j);
            __m512d acc1 = _mm512_loadu_pd(C + (i + 1) * N + j);
            __m512d acc2 = _mm512_loadu_pd(C + (i + 2) * N + j);
            __m512d acc3 = _mm512_loadu_pd(C + (i + 3) * N + j);
            __m512d acc4 = _mm512_loadu_pd(C + (i + 4) * N + j);
            __m512d acc5 = _mm512_loadu_pd(C + (i + 5) * N + j);
            __m512d acc6 = _mm512_loadu_pd(C + (i + 6) * N + j);
            __m512d acc7 = _mm512_loadu_pd(C + (i + 7) * N + j);
            for (std::int64_t k = 0; k < K; ++k) {
                const __m512d bv = _mm512_loadu_pd(B + k * N + j);
                acc0 = _mm512_fmadd_pd(_mm512_set1_pd(A[(i + 0) * K + k]), bv, acc0);
                acc1 = _mm512_fmadd_pd(_mm512_set1_pd(A[(i + 1) * K + k]), bv, acc1);
                acc2 = _mm512_fmadd_pd(_mm512_set1_pd(A[(i + 2) * K + k]), bv, acc2);
                acc3 = _mm512_fmadd_pd(_mm512_set1_pd(A[(i + 3) * K + k]), bv, acc3);
                acc4 = _mm512_fmadd_pd(_mm512_set1_pd(A[(i + 4) * K + k]), bv, acc4);
                acc5 = _mm512_fmadd_pd(_mm512_set1_pd(A[(i + 5) * K + k]), bv, acc5);
                acc6 = _mm512_fmadd_pd(_mm512_set1_pd(A[(i + 6) * K + k]), bv, acc6);
                acc7 = _mm512_fmadd_pd(_mm512_set1_pd(A[(i + 7) * K + k]), bv, acc7);
            }
            _mm512_storeu_pd(C + (i + 0) * N + j, acc0);
            _mm512_storeu_pd(C + (i + 1) * N + j, acc1);
            _mm512_storeu_pd(C + (i + 2) * N + j, acc2);
            _mm512_storeu_pd(C + (i + 3) * N + j, acc3);
            _mm512_storeu_pd(C + (i + 4) * N + j, acc4);
            _mm512_storeu_pd(C + (i + 5) * N + j, acc5);
            _mm512_storeu_pd(C + (i + 6) * N + j, acc6);
            _mm512_storeu_pd(C + (i + 7) * N + j, acc7);
        }
    }
    // row remainder (M % 8) over vectorized columns
    for (std::int64_t i = M8; i < M; ++i) {
        for (std::int64_t j = 0; j < N8; j += 8) {
            __m512d acc = _mm512_loadu_pd(C + i * N + j);
            for (std::int64_t k = 0; k < K; ++k)
                acc = _mm512_fmadd_pd(_mm512_set1_pd(A[i * K + k]),
                                      _mm512_loadu_pd(B + k * N + j), acc);
            _mm512_storeu_pd(C + i * N + j, acc);
        }
    }
    // column remainder, scalar
    for (std::int64_t i = 0; i < M; ++i) {
        for (std::int64_t j = N8; j < N; ++j) {
            double s = C[i * N + j];
            for (std::int64_t k = 0; k < K; ++k) s += A[i * K + k] * B[k * N + j];
            C[i * N + j] = s;
        }
    }
}

inline double hsum(__m512d v) { return _mm512_reduce_add_pd(v); }

inline void gemm_nt_kernel(std::int64_t M, std::int64_t N, std::int64_t K,
                           const double* A, const double* B, double* C) {
    // j outer so each B row is streamed once while the A rows stay cached.
    const std::int64_t K8 = K - (K % 8);
    for (std::int64_t j0 = 0; j0 < N; j0 += 4) {
        const std::int64_t jb = std::min<std::int64_t>(4, N - j0);
        const double* b0 = B + j0 * K;
        const double* b1 = B + (j0 + (jb > 1 ? 1 : 0)) * K;
        const double* b2 = B + (j0 + (jb > 2 ? 2 : 0)) * K;
        const double* b3 = B + (j0 + (jb > 3 ? 3 : 0)) * K;
        for (std::int64_t i = 0; i < M; ++i) {
            const double* a = A + i * K;
            __m512d s0 = _mm512_setzero_pd(), s1 = _mm512_setzero_pd();
            __m512d s2 = _mm512_setzero_pd(), s3 = _mm512_setzero_pd();
            for (std::int64_t k = 0; k < K8; k += 8) {
                const __m512d av = _mm512_loadu_pd(a + k);
                s0 = _mm512_fmadd_pd(av, _mm512_loadu_pd(b0 + k), s0);
                s1 = _mm512_fmadd_pd(av, _mm512_loadu_pd(b1 + k), s1);
                s2 = _mm512_fmadd_pd(av, _mm512_loadu_pd(b2 + k), s2);
                s3 = _mm512_fmadd_pd(av, _mm512_loadu_pd(b3 + k), s3);
            }
            double t0 = hsum(s0), t1 = hsum(s1), t2 = hsum(s2), t3 = hsum(s3);
            for (std::int64_t k = K8; k < K; ++k) {
                t0 += a[k] * b0[k];
                t1 += a[k] * b1[k];
                t2 += a[k] * b2[k];
                t3 += a[k] * b3[k];
            }
            double* c = C + i * N + j0;
            c[0] += t0;
            if (jb > 1) c[1] += t1;
            if (jb > 2) c[2] += t2;
            if (jb > 3) c[3] += t3;
        }
    }
}

// B[K,N] repacked into 8-wide column panels (last panel zero padded):
// Bp[(panel*K + k)*8 + j] = B[k, panel*8 + j]. Lets the nn microkernel stream
// B contiguously; worthwhile when the same B is reused across many calls.
inline void gemm_nn_packed_kernel(std::int64_t M, std::int64_t N, std::int64_t K,
                                  const double* A, const double* Bp, double* C) {
    const std::int64_t NP = (N + 7) / 8;
    for (std::int64_t i0 = 0; i0 < M; i0 += 8) {
        const std::int64_t ib = std::min<std::int64_t>(8, M - i0);
        const double* a0 = A + (i0 + 0) * K;
        const double* a1 = A + (i0 + (ib > 1 ? 1 : 0)) * K;
        const double* a2 = A + (i0 + (ib > 2 ? 2 : 0)) * K;
        const double* a3 = A + (i0 + (ib > 3 ? 3 : 0)) * K;
        const double* a4 = A + (i0 + (ib > 4 ? 4 : 0)) * K;
        const double* a5 = A + (i0 + (ib > 5 ? 5 : 0)) * K;
        const double* a6 = A + (i0 + (ib > 6 ? 6 : 0)) * K;
        const double* a7 = A + (i0 + (ib > 7 ? 7 : 0)) * K;
        for (std::int64_t p = 0; p < NP; ++p) {
            const double* bp = Bp + p * K * 8;
            __m512d c0 = _mm512_setzero_pd(), c1 = _mm512_setzero_pd();
            __m512d c2 = _mm512_setzero_pd(), c3 = _mm512_setzero_pd();
            __m512d c4 = _mm512_setzero_pd(), c5 = _mm512_setzero_pd();
            __m512d c6 = _mm512_setzero_pd(), c7 = _mm512_setzero_pd();
            for (std::int64_t k = 0; k < K; ++k) {
                const __m512d bv = _mm512_loadu_pd(bp + k * 8);
                c0 = _mm512_fmadd_pd(_mm512_set1_pd(a0[k]), bv, c0);
                c1 = _mm512_fmadd_pd(_mm512_set1_pd(a1[k]), bv, c1);
                c2 = _mm512_fmadd_pd(_mm512_set1_pd(a2[k]), bv, c2);
                c3 = _mm512_fmadd_pd(_mm512_set1_pd(a3[k]), bv, c3);
                c4 = _mm512_fmadd_pd(_mm512_set1_pd(a4[k]), bv, c4);
                c5 = _mm512_fmadd_pd(_mm512_set1_pd(a5[k]), bv, c5);
                c6 = _mm512_fmadd_pd(_mm512_set1_pd(a6[k]), bv, c6);
                c7 = _mm512_fmadd_pd(_mm512_set1_pd(a7[k]), bv, c7);
            }
            const std::int64_t n0 = p * 8;
            const std::int64_t nb = std::min<std::int64_t>(8, N - n0);
            const __m512d accs[8] = {c0, c1, c2, c3, c4, c5, c6, c7};
            for (std::int64_t r = 0; r < ib; ++r) {
                double tmp[8];
                _mm512_storeu_pd(tmp, accs[r]);
                double* c = C + (i0 + r) * N + n0;
                for (std::int64_t j = 0; j < nb; ++j) c[j] += tmp[j];
            }
        }
    }
}

inline void gemm_tn_kernel(std::int64_t M, std::int64_t N, std::int64_t K,
                           const double* A, const double* B, double* C) {
    // C[m,n] += sum_k A[k,m] * B[k,n]; blocked over C rows to stay in cache.
    const std::int64_t MB = 64;
    const std::int64_t N8 = N - (N % 8);
    for (std::int64_t m0 = 0; m0 < M; m0 += MB) {
        const std::int64_t m1 = std::min(m0 + MB, M);
        for (std::int64_t k = 0; k < K; ++k) {
            const double* brow = B + k * N;
            for (std::int64_t m = m0; m < m1; ++m) {
                const double a = A[k * M + m];
                double* crow = C + m * N;
                const __m512d av = _mm512_set1_pd(a);
                for (std::int64_t j = 0; j < N8; j += 8)
                    _mm512_storeu_pd(crow + j,
                                     _mm512_fmadd_pd(av, _mm512_loadu_pd(brow + j),
                                                     _mm512_loadu_pd(crow + j)));
                for (std::int64_t j = N8; j < N; ++j) crow[j] += a * brow[j];
            }
        }
    }
}

#else // scalar fallback (also correct with AVX2 autovectorization)

inline void gemm_nn_kernel(std::int64_t M, std::int64_t N, std::int64_t K,
                           const double* A, const double* B, double* C) {
    for (std::int64_t i = 0; i < M; ++i) {
        double* crow = C + i * N;
        for (std::int64_t k = 0; k < K; ++k) {
            const double a = A[i * K + k];
            const double* brow = B + k * N;
            for (std::int64_t j = 0; j < N; ++j) crow[j] += a * brow[j];
        }
    }
}

inline void gemm_nt_kernel(std::int64_t M, std::int64_t N, std::int64_t K,
                           const double* A, const double* B, double* C) {
    for (std::int64_t i = 0; i < M; ++i)
        for (std::int64_t j = 0; j < N; ++j) {
            double s = 0;
            for (std::int64_t k = 0; k < K; ++k) s += A[i * K + k] * B[j * K + k];
            C[i * N + j] += s;
        }
}

inline void gemm_tn_kernel(std::int64_t M, std::int64_t N, std::int64_t K,
                           const double* A, const double* B, double* C) {
    for (std::int64_t k = 0; k < K; ++k)
        for (std::int64_t m = 0; m < M; ++m) {
            const double a = A[k * M + m];
            const double* brow = B + k * N;
            double* crow = C + m * N;
            for (std::int64_t j = 0; j < N; ++j) crow[j] += a * brow[j];
        }
}

inline void gemm_nn_packed_kernel(std::int64_t M, std::int64_t N, std::int64_t K,
                                  const double* A, const double* Bp, double* C) {
    const std::int64_t NP = (N + 7) / 8;
    for (std::int64_t i = 0; i < M; ++i) {
        const double* a = A + i * K;
        for (std::int64_t p = 0; p < NP; ++p) {
            const double* bp = Bp + p * K * 8;
            double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
            for (std::int64_t k = 0; k < K; ++k)
                for (std::int64_t j = 0; j < 8; ++j) acc[j] += a[k] * bp[k * 8 + j];
            const std::int64_t n0 = p * 8;
            const std::int64_t nb = std::min<std::int64_t>(8, N - n0);
            double* c = C + i * N + n0;
            for (std::int64_t j = 0; j < nb; ++j) c[j] += acc[j];
        }
    }
}

#endif

} // namespace detail

inline void gemm_nn(std::int64_t M, std::int64_t N, std::int64_t K,
                    const double* A, const double* B, double* C, bool accumulate = false) {
    if (!accumulate) std::memset(C, 0, static_cast<std::size_t>(M * N) * sizeof(double));
    detail::gemm_nn_kernel(M, N, K, A, B, C);
}

inline void gemm_nt(std::int64_t M, std::int64_t N, std::int64_t K,
                    const double* A, const double* B, double* C, bool accumulate = false) {
    if (!accumulate) std::memset(C, 0, static_cast<std::size_t>(M * N) * sizeof(double));
    detail::gemm_nt_kernel(M, N, K, A, B, C);
}

inline void gemm_tn(std::int64_t M, std::int64_t N, std::int64_t K,
                    const double* A, const double* B, double* C, bool accumulate = false) {
    if (!accumulate) std::memset(C, 0, static_cast<std::size_t>(M * N) * sizeof(double));
    detail::gemm_tn_kernel(M, N, K, A, B, C);
}

// --- packed-B path (pack B once, multiply many times) ---

inline std::int64_t packed_b_size(std::int64_t K, std::int64_t N) {
    return ((N + 7) / 8) * K * 8;
}

inline void pack_b(std::int64_t K, std::int64_t N, const double* B, double* Bp) {
    const std::int64_t NP = (N + 7) / 8;
    std::memset(Bp, 0, static_cast<std::size_t>(NP * K * 8) * sizeof(double));
    for (std::int64_t p = 0; p < NP; ++p) {
        const std::int64_t nb = std::min<std::int64_t>(8, N - p * 8);
        for (std::int64_t k = 0; k < K; ++k)
            for (std::int64_t j = 0; j < nb; ++j)
                Bp[(p * K + k) * 8 + j] = B[k * N + p * 8 + j];
    }
}

// C[M,N] (+)= A[M,K] * B[K,N] where Bp = pack_b(B). Accumulation order is
// fixed (deterministic for a given build) but not identical to gemm_nn's.
inline void gemm_nn_packed(std::int64_t M, std::int64_t N, std::int64_t K,
                           const double* A, const double* Bp, double* C,
                           bool accumulate = false) {
    if (!accumulate) std::memset(C, 0, static_cast<std::size_t>(M * N) * sizeof(double));
    detail::gemm_nn_packed_kernel(M, N, K, A, Bp, C);
}

} // namespace manigrad
