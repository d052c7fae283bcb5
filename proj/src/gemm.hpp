#pragma once

#include <cstddef>

// Row-major accumulate-into kernels. The innermost loops run over contiguous
// memory so they vectorize without reassociating any sum, which keeps results
// reproducible bit-for-bit across runs.
namespace skipgraph::gemm {

/// C[M,N] += A[M,K] * B[K,N]
template <typename T>
void nn(std::size_t M, std::size_t N, std::size_t K, const T* __restrict A, const T* __restrict B,
        T* __restrict C) {
    for (std::size_t i = 0; i < M; ++i) {
        T* __restrict c = C + i * N;
        const T* a = A + i * K;
        for (std::size_t k = 0; k < K; ++k) {
            const T av = a[k];
            const T* __restrict b = B + k * N;
            for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

/// C[M,N] += A[K,M]^T * B[K,N]
template <typename T>
void tn(std::size_t M, std::size_t N, std::size_t K, const T* __restrict A, const T* __restrict B,
        T* __restrict C) {
    for (std::size_t i = 0; i < M; ++i) {
        T* __restrict c = C + i * N;
        for (std::size_t k = 0; k < K; ++k) {
            const T av = A[k * M + i];
            const T* __restrict b = B + k * N;
            for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

/// dst[cols, rows] = src[rows, cols]^T
template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* __restrict src, T* __restrict dst) {
    constexpr std::size_t tile = 32;
    for (std::size_t r0 = 0; r0 < rows; r0 += tile)
        for (std::size_t c0 = 0; c0 < cols; c0 += tile) {
            const std::size_t r1 = r0 + tile < rows ? r0 + tile : rows;
            const std::size_t c1 = c0 + tile < cols ? c0 + tile : cols;
            for (std::size_t r = r0; r < r1; ++r)
                for (std::size_t c = c0; c < c1; ++c) dst[c * rows + r] = src[r * cols + c];
        }
}

} // namespace skipgraph::gemm
