#pragma once

#include <cstdint>

// Dense inner loops shared by the tensor library. Each kernel has an
// OpenMP-parallel entry point and a serial reference (`*_serial`) kept for
// testing and benchmarking. Parallelism is only ever over independent output
// elements and every per-element reduction runs in a fixed index order, so
// the parallel kernels are bit-identical to the serial ones at any thread
// count.
namespace latentcast::kernels {

// Thread cap for all parallel kernels. Initialized from LATENTCAST_THREADS
// (when set) on first use; 0 means "OpenMP default".
int max_threads();
void set_max_threads(int n);

// c[m x n] = a[m x k] * b[k x n]   (+= when acc)
template <typename T>
void matmul_nn(const T* a, const T* b, T* c, int m, int k, int n, bool acc = false);
template <typename T>
void matmul_nn_serial(const T* a, const T* b, T* c, int m, int k, int n, bool acc = false);

// c[m x n] = a[m x k] * b[n x k]^T
template <typename T>
void matmul_nt(const T* a, const T* b, T* c, int m, int k, int n, bool acc = false);
template <typename T>
void matmul_nt_serial(const T* a, const T* b, T* c, int m, int k, int n, bool acc = false);

// c[m x n] = a[r x m]^T * b[r x n]
template <typename T>
void matmul_tn(const T* a, const T* b, T* c, int r, int m, int n, bool acc = false);
template <typename T>
void matmul_tn_serial(const T* a, const T* b, T* c, int r, int m, int n, bool acc = false);

// Row-wise softmax over x[rows x cols]; `valid`, when non-null, flags key
// columns that participate (invalid columns get exactly zero weight).
// Caller guarantees at least one valid column and finite inputs.
template <typename T>
void softmax_rows(const T* x, T* y, int rows, int cols, const std::uint8_t* valid);
template <typename T>
void softmax_rows_serial(const T* x, T* y, int rows, int cols, const std::uint8_t* valid);

// y = 0.5 x (1 + erf(x / sqrt(2))), dy = elementwise derivative
template <typename T>
void gelu(const T* x, T* y, std::int64_t n);
template <typename T>
void gelu_serial(const T* x, T* y, std::int64_t n);
template <typename T>
void gelu_backward(const T* x, const T* dy, T* dx, std::int64_t n);

// Row-wise layer normalization with learned scale/offset of width `cols`.
template <typename T>
void layer_norm_rows(const T* x, const T* scale, const T* offset, T* y, int rows, int cols,
                     T eps);
template <typename T>
void layer_norm_rows_serial(const T* x, const T* scale, const T* offset, T* y, int rows,
                            int cols, T eps);

}  // namespace latentcast::kernels
