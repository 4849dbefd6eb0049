#include "latentcast/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace latentcast::kernels {

namespace {

// Work below this many flops runs serially; the estimator's small latent
// blocks stay single-threaded while the big query/raster loops fan out.
constexpr std::int64_t kParallelFlopThreshold = 1 << 17;

int g_max_threads = -1;  // -1: not initialized, 0: OpenMP default

int resolve_threads() {
  if (g_max_threads == -1) {
    int n = 0;
    if (const char* env = std::getenv("LATENTCAST_THREADS")) {
      n = std::max(0, std::atoi(env));
    }
    g_max_threads = n;
  }
#ifdef _OPENMP
  if (g_max_threads > 0) return g_max_threads;
  return omp_get_max_threads();
#else
  return 1;
#endif
}

template <typename T>
inline void nn_row(const T* __restrict__ ar, const T* __restrict__ b, T* __restrict__ cr, int k,
                   int n, bool acc) {
  if (!acc) std::fill(cr, cr + n, T(0));
  for (int l = 0; l < k; ++l) {
    const T av = ar[l];
    const T* __restrict__ br = b + static_cast<std::int64_t>(l) * n;
    for (int j = 0; j < n; ++j) cr[j] += av * br[j];
  }
}

// Dot product in a fixed 8-lane tree order. The lane split is part of the
// kernel contract: serial and parallel paths produce identical bits.
template <typename T>
inline T dot_lanes(const T* __restrict__ a, const T* __restrict__ b, int k) {
  T acc[8] = {T(0), T(0), T(0), T(0), T(0), T(0), T(0), T(0)};
  int l = 0;
  for (; l + 8 <= k; l += 8) {
    for (int u = 0; u < 8; ++u) acc[u] += a[l + u] * b[l + u];
  }
  for (; l < k; ++l) acc[l & 7] += a[l] * b[l];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

template <typename T>
inline void nt_row(const T* __restrict__ ar, const T* __restrict__ b, T* __restrict__ cr, int k,
                   int n, bool acc) {
  for (int j = 0; j < n; ++j) {
    const T s = dot_lanes(ar, b + static_cast<std::int64_t>(j) * k, k);
    cr[j] = acc ? cr[j] + s : s;
  }
}

template <typename T>
inline void tn_row(const T* __restrict__ a, const T* __restrict__ b, T* __restrict__ cr, int i,
                   int r, int m, int n, bool acc) {
  if (!acc) std::fill(cr, cr + n, T(0));
  for (int l = 0; l < r; ++l) {
    const T av = a[static_cast<std::int64_t>(l) * m + i];
    const T* __restrict__ br = b + static_cast<std::int64_t>(l) * n;
    for (int j = 0; j < n; ++j) cr[j] += av * br[j];
  }
}

}  // namespace

int max_threads() { return resolve_threads(); }

void set_max_threads(int n) { g_max_threads = std::max(0, n); }

template <typename T>
void matmul_nn_serial(const T* a, const T* b, T* c, int m, int k, int n, bool acc) {
  for (int i = 0; i < m; ++i) {
    nn_row(a + static_cast<std::int64_t>(i) * k, b, c + static_cast<std::int64_t>(i) * n, k, n,
           acc);
  }
}

template <typename T>
void matmul_nn(const T* a, const T* b, T* c, int m, int k, int n, bool acc) {
  const std::int64_t flops = static_cast<std::int64_t>(m) * k * n;
  if (flops < kParallelFlopThreshold || m < 2) {
    matmul_nn_serial(a, b, c, m, k, n, acc);
    return;
  }
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(resolve_threads())
#endif
  for (int i = 0; i < m; ++i) {
    nn_row(a + static_cast<std::int64_t>(i) * k, b, c + static_cast<std::int64_t>(i) * n, k, n,
           acc);
  }
}

template <typename T>
void matmul_nt_serial(const T* a, const T* b, T* c, int m, int k, int n, bool acc) {
  for (int i = 0; i < m; ++i) {
    nt_row(a + static_cast<std::int64_t>(i) * k, b, c + static_cast<std::int64_t>(i) * n, k, n,
           acc);
  }
}

template <typename T>
void matmul_nt(const T* a, const T* b, T* c, int m, int k, int n, bool acc) {
  const std::int64_t flops = static_cast<std::int64_t>(m) * k * n;
  if (flops < kParallelFlopThreshold || m < 2) {
    matmul_nt_serial(a, b, c, m, k, n, acc);
    return;
  }
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(resolve_threads())
#endif
  for (int i = 0; i < m; ++i) {
    nt_row(a + static_cast<std::int64_t>(i) * k, b, c + static_cast<std::int64_t>(i) * n, k, n,
           acc);
  }
}

template <typename T>
void matmul_tn_serial(const T* a, const T* b, T* c, int r, int m, int n, bool acc) {
  for (int i = 0; i < m; ++i) {
    tn_row(a, b, c + static_cast<std::int64_t>(i) * n, i, r, m, n, acc);
  }
}

template <typename T>
void matmul_tn(const T* a, const T* b, T* c, int r, int m, int n, bool acc) {
  const std::int64_t flops = static_cast<std::int64_t>(r) * m * n;
  if (flops < kParallelFlopThreshold || m < 2) {
    matmul_tn_serial(a, b, c, r, m, n, acc);
    return;
  }
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(resolve_threads())
#endif
  for (int i = 0; i < m; ++i) {
    tn_row(a, b, c + static_cast<std::int64_t>(i) * n, i, r, m, n, acc);
  }
}

namespace {

template <typename T>
inline void softmax_row(const T* __restrict__ xr, T* __restrict__ yr, int cols,
                        const std::uint8_t* __restrict__ valid) {
  T mx = -std::numeric_limits<T>::infinity();
  for (int j = 0; j < cols; ++j) {
    if (!valid || valid[j]) mx = std::max(mx, xr[j]);
  }
  T sum = 0;
  for (int j = 0; j < cols; ++j) {
    if (!valid || valid[j]) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    } else {
      yr[j] = 0;
    }
  }
  const T inv = T(1) / sum;
  for (int j = 0; j < cols; ++j) yr[j] *= inv;
}

}  // namespace

template <typename T>
void softmax_rows_serial(const T* x, T* y, int rows, int cols, const std::uint8_t* valid) {
  for (int i = 0; i < rows; ++i) {
    softmax_row(x + static_cast<std::int64_t>(i) * cols, y + static_cast<std::int64_t>(i) * cols,
                cols, valid);
  }
}

template <typename T>
void softmax_rows(const T* x, T* y, int rows, int cols, const std::uint8_t* valid) {
  if (static_cast<std::int64_t>(rows) * cols < kParallelFlopThreshold || rows < 2) {
    softmax_rows_serial(x, y, rows, cols, valid);
    return;
  }
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(resolve_threads())
#endif
  for (int i = 0; i < rows; ++i) {
    softmax_row(x + static_cast<std::int64_t>(i) * cols, y + static_cast<std::int64_t>(i) * cols,
                cols, valid);
  }
}

template <typename T>
void gelu_serial(const T* x, T* y, std::int64_t n) {
  constexpr T inv_sqrt2 = T(0.7071067811865475244);
  for (std::int64_t i = 0; i < n; ++i) {
    y[i] = T(0.5) * x[i] * (T(1) + std::erf(x[i] * inv_sqrt2));
  }
}

template <typename T>
void gelu(const T* x, T* y, std::int64_t n) {
  if (n < kParallelFlopThreshold / 16) {
    gelu_serial(x, y, n);
    return;
  }
  constexpr T inv_sqrt2 = T(0.7071067811865475244);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(resolve_threads())
#endif
  for (std::int64_t i = 0; i < n; ++i) {
    y[i] = T(0.5) * x[i] * (T(1) + std::erf(x[i] * inv_sqrt2));
  }
}

template <typename T>
void gelu_backward(const T* x, const T* dy, T* dx, std::int64_t n) {
  constexpr T inv_sqrt2 = T(0.7071067811865475244);
  constexpr T inv_sqrt2pi = T(0.3989422804014326779);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(resolve_threads()) \
    if (n >= kParallelFlopThreshold / 16)
#endif
  for (std::int64_t i = 0; i < n; ++i) {
    const T cdf = T(0.5) * (T(1) + std::erf(x[i] * inv_sqrt2));
    const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x[i] * x[i]);
    dx[i] += dy[i] * (cdf + x[i] * pdf);
  }
}

namespace {

template <typename T>
inline void layer_norm_row(const T* __restrict__ xr, const T* __restrict__ scale,
                           const T* __restrict__ offset, T* __restrict__ yr, int cols, T eps) {
  T mean = 0;
  for (int j = 0; j < cols; ++j) mean += xr[j];
  mean /= static_cast<T>(cols);
  T var = 0;
  for (int j = 0; j < cols; ++j) {
    const T d = xr[j] - mean;
    var += d * d;
  }
  var /= static_cast<T>(cols);
  const T inv_sd = T(1) / std::sqrt(var + eps);
  for (int j = 0; j < cols; ++j) {
    yr[j] = (xr[j] - mean) * inv_sd * scale[j] + offset[j];
  }
}

}  // namespace

template <typename T>
void layer_norm_rows_serial(const T* x, const T* scale, const T* offset, T* y, int rows,
                            int cols, T eps) {
  for (int i = 0; i < rows; ++i) {
    layer_norm_row(x + static_cast<std::int64_t>(i) * cols, scale, offset,
                   y + static_cast<std::int64_t>(i) * cols, cols, eps);
  }
}

template <typename T>
void layer_norm_rows(const T* x, const T* scale, const T* offset, T* y, int rows, int cols,
                     T eps) {
  if (static_cast<std::int64_t>(rows) * cols < kParallelFlopThreshold || rows < 2) {
    layer_norm_rows_serial(x, scale, offset, y, rows, cols, eps);
    return;
  }
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(resolve_threads())
#endif
  for (int i = 0; i < rows; ++i) {
    layer_norm_row(x + static_cast<std::int64_t>(i) * cols, scale, offset,
                   y + static_cast<std::int64_t>(i) * cols, cols, eps);
  }
}

#define LATENTCAST_INSTANTIATE(T)                                                            \
  template void matmul_nn<T>(const T*, const T*, T*, int, int, int, bool);                   \
  template void matmul_nn_serial<T>(const T*, const T*, T*, int, int, int, bool);            \
  template void matmul_nt<T>(const T*, const T*, T*, int, int, int, bool);                   \
  template void matmul_nt_serial<T>(const T*, const T*, T*, int, int, int, bool);            \
  template void matmul_tn<T>(const T*, const T*, T*, int, int, int, bool);                   \
  template void matmul_tn_serial<T>(const T*, const T*, T*, int, int, int, bool);            \
  template void softmax_rows<T>(const T*, T*, int, int, const std::uint8_t*);                \
  template void softmax_rows_serial<T>(const T*, T*, int, int, const std::uint8_t*);         \
  template void gelu<T>(const T*, T*, std::int64_t);                                         \
  template void gelu_serial<T>(const T*, T*, std::int64_t);                                  \
  template void gelu_backward<T>(const T*, const T*, T*, std::int64_t);                      \
  template void layer_norm_rows<T>(const T*, const T*, const T*, T*, int, int, T);           \
  template void layer_norm_rows_serial<T>(const T*, const T*, const T*, T*, int, int, T);

LATENTCAST_INSTANTIATE(float)
LATENTCAST_INSTANTIATE(double)

#undef LATENTCAST_INSTANTIATE

}  // namespace latentcast::kernels
