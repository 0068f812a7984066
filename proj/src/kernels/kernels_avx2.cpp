#include <immintrin.h>

#include <cassert>
#include <cstddef>

#include "ucnerf/kernels/dispatch.hpp"

// Compiled with -mavx2 -mfma; only dispatch.cpp may call into this TU, and
// only after verifying CPU support.

namespace ucnerf::detail {
namespace {

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  lo = _mm_hadd_ps(lo, lo);
  lo = _mm_hadd_ps(lo, lo);
  return _mm_cvtss_f32(lo);
}

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(lo) + _mm_cvtsd_f64(_mm_unpackhi_pd(lo, lo));
}

// ---- float ----

void gemm_f(const float* X, const float* W, const float* bias, float* Y,
            int m, int k, int n, bool accumulate) {
  assert(!(accumulate && bias));
  const int n8 = n & ~7;
  for (int i = 0; i < m; ++i) {
    float* y = Y + static_cast<size_t>(i) * n;
    if (!accumulate) {
      for (int j = 0; j < n; ++j) y[j] = bias ? bias[j] : 0.0f;
    }
    const float* x = X + static_cast<size_t>(i) * k;
    for (int kk = 0; kk < k; ++kk) {
      const __m256 xv = _mm256_set1_ps(x[kk]);
      const float* w = W + static_cast<size_t>(kk) * n;
      int j = 0;
      for (; j < n8; j += 8) {
        __m256 acc = _mm256_loadu_ps(y + j);
        acc = _mm256_fmadd_ps(xv, _mm256_loadu_ps(w + j), acc);
        _mm256_storeu_ps(y + j, acc);
      }
      const float xs = x[kk];
      for (; j < n; ++j) y[j] += xs * w[j];
    }
  }
}

void gemm_nt_f(const float* dY, const float* W, float* dX, int m, int k,
               int n, bool accumulate) {
  const int n8 = n & ~7;
  for (int i = 0; i < m; ++i) {
    const float* dy = dY + static_cast<size_t>(i) * n;
    float* dx = dX + static_cast<size_t>(i) * k;
    for (int kk = 0; kk < k; ++kk) {
      const float* w = W + static_cast<size_t>(kk) * n;
      __m256 acc = _mm256_setzero_ps();
      int j = 0;
      for (; j < n8; j += 8)
        acc = _mm256_fmadd_ps(_mm256_loadu_ps(dy + j), _mm256_loadu_ps(w + j),
                              acc);
      float s = hsum(acc);
      for (; j < n; ++j) s += dy[j] * w[j];
      if (accumulate)
        dx[kk] += s;
      else
        dx[kk] = s;
    }
  }
}

void gemm_tn_f(const float* X, const float* dY, float* dW, int m, int k,
               int n) {
  const int n8 = n & ~7;
  for (int i = 0; i < m; ++i) {
    const float* x = X + static_cast<size_t>(i) * k;
    const float* dy = dY + static_cast<size_t>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      const __m256 xv = _mm256_set1_ps(x[kk]);
      float* dw = dW + static_cast<size_t>(kk) * n;
      int j = 0;
      for (; j < n8; j += 8) {
        __m256 acc = _mm256_loadu_ps(dw + j);
        acc = _mm256_fmadd_ps(xv, _mm256_loadu_ps(dy + j), acc);
        _mm256_storeu_ps(dw + j, acc);
      }
      const float xs = x[kk];
      for (; j < n; ++j) dw[j] += xs * dy[j];
    }
  }
}

float dot_f(const float* a, const float* b, size_t n) {
  const size_t n8 = n & ~size_t(7);
  __m256 acc = _mm256_setzero_ps();
  size_t i = 0;
  for (; i < n8; i += 8)
    acc = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc);
  float s = hsum(acc);
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy_f(float a, const float* x, float* y, size_t n) {
  const size_t n8 = n & ~size_t(7);
  const __m256 av = _mm256_set1_ps(a);
  size_t i = 0;
  for (; i < n8; i += 8) {
    __m256 acc = _mm256_loadu_ps(y + i);
    acc = _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i), acc);
    _mm256_storeu_ps(y + i, acc);
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

void vmul_f(const float* a, const float* b, float* y, size_t n) {
  const size_t n8 = n & ~size_t(7);
  size_t i = 0;
  for (; i < n8; i += 8)
    _mm256_storeu_ps(
        y + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) y[i] = a[i] * b[i];
}

void vmul_acc_f(const float* a, const float* b, float* y, size_t n) {
  const size_t n8 = n & ~size_t(7);
  size_t i = 0;
  for (; i < n8; i += 8) {
    __m256 acc = _mm256_loadu_ps(y + i);
    acc = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc);
    _mm256_storeu_ps(y + i, acc);
  }
  for (; i < n; ++i) y[i] += a[i] * b[i];
}

void relu_f(const float* x, float* y, size_t n) {
  const size_t n8 = n & ~size_t(7);
  const __m256 z = _mm256_setzero_ps();
  size_t i = 0;
  for (; i < n8; i += 8)
    _mm256_storeu_ps(y + i, _mm256_max_ps(_mm256_loadu_ps(x + i), z));
  for (; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void relu_bwd_f(const float* x, const float* dy, float* dx, size_t n) {
  const size_t n8 = n & ~size_t(7);
  const __m256 z = _mm256_setzero_ps();
  size_t i = 0;
  for (; i < n8; i += 8) {
    const __m256 mask = _mm256_cmp_ps(_mm256_loadu_ps(x + i), z, _CMP_GT_OQ);
    const __m256 g = _mm256_and_ps(mask, _mm256_loadu_ps(dy + i));
    _mm256_storeu_ps(dx + i, _mm256_add_ps(_mm256_loadu_ps(dx + i), g));
  }
  for (; i < n; ++i)
    if (x[i] > 0.0f) dx[i] += dy[i];
}

// ---- double ----

void gemm_d(const double* X, const double* W, const double* bias, double* Y,
            int m, int k, int n, bool accumulate) {
  assert(!(accumulate && bias));
  const int n4 = n & ~3;
  for (int i = 0; i < m; ++i) {
    double* y = Y + static_cast<size_t>(i) * n;
    if (!accumulate) {
      for (int j = 0; j < n; ++j) y[j] = bias ? bias[j] : 0.0;
    }
    const double* x = X + static_cast<size_t>(i) * k;
    for (int kk = 0; kk < k; ++kk) {
      const __m256d xv = _mm256_set1_pd(x[kk]);
      const double* w = W + static_cast<size_t>(kk) * n;
      int j = 0;
      for (; j < n4; j += 4) {
        __m256d acc = _mm256_loadu_pd(y + j);
        acc = _mm256_fmadd_pd(xv, _mm256_loadu_pd(w + j), acc);
        _mm256_storeu_pd(y + j, acc);
      }
      const double xs = x[kk];
      for (; j < n; ++j) y[j] += xs * w[j];
    }
  }
}

void gemm_nt_d(const double* dY, const double* W, double* dX, int m, int k,
               int n, bool accumulate) {
  const int n4 = n & ~3;
  for (int i = 0; i < m; ++i) {
    const double* dy = dY + static_cast<size_t>(i) * n;
    double* dx = dX + static_cast<size_t>(i) * k;
    for (int kk = 0; kk < k; ++kk) {
      const double* w = W + static_cast<size_t>(kk) * n;
      __m256d acc = _mm256_setzero_pd();
      int j = 0;
      for (; j < n4; j += 4)
        acc = _mm256_fmadd_pd(_mm256_loadu_pd(dy + j), _mm256_loadu_pd(w + j),
                              acc);
      double s = hsum(acc);
      for (; j < n; ++j) s += dy[j] * w[j];
      if (accumulate)
        dx[kk] += s;
      else
        dx[kk] = s;
    }
  }
}

void gemm_tn_d(const double* X, const double* dY, double* dW, int m, int k,
               int n) {
  const int n4 = n & ~3;
  for (int i = 0; i < m; ++i) {
    const double* x = X + static_cast<size_t>(i) * k;
    const double* dy = dY + static_cast<size_t>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      const __m256d xv = _mm256_set1_pd(x[kk]);
      double* dw = dW + static_cast<size_t>(kk) * n;
      int j = 0;
      for (; j < n4; j += 4) {
        __m256d acc = _mm256_loadu_pd(dw + j);
        acc = _mm256_fmadd_pd(xv, _mm256_loadu_pd(dy + j), acc);
        _mm256_storeu_pd(dw + j, acc);
      }
      const double xs = x[kk];
      for (; j < n; ++j) dw[j] += xs * dy[j];
    }
  }
}

double dot_d(const double* a, const double* b, size_t n) {
  const size_t n4 = n & ~size_t(3);
  __m256d acc = _mm256_setzero_pd();
  size_t i = 0;
  for (; i < n4; i += 4)
    acc = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc);
  double s = hsum(acc);
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy_d(double a, const double* x, double* y, size_t n) {
  const size_t n4 = n & ~size_t(3);
  const __m256d av = _mm256_set1_pd(a);
  size_t i = 0;
  for (; i < n4; i += 4) {
    __m256d acc = _mm256_loadu_pd(y + i);
    acc = _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), acc);
    _mm256_storeu_pd(y + i, acc);
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

void vmul_d(const double* a, const double* b, double* y, size_t n) {
  const size_t n4 = n & ~size_t(3);
  size_t i = 0;
  for (; i < n4; i += 4)
    _mm256_storeu_pd(
        y + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) y[i] = a[i] * b[i];
}

void vmul_acc_d(const double* a, const double* b, double* y, size_t n) {
  const size_t n4 = n & ~size_t(3);
  size_t i = 0;
  for (; i < n4; i += 4) {
    __m256d acc = _mm256_loadu_pd(y + i);
    acc = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc);
    _mm256_storeu_pd(y + i, acc);
  }
  for (; i < n; ++i) y[i] += a[i] * b[i];
}

void relu_d(const double* x, double* y, size_t n) {
  const size_t n4 = n & ~size_t(3);
  const __m256d z = _mm256_setzero_pd();
  size_t i = 0;
  for (; i < n4; i += 4)
    _mm256_storeu_pd(y + i, _mm256_max_pd(_mm256_loadu_pd(x + i), z));
  for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_bwd_d(const double* x, const double* dy, double* dx, size_t n) {
  const size_t n4 = n & ~size_t(3);
  const __m256d z = _mm256_setzero_pd();
  size_t i = 0;
  for (; i < n4; i += 4) {
    const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + i), z, _CMP_GT_OQ);
    const __m256d g = _mm256_and_pd(mask, _mm256_loadu_pd(dy + i));
    _mm256_storeu_pd(dx + i, _mm256_add_pd(_mm256_loadu_pd(dx + i), g));
  }
  for (; i < n; ++i)
    if (x[i] > 0.0) dx[i] += dy[i];
}

}  // namespace

template <>
const Kernels<float>& avx2_table<float>() {
  static const Kernels<float> k = {
      &gemm_f, &gemm_nt_f, &gemm_tn_f, &dot_f,      &axpy_f,
      &vmul_f, &vmul_acc_f, &relu_f,   &relu_bwd_f,
  };
  return k;
}

template <>
const Kernels<double>& avx2_table<double>() {
  static const Kernels<double> k = {
      &gemm_d, &gemm_nt_d, &gemm_tn_d, &dot_d,      &axpy_d,
      &vmul_d, &vmul_acc_d, &relu_d,   &relu_bwd_d,
  };
  return k;
}

}  // namespace ucnerf::detail
