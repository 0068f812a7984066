#include <immintrin.h>

#include <cassert>
#include <cstddef>

#include "ucnerf/kernels/dispatch.hpp"

// Compiled with -mavx512f; only dispatch.cpp may call into this TU, and only
// after verifying CPU support. Column tails use masked loads/stores, so the
// row loops have no scalar remainder.

namespace ucnerf::detail {
namespace {

// ---- float ----

void gemm_f(const float* X, const float* W, const float* bias, float* Y,
            int m, int k, int n, bool accumulate) {
  assert(!(accumulate && bias));
  for (int i = 0; i < m; ++i) {
    float* y = Y + static_cast<size_t>(i) * n;
    if (!accumulate) {
      for (int j = 0; j < n; ++j) y[j] = bias ? bias[j] : 0.0f;
    }
    const float* x = X + static_cast<size_t>(i) * k;
    for (int kk = 0; kk < k; ++kk) {
      const __m512 xv = _mm512_set1_ps(x[kk]);
      const float* w = W + static_cast<size_t>(kk) * n;
      int j = 0;
      for (; j + 16 <= n; j += 16) {
        __m512 acc = _mm512_loadu_ps(y + j);
        acc = _mm512_fmadd_ps(xv, _mm512_loadu_ps(w + j), acc);
        _mm512_storeu_ps(y + j, acc);
      }
      if (j < n) {
        const __mmask16 mk = static_cast<__mmask16>((1u << (n - j)) - 1);
        __m512 acc = _mm512_maskz_loadu_ps(mk, y + j);
        acc = _mm512_fmadd_ps(xv, _mm512_maskz_loadu_ps(mk, w + j), acc);
        _mm512_mask_storeu_ps(y + j, mk, acc);
      }
    }
  }
}

void gemm_nt_f(const float* dY, const float* W, float* dX, int m, int k,
               int n, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    const float* dy = dY + static_cast<size_t>(i) * n;
    float* dx = dX + static_cast<size_t>(i) * k;
    for (int kk = 0; kk < k; ++kk) {
      const float* w = W + static_cast<size_t>(kk) * n;
      __m512 acc = _mm512_setzero_ps();
      int j = 0;
      for (; j + 16 <= n; j += 16)
        acc = _mm512_fmadd_ps(_mm512_loadu_ps(dy + j), _mm512_loadu_ps(w + j),
                              acc);
      if (j < n) {
        const __mmask16 mk = static_cast<__mmask16>((1u << (n - j)) - 1);
        acc = _mm512_fmadd_ps(_mm512_maskz_loadu_ps(mk, dy + j),
                              _mm512_maskz_loadu_ps(mk, w + j), acc);
      }
      const float s = _mm512_reduce_add_ps(acc);
      if (accumulate)
        dx[kk] += s;
      else
        dx[kk] = s;
    }
  }
}

void gemm_tn_f(const float* X, const float* dY, float* dW, int m, int k,
               int n) {
  for (int i = 0; i < m; ++i) {
    const float* x = X + static_cast<size_t>(i) * k;
    const float* dy = dY + static_cast<size_t>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      const __m512 xv = _mm512_set1_ps(x[kk]);
      float* dw = dW + static_cast<size_t>(kk) * n;
      int j = 0;
      for (; j + 16 <= n; j += 16) {
        __m512 acc = _mm512_loadu_ps(dw + j);
        acc = _mm512_fmadd_ps(xv, _mm512_loadu_ps(dy + j), acc);
        _mm512_storeu_ps(dw + j, acc);
      }
      if (j < n) {
        const __mmask16 mk = static_cast<__mmask16>((1u << (n - j)) - 1);
        __m512 acc = _mm512_maskz_loadu_ps(mk, dw + j);
        acc = _mm512_fmadd_ps(xv, _mm512_maskz_loadu_ps(mk, dy + j), acc);
        _mm512_mask_storeu_ps(dw + j, mk, acc);
      }
    }
  }
}

float dot_f(const float* a, const float* b, size_t n) {
  __m512 acc = _mm512_setzero_ps();
  size_t i = 0;
  for (; i + 16 <= n; i += 16)
    acc = _mm512_fmadd_ps(_mm512_loadu_ps(a + i), _mm512_loadu_ps(b + i), acc);
  if (i < n) {
    const __mmask16 mk = static_cast<__mmask16>((1u << (n - i)) - 1);
    acc = _mm512_fmadd_ps(_mm512_maskz_loadu_ps(mk, a + i),
                          _mm512_maskz_loadu_ps(mk, b + i), acc);
  }
  return _mm512_reduce_add_ps(acc);
}

void axpy_f(float a, const float* x, float* y, size_t n) {
  const __m512 av = _mm512_set1_ps(a);
  size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    __m512 acc = _mm512_loadu_ps(y + i);
    acc = _mm512_fmadd_ps(av, _mm512_loadu_ps(x + i), acc);
    _mm512_storeu_ps(y + i, acc);
  }
  if (i < n) {
    const __mmask16 mk = static_cast<__mmask16>((1u << (n - i)) - 1);
    __m512 acc = _mm512_maskz_loadu_ps(mk, y + i);
    acc = _mm512_fmadd_ps(av, _mm512_maskz_loadu_ps(mk, x + i), acc);
    _mm512_mask_storeu_ps(y + i, mk, acc);
  }
}

void vmul_f(const float* a, const float* b, float* y, size_t n) {
  size_t i = 0;
  for (; i + 16 <= n; i += 16)
    _mm512_storeu_ps(
        y + i, _mm512_mul_ps(_mm512_loadu_ps(a + i), _mm512_loadu_ps(b + i)));
  if (i < n) {
    const __mmask16 mk = static_cast<__mmask16>((1u << (n - i)) - 1);
    _mm512_mask_storeu_ps(y + i, mk,
                          _mm512_mul_ps(_mm512_maskz_loadu_ps(mk, a + i),
                                        _mm512_maskz_loadu_ps(mk, b + i)));
  }
}

void vmul_acc_f(const float* a, const float* b, float* y, size_t n) {
  size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    __m512 acc = _mm512_loadu_ps(y + i);
    acc = _mm512_fmadd_ps(_mm512_loadu_ps(a + i), _mm512_loadu_ps(b + i), acc);
    _mm512_storeu_ps(y + i, acc);
  }
  if (i < n) {
    const __mmask16 mk = static_cast<__mmask16>((1u << (n - i)) - 1);
    __m512 acc = _mm512_maskz_loadu_ps(mk, y + i);
    acc = _mm512_fmadd_ps(_mm512_maskz_loadu_ps(mk, a + i),
                          _mm512_maskz_loadu_ps(mk, b + i), acc);
    _mm512_mask_storeu_ps(y + i, mk, acc);
  }
}

void relu_f(const float* x, float* y, size_t n) {
  const __m512 z = _mm512_setzero_ps();
  size_t i = 0;
  for (; i + 16 <= n; i += 16)
    _mm512_storeu_ps(y + i, _mm512_max_ps(_mm512_loadu_ps(x + i), z));
  if (i < n) {
    const __mmask16 mk = static_cast<__mmask16>((1u << (n - i)) - 1);
    _mm512_mask_storeu_ps(y + i, mk,
                          _mm512_max_ps(_mm512_maskz_loadu_ps(mk, x + i), z));
  }
}

void relu_bwd_f(const float* x, const float* dy, float* dx, size_t n) {
  const __m512 z = _mm512_setzero_ps();
  size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    const __mmask16 gt = _mm512_cmp_ps_mask(_mm512_loadu_ps(x + i), z,
                                            _CMP_GT_OQ);
    __m512 acc = _mm512_loadu_ps(dx + i);
    acc = _mm512_mask_add_ps(acc, gt, acc, _mm512_loadu_ps(dy + i));
    _mm512_storeu_ps(dx + i, acc);
  }
  for (; i < n; ++i)
    if (x[i] > 0.0f) dx[i] += dy[i];
}

// ---- double ----

void gemm_d(const double* X, const double* W, const double* bias, double* Y,
            int m, int k, int n, bool accumulate) {
  assert(!(accumulate && bias));
  for (int i = 0; i < m; ++i) {
    double* y = Y + static_cast<size_t>(i) * n;
    if (!accumulate) {
      for (int j = 0; j < n; ++j) y[j] = bias ? bias[j] : 0.0;
    }
    const double* x = X + static_cast<size_t>(i) * k;
    for (int kk = 0; kk < k; ++kk) {
      const __m512d xv = _mm512_set1_pd(x[kk]);
      const double* w = W + static_cast<size_t>(kk) * n;
      int j = 0;
      for (; j + 8 <= n; j += 8) {
        __m512d acc = _mm512_loadu_pd(y + j);
        acc = _mm512_fmadd_pd(xv, _mm512_loadu_pd(w + j), acc);
        _mm512_storeu_pd(y + j, acc);
      }
      if (j < n) {
        const __mmask8 mk = static_cast<__mmask8>((1u << (n - j)) - 1);
        __m512d acc = _mm512_maskz_loadu_pd(mk, y + j);
        acc = _mm512_fmadd_pd(xv, _mm512_maskz_loadu_pd(mk, w + j), acc);
        _mm512_mask_storeu_pd(y + j, mk, acc);
      }
    }
  }
}

void gemm_nt_d(const double* dY, const double* W, double* dX, int m, int k,
               int n, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    const double* dy = dY + static_cast<size_t>(i) * n;
    double* dx = dX + static_cast<size_t>(i) * k;
    for (int kk = 0; kk < k; ++kk) {
      const double* w = W + static_cast<size_t>(kk) * n;
      __m512d acc = _mm512_setzero_pd();
      int j = 0;
      for (; j + 8 <= n; j += 8)
        acc = _mm512_fmadd_pd(_mm512_loadu_pd(dy + j), _mm512_loadu_pd(w + j),
                              acc);
      if (j < n) {
        const __mmask8 mk = static_cast<__mmask8>((1u << (n - j)) - 1);
        acc = _mm512_fmadd_pd(_mm512_maskz_loadu_pd(mk, dy + j),
                              _mm512_maskz_loadu_pd(mk, w + j), acc);
      }
      const double s = _mm512_reduce_add_pd(acc);
      if (accumulate)
        dx[kk] += s;
      else
        dx[kk] = s;
    }
  }
}

void gemm_tn_d(const double* X, const double* dY, double* dW, int m, int k,
               int n) {
  for (int i = 0; i < m; ++i) {
    const double* x = X + static_cast<size_t>(i) * k;
    const double* dy = dY + static_cast<size_t>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      const __m512d xv = _mm512_set1_pd(x[kk]);
      double* dw = dW + static_cast<size_t>(kk) * n;
      int j = 0;
      for (; j + 8 <= n; j += 8) {
        __m512d acc = _mm512_loadu_pd(dw + j);
        acc = _mm512_fmadd_pd(xv, _mm512_loadu_pd(dy + j), acc);
        _mm512_storeu_pd(dw + j, acc);
      }
      if (j < n) {
        const __mmask8 mk = static_cast<__mmask8>((1u << (n - j)) - 1);
        __m512d acc = _mm512_maskz_loadu_pd(mk, dw + j);
        acc = _mm512_fmadd_pd(xv, _mm512_maskz_loadu_pd(mk, dy + j), acc);
        _mm512_mask_storeu_pd(dw + j, mk, acc);
      }
    }
  }
}

double dot_d(const double* a, const double* b, size_t n) {
  __m512d acc = _mm512_setzero_pd();
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    acc = _mm512_fmadd_pd(_mm512_loadu_pd(a + i), _mm512_loadu_pd(b + i), acc);
  if (i < n) {
    const __mmask8 mk = static_cast<__mmask8>((1u << (n - i)) - 1);
    acc = _mm512_fmadd_pd(_mm512_maskz_loadu_pd(mk, a + i),
                          _mm512_maskz_loadu_pd(mk, b + i), acc);
  }
  return _mm512_reduce_add_pd(acc);
}

void axpy_d(double a, const double* x, double* y, size_t n) {
  const __m512d av = _mm512_set1_pd(a);
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m512d acc = _mm512_loadu_pd(y + i);
    acc = _mm512_fmadd_pd(av, _mm512_loadu_pd(x + i), acc);
    _mm512_storeu_pd(y + i, acc);
  }
  if (i < n) {
    const __mmask8 mk = static_cast<__mmask8>((1u << (n - i)) - 1);
    __m512d acc = _mm512_maskz_loadu_pd(mk, y + i);
    acc = _mm512_fmadd_pd(av, _mm512_maskz_loadu_pd(mk, x + i), acc);
    _mm512_mask_storeu_pd(y + i, mk, acc);
  }
}

void vmul_d(const double* a, const double* b, double* y, size_t n) {
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm512_storeu_pd(
        y + i, _mm512_mul_pd(_mm512_loadu_pd(a + i), _mm512_loadu_pd(b + i)));
  if (i < n) {
    const __mmask8 mk = static_cast<__mmask8>((1u << (n - i)) - 1);
    _mm512_mask_storeu_pd(y + i, mk,
                          _mm512_mul_pd(_mm512_maskz_loadu_pd(mk, a + i),
                                        _mm512_maskz_loadu_pd(mk, b + i)));
  }
}

void vmul_acc_d(const double* a, const double* b, double* y, size_t n) {
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m512d acc = _mm512_loadu_pd(y + i);
    acc = _mm512_fmadd_pd(_mm512_loadu_pd(a + i), _mm512_loadu_pd(b + i), acc);
    _mm512_storeu_pd(y + i, acc);
  }
  if (i < n) {
    const __mmask8 mk = static_cast<__mmask8>((1u << (n - i)) - 1);
    __m512d acc = _mm512_maskz_loadu_pd(mk, y + i);
    acc = _mm512_fmadd_pd(_mm512_maskz_loadu_pd(mk, a + i),
                          _mm512_maskz_loadu_pd(mk, b + i), acc);
    _mm512_mask_storeu_pd(y + i, mk, acc);
  }
}

void relu_d(const double* x, double* y, size_t n) {
  const __m512d z = _mm512_setzero_pd();
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm512_storeu_pd(y + i, _mm512_max_pd(_mm512_loadu_pd(x + i), z));
  if (i < n) {
    const __mmask8 mk = static_cast<__mmask8>((1u << (n - i)) - 1);
    _mm512_mask_storeu_pd(y + i, mk,
                          _mm512_max_pd(_mm512_maskz_loadu_pd(mk, x + i), z));
  }
}

void relu_bwd_d(const double* x, const double* dy, double* dx, size_t n) {
  const __m512d z = _mm512_setzero_pd();
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __mmask8 gt = _mm512_cmp_pd_mask(_mm512_loadu_pd(x + i), z,
                                           _CMP_GT_OQ);
    __m512d acc = _mm512_loadu_pd(dx + i);
    acc = _mm512_mask_add_pd(acc, gt, acc, _mm512_loadu_pd(dy + i));
    _mm512_storeu_pd(dx + i, acc);
  }
  for (; i < n; ++i)
    if (x[i] > 0.0) dx[i] += dy[i];
}

}  // namespace

template <>
const Kernels<float>& avx512_table<float>() {
  static const Kernels<float> k = {
      &gemm_f, &gemm_nt_f, &gemm_tn_f, &dot_f,      &axpy_f,
      &vmul_f, &vmul_acc_f, &relu_f,   &relu_bwd_f,
  };
  return k;
}

template <>
const Kernels<double>& avx512_table<double>() {
  static const Kernels<double> k = {
      &gemm_d, &gemm_nt_d, &gemm_tn_d, &dot_d,      &axpy_d,
      &vmul_d, &vmul_acc_d, &relu_d,   &relu_bwd_d,
  };
  return k;
}

}  // namespace ucnerf::detail
