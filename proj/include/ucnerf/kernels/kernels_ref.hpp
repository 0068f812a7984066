#pragma once

#include <cassert>
#include <cstddef>

// Scalar reference kernels. These are the semantic ground truth; the SIMD
// variants must agree with them to tight tolerance (exactly, up to FMA and
// reduction-order rounding).

namespace ucnerf::ref {

// Y[m,n] = X[m,k] * W[k,n] (+ bias). With accumulate, Y += X*W and bias must
// be null.
template <typename T>
void gemm(const T* X, const T* W, const T* bias, T* Y, int m, int k, int n,
          bool accumulate) {
  assert(!(accumulate && bias));
  for (int i = 0; i < m; ++i) {
    T* y = Y + static_cast<size_t>(i) * n;
    if (!accumulate) {
      for (int j = 0; j < n; ++j) y[j] = bias ? bias[j] : T(0);
    }
    const T* x = X + static_cast<size_t>(i) * k;
    for (int kk = 0; kk < k; ++kk) {
      const T xv = x[kk];
      const T* w = W + static_cast<size_t>(kk) * n;
      for (int j = 0; j < n; ++j) y[j] += xv * w[j];
    }
  }
}

// dX[m,k] (+)= dY[m,n] * W[k,n]^T  (rows of both operands contiguous over n).
template <typename T>
void gemm_nt(const T* dY, const T* W, T* dX, int m, int k, int n,
             bool accumulate) {
  for (int i = 0; i < m; ++i) {
    const T* dy = dY + static_cast<size_t>(i) * n;
    T* dx = dX + static_cast<size_t>(i) * k;
    for (int kk = 0; kk < k; ++kk) {
      const T* w = W + static_cast<size_t>(kk) * n;
      T s = 0;
      for (int j = 0; j < n; ++j) s += dy[j] * w[j];
      if (accumulate)
        dx[kk] += s;
      else
        dx[kk] = s;
    }
  }
}

// dW[k,n] += X[m,k]^T * dY[m,n].
template <typename T>
void gemm_tn(const T* X, const T* dY, T* dW, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const T* x = X + static_cast<size_t>(i) * k;
    const T* dy = dY + static_cast<size_t>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      const T xv = x[kk];
      T* dw = dW + static_cast<size_t>(kk) * n;
      for (int j = 0; j < n; ++j) dw[j] += xv * dy[j];
    }
  }
}

template <typename T>
T dot(const T* a, const T* b, size_t n) {
  T s = 0;
  for (size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

template <typename T>
void axpy(T a, const T* x, T* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <typename T>
void vmul(const T* a, const T* b, T* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}

template <typename T>
void vmul_acc(const T* a, const T* b, T* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] += a[i] * b[i];
}

template <typename T>
void relu(const T* x, T* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

// dx += dy where x > 0.
template <typename T>
void relu_bwd(const T* x, const T* dy, T* dx, size_t n) {
  for (size_t i = 0; i < n; ++i)
    if (x[i] > T(0)) dx[i] += dy[i];
}

}  // namespace ucnerf::ref
