#pragma once

#include <cstddef>

namespace ucnerf {

enum class Isa { scalar = 0, avx2 = 1, avx512 = 2 };

const char* isa_name(Isa isa);

// Vectorizable inner-loop kernels, selected once at runtime. Layouts are
// row-major; weight matrices are stored [in, out] so every pass streams the
// contiguous `out` axis.
template <typename T>
struct Kernels {
  void (*gemm)(const T* X, const T* W, const T* bias, T* Y, int m, int k,
               int n, bool accumulate);
  void (*gemm_nt)(const T* dY, const T* W, T* dX, int m, int k, int n,
                  bool accumulate);
  void (*gemm_tn)(const T* X, const T* dY, T* dW, int m, int k, int n);
  T (*dot)(const T* a, const T* b, size_t n);
  void (*axpy)(T a, const T* x, T* y, size_t n);
  void (*vmul)(const T* a, const T* b, T* y, size_t n);
  void (*vmul_acc)(const T* a, const T* b, T* y, size_t n);
  void (*relu)(const T* x, T* y, size_t n);
  void (*relu_bwd)(const T* x, const T* dy, T* dx, size_t n);
};

// Highest ISA the CPU supports.
Isa detect_best_isa();
bool isa_supported(Isa isa);

// Active ISA: detect_best_isa() unless overridden by the UCNERF_ISA
// environment variable ("scalar" | "avx2" | "avx512") or force_isa().
Isa active_isa();
void force_isa(Isa isa);

// Table for the active ISA.
template <typename T>
const Kernels<T>& kernels();

// Table for a specific ISA (must be supported); used by equivalence tests.
template <typename T>
const Kernels<T>& kernels_for(Isa isa);

namespace detail {
template <typename T>
const Kernels<T>& scalar_table();
template <typename T>
const Kernels<T>& avx2_table();
template <typename T>
const Kernels<T>& avx512_table();
}  // namespace detail

}  // namespace ucnerf
