#include "ucnerf/kernels/dispatch.hpp"
#include "ucnerf/kernels/kernels_ref.hpp"

namespace ucnerf::detail {

template <typename T>
const Kernels<T>& scalar_table() {
  static const Kernels<T> k = {
      &ref::gemm<T>,     &ref::gemm_nt<T>, &ref::gemm_tn<T>,
      &ref::dot<T>,      &ref::axpy<T>,    &ref::vmul<T>,
      &ref::vmul_acc<T>, &ref::relu<T>,    &ref::relu_bwd<T>,
  };
  return k;
}

template const Kernels<float>& scalar_table<float>();
template const Kernels<double>& scalar_table<double>();

}  // namespace ucnerf::detail
