#include "ucnerf/kernels/dispatch.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>
#include <stdexcept>
#include <string>

namespace ucnerf {

const char* isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return "scalar";
    case Isa::avx2:
      return "avx2";
    case Isa::avx512:
      return "avx512";
  }
  return "?";
}

namespace {

Isa probe_best_isa() {
#if defined(__x86_64__) || defined(_M_X64)
  __builtin_cpu_init();
  if (__builtin_cpu_supports("avx512f")) return Isa::avx512;
  if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma"))
    return Isa::avx2;
#endif
  return Isa::scalar;
}

}  // namespace

Isa detect_best_isa() {
  static const Isa best = probe_best_isa();
  return best;
}

bool isa_supported(Isa isa) {
  return static_cast<int>(isa) <= static_cast<int>(detect_best_isa());
}

namespace {

Isa initial_isa() {
  if (const char* env = std::getenv("UCNERF_ISA")) {
    Isa want;
    if (!std::strcmp(env, "scalar"))
      want = Isa::scalar;
    else if (!std::strcmp(env, "avx2"))
      want = Isa::avx2;
    else if (!std::strcmp(env, "avx512"))
      want = Isa::avx512;
    else
      throw std::runtime_error(std::string("UCNERF_ISA: unknown value '") +
                               env + "'");
    if (!isa_supported(want))
      throw std::runtime_error(std::string("UCNERF_ISA: ") + isa_name(want) +
                               " not supported on this CPU");
    return want;
  }
  return detect_best_isa();
}

std::atomic<Isa>& isa_state() {
  static std::atomic<Isa> state{initial_isa()};
  return state;
}

}  // namespace

Isa active_isa() { return isa_state().load(std::memory_order_relaxed); }

void force_isa(Isa isa) {
  if (!isa_supported(isa))
    throw std::runtime_error(std::string("force_isa: ") + isa_name(isa) +
                             " not supported on this CPU");
  isa_state().store(isa, std::memory_order_relaxed);
}

template <typename T>
const Kernels<T>& kernels_for(Isa isa) {
  if (!isa_supported(isa))
    throw std::runtime_error(std::string("kernels_for: ") + isa_name(isa) +
                             " not supported on this CPU");
  switch (isa) {
    case Isa::avx512:
      return detail::avx512_table<T>();
    case Isa::avx2:
      return detail::avx2_table<T>();
    default:
      return detail::scalar_table<T>();
  }
}

template <typename T>
const Kernels<T>& kernels() {
  static const Kernels<T>* const tables[3] = {&detail::scalar_table<T>(),
                                              &detail::avx2_table<T>(),
                                              &detail::avx512_table<T>()};
  return *tables[static_cast<int>(active_isa())];
}

template const Kernels<float>& kernels_for<float>(Isa);
template const Kernels<double>& kernels_for<double>(Isa);
template const Kernels<float>& kernels<float>();
template const Kernels<double>& kernels<double>();

}  // namespace ucnerf
