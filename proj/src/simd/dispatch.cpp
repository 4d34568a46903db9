#include "kernels_impl.hpp"

#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace cdvg::simd {
namespace {

#define CDVG_TABLE(ns, isa_value)                                                              \
  KernelTable {                                                                                \
    isa_value, &ns::gemm, &ns::dot, &ns::sum, &ns::axpy, &ns::add, &ns::sub, &ns::mul,         \
        &ns::scale, &ns::leaky_relu, &ns::leaky_relu_mask, &ns::adam_step                      \
  }

const KernelTable kScalar = CDVG_TABLE(scalar, Isa::scalar);
#if defined(CDVG_HAVE_AVX2)
const KernelTable kAvx2 = CDVG_TABLE(avx2, Isa::avx2);
#endif

#undef CDVG_TABLE

bool host_has_avx2() {
#if defined(CDVG_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* initial_table() {
  const char* env = std::getenv("CDVG_SIMD");
  if (env != nullptr) {
    const std::string want(env);
    if (want == "scalar") return &kScalar;
    if (want == "avx2" && supported(Isa::avx2)) return &table(Isa::avx2);
  }
  return supported(Isa::avx2) ? &table(Isa::avx2) : &kScalar;
}

std::atomic<const KernelTable*>& active_slot() {
  static std::atomic<const KernelTable*> slot{initial_table()};
  return slot;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return "scalar";
    case Isa::avx2:
      return "avx2";
  }
  return "unknown";
}

const KernelTable& scalar_table() { return kScalar; }

bool supported(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2: {
      static const bool ok = host_has_avx2();
      return ok;
    }
  }
  return false;
}

const KernelTable& table(Isa isa) {
  if (!supported(isa)) {
    throw std::runtime_error("SIMD ISA not available on this host: " + std::string(isa_name(isa)));
  }
#if defined(CDVG_HAVE_AVX2)
  if (isa == Isa::avx2) return kAvx2;
#endif
  return kScalar;
}

const KernelTable& active() { return *active_slot().load(std::memory_order_relaxed); }

void set_active(Isa isa) { active_slot().store(&table(isa), std::memory_order_relaxed); }

}  // namespace cdvg::simd
