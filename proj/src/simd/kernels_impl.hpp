#pragma once

// Per-ISA entry points. Only dispatch.cpp should include this.

#include "cdvg/simd/kernels.hpp"

namespace cdvg::simd {

#define CDVG_DECLARE_KERNELS                                                                   \
  void gemm(const GemmArgs& g);                                                                \
  float dot(const float* x, const float* y, std::size_t n);                                    \
  float sum(const float* x, std::size_t n);                                                    \
  void axpy(std::size_t n, float a, const float* x, float* y);                                 \
  void add(std::size_t n, const float* x, const float* y, float* out);                         \
  void sub(std::size_t n, const float* x, const float* y, float* out);                         \
  void mul(std::size_t n, const float* x, const float* y, float* out);                         \
  void scale(std::size_t n, float a, const float* x, float* out);                              \
  void leaky_relu(std::size_t n, const float* x, float slope, float* out);                     \
  void leaky_relu_mask(std::size_t n, const float* g, const float* ref, float slope,           \
                       float* out);                                                            \
  void adam_step(std::size_t n, float* param, const float* grad, float* m, float* v,          \
                 const AdamArgs& a);

namespace scalar {
CDVG_DECLARE_KERNELS
}

#if defined(CDVG_HAVE_AVX2)
namespace avx2 {
CDVG_DECLARE_KERNELS
}
#endif

#undef CDVG_DECLARE_KERNELS

}  // namespace cdvg::simd
