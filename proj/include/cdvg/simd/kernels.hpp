#pragma once

// Data-parallel inner loops used by the tensor engine.
//
// Every kernel has a portable scalar reference implementation and, where the
// host supports it, an AVX2/FMA variant. The active table is chosen once at
// startup from CPUID; CDVG_SIMD=scalar|avx2 in the environment overrides it.

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace cdvg::simd {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa);

// C[m,n] = alpha * op(A)[m,k] * op(B)[k,n] + beta * C, all row-major.
struct GemmArgs {
  bool trans_a = false;
  bool trans_b = false;
  std::size_t m = 0, n = 0, k = 0;
  float alpha = 1.0f;
  const float* a = nullptr;
  std::size_t lda = 0;
  const float* b = nullptr;
  std::size_t ldb = 0;
  float beta = 0.0f;
  float* c = nullptr;
  std::size_t ldc = 0;
};

struct AdamArgs {
  float lr;
  float beta1;
  float beta2;
  float eps;
  float bias_correction1;  // 1 - beta1^t
  float bias_correction2;  // 1 - beta2^t
};

struct KernelTable {
  Isa isa;
  void (*gemm)(const GemmArgs&);
  float (*dot)(const float* x, const float* y, std::size_t n);
  float (*sum)(const float* x, std::size_t n);
  void (*axpy)(std::size_t n, float a, const float* x, float* y);
  void (*add)(std::size_t n, const float* x, const float* y, float* out);
  void (*sub)(std::size_t n, const float* x, const float* y, float* out);
  void (*mul)(std::size_t n, const float* x, const float* y, float* out);
  void (*scale)(std::size_t n, float a, const float* x, float* out);
  // out = x > 0 ? x : slope * x
  void (*leaky_relu)(std::size_t n, const float* x, float slope, float* out);
  // out = ref > 0 ? g : slope * g
  void (*leaky_relu_mask)(std::size_t n, const float* g, const float* ref, float slope,
                          float* out);
  void (*adam_step)(std::size_t n, float* param, const float* grad, float* m, float* v,
                    const AdamArgs& args);
};

const KernelTable& scalar_table();
// Throws std::runtime_error when the ISA is not available on this host.
const KernelTable& table(Isa isa);
bool supported(Isa isa);

const KernelTable& active();
void set_active(Isa isa);

// Thin forwarding helpers over active().
inline void gemm(const GemmArgs& args) { active().gemm(args); }
inline float dot(const float* x, const float* y, std::size_t n) { return active().dot(x, y, n); }
inline float sum(const float* x, std::size_t n) { return active().sum(x, n); }
inline void axpy(std::size_t n, float a, const float* x, float* y) { active().axpy(n, a, x, y); }
inline void add(std::size_t n, const float* x, const float* y, float* out) {
  active().add(n, x, y, out);
}
inline void sub(std::size_t n, const float* x, const float* y, float* out) {
  active().sub(n, x, y, out);
}
inline void mul(std::size_t n, const float* x, const float* y, float* out) {
  active().mul(n, x, y, out);
}
inline void scale(std::size_t n, float a, const float* x, float* out) {
  active().scale(n, a, x, out);
}
inline void leaky_relu(std::size_t n, const float* x, float slope, float* out) {
  active().leaky_relu(n, x, slope, out);
}
inline void leaky_relu_mask(std::size_t n, const float* g, const float* ref, float slope,
                            float* out) {
  active().leaky_relu_mask(n, g, ref, slope, out);
}
inline void adam_step(std::size_t n, float* param, const float* grad, float* m, float* v,
                      const AdamArgs& args) {
  active().adam_step(n, param, grad, m, v, args);
}

}  // namespace cdvg::simd
