#include "kernels_impl.hpp"

#include <cmath>

namespace cdvg::simd::scalar {

void gemm(const GemmArgs& g) {
  // Scale C by beta first so the accumulation below is a pure C += alpha*A*B.
  for (std::size_t i = 0; i < g.m; ++i) {
    float* crow = g.c + i * g.ldc;
    if (g.beta == 0.0f) {
      for (std::size_t j = 0; j < g.n; ++j) crow[j] = 0.0f;
    } else if (g.beta != 1.0f) {
      for (std::size_t j = 0; j < g.n; ++j) crow[j] *= g.beta;
    }
  }
  for (std::size_t i = 0; i < g.m; ++i) {
    float* crow = g.c + i * g.ldc;
    for (std::size_t p = 0; p < g.k; ++p) {
      const float a = g.alpha * (g.trans_a ? g.a[p * g.lda + i] : g.a[i * g.lda + p]);
      if (a == 0.0f) continue;
      if (g.trans_b) {
        for (std::size_t j = 0; j < g.n; ++j) crow[j] += a * g.b[j * g.ldb + p];
      } else {
        const float* brow = g.b + p * g.ldb;
        for (std::size_t j = 0; j < g.n; ++j) crow[j] += a * brow[j];
      }
    }
  }
}

float dot(const float* x, const float* y, std::size_t n) {
  float acc = 0.0f;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

float sum(const float* x, std::size_t n) {
  float acc = 0.0f;
  for (std::size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

void axpy(std::size_t n, float a, const float* x, float* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void add(std::size_t n, const float* x, const float* y, float* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] + y[i];
}

void sub(std::size_t n, const float* x, const float* y, float* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] - y[i];
}

void mul(std::size_t n, const float* x, const float* y, float* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * y[i];
}

void scale(std::size_t n, float a, const float* x, float* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a * x[i];
}

void leaky_relu(std::size_t n, const float* x, float slope, float* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > 0.0f ? x[i] : slope * x[i];
}

void leaky_relu_mask(std::size_t n, const float* g, const float* ref, float slope, float* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = ref[i] > 0.0f ? g[i] : slope * g[i];
}

void adam_step(std::size_t n, float* param, const float* grad, float* m, float* v,
               const AdamArgs& a) {
  const float step = a.lr / a.bias_correction1;
  const float inv_bc2 = 1.0f / a.bias_correction2;
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = a.beta1 * m[i] + (1.0f - a.beta1) * grad[i];
    v[i] = a.beta2 * v[i] + (1.0f - a.beta2) * grad[i] * grad[i];
    const float denom = std::sqrt(v[i] * inv_bc2) + a.eps;
    param[i] -= step * m[i] / denom;
  }
}

}  // namespace cdvg::simd::scalar
