// Compiled with -mavx2 -mfma; only reached through the dispatch table after a
// CPUID check.

#include "kernels_impl.hpp"

#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <vector>

namespace cdvg::simd::avx2 {
namespace {

constexpr std::size_t kMR = 6;
constexpr std::size_t kNR = 16;
constexpr std::size_t kMC = 96;
constexpr std::size_t kKC = 256;
constexpr std::size_t kNC = 512;

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 shuf = _mm_movehdup_ps(lo);
  __m128 sums = _mm_add_ps(lo, shuf);
  shuf = _mm_movehl_ps(shuf, sums);
  sums = _mm_add_ss(sums, shuf);
  return _mm_cvtss_f32(sums);
}

// Packs op(A)[ic:ic+mc, pc:pc+kc] into row panels of kMR, scaled by alpha and
// zero padded to a multiple of kMR rows.
void pack_a(const GemmArgs& g, std::size_t ic, std::size_t mc, std::size_t pc, std::size_t kc,
            float* out) {
  for (std::size_t i0 = 0; i0 < mc; i0 += kMR) {
    const std::size_t rows = std::min(kMR, mc - i0);
    for (std::size_t p = 0; p < kc; ++p) {
      for (std::size_t r = 0; r < kMR; ++r) {
        float v = 0.0f;
        if (r < rows) {
          const std::size_t i = ic + i0 + r;
          const std::size_t pp = pc + p;
          v = g.trans_a ? g.a[pp * g.lda + i] : g.a[i * g.lda + pp];
          v *= g.alpha;
        }
        *out++ = v;
      }
    }
  }
}

// Packs op(B)[pc:pc+kc, jc:jc+nc] into column panels of kNR, zero padded.
void pack_b(const GemmArgs& g, std::size_t pc, std::size_t kc, std::size_t jc, std::size_t nc,
            float* out) {
  for (std::size_t j0 = 0; j0 < nc; j0 += kNR) {
    const std::size_t cols = std::min(kNR, nc - j0);
    for (std::size_t p = 0; p < kc; ++p) {
      const std::size_t pp = pc + p;
      if (!g.trans_b && cols == kNR) {
        const float* src = g.b + pp * g.ldb + jc + j0;
        _mm256_storeu_ps(out, _mm256_loadu_ps(src));
        _mm256_storeu_ps(out + 8, _mm256_loadu_ps(src + 8));
        out += kNR;
        continue;
      }
      for (std::size_t c = 0; c < kNR; ++c) {
        float v = 0.0f;
        if (c < cols) {
          const std::size_t j = jc + j0 + c;
          v = g.trans_b ? g.b[j * g.ldb + pp] : g.b[pp * g.ldb + j];
        }
        *out++ = v;
      }
    }
  }
}

void micro_kernel(std::size_t kc, const float* ap, const float* bp, float* c, std::size_t ldc,
                  std::size_t mr, std::size_t nr) {
  __m256 c00 = _mm256_setzero_ps(), c01 = _mm256_setzero_ps();
  __m256 c10 = _mm256_setzero_ps(), c11 = _mm256_setzero_ps();
  __m256 c20 = _mm256_setzero_ps(), c21 = _mm256_setzero_ps();
  __m256 c30 = _mm256_setzero_ps(), c31 = _mm256_setzero_ps();
  __m256 c40 = _mm256_setzero_ps(), c41 = _mm256_setzero_ps();
  __m256 c50 = _mm256_setzero_ps(), c51 = _mm256_setzero_ps();
  for (std::size_t p = 0; p < kc; ++p) {
    const __m256 b0 = _mm256_loadu_ps(bp);
    const __m256 b1 = _mm256_loadu_ps(bp + 8);
    __m256 a = _mm256_broadcast_ss(ap + 0);
    c00 = _mm256_fmadd_ps(a, b0, c00);
    c01 = _mm256_fmadd_ps(a, b1, c01);
    a = _mm256_broadcast_ss(ap + 1);
    c10 = _mm256_fmadd_ps(a, b0, c10);
    c11 = _mm256_fmadd_ps(a, b1, c11);
    a = _mm256_broadcast_ss(ap + 2);
    c20 = _mm256_fmadd_ps(a, b0, c20);
    c21 = _mm256_fmadd_ps(a, b1, c21);
    a = _mm256_broadcast_ss(ap + 3);
    c30 = _mm256_fmadd_ps(a, b0, c30);
    c31 = _mm256_fmadd_ps(a, b1, c31);
    a = _mm256_broadcast_ss(ap + 4);
    c40 = _mm256_fmadd_ps(a, b0, c40);
    c41 = _mm256_fmadd_ps(a, b1, c41);
    a = _mm256_broadcast_ss(ap + 5);
    c50 = _mm256_fmadd_ps(a, b0, c50);
    c51 = _mm256_fmadd_ps(a, b1, c51);
    ap += kMR;
    bp += kNR;
  }
  alignas(32) float tile[kMR][kNR];
  _mm256_store_ps(tile[0], c00);
  _mm256_store_ps(tile[0] + 8, c01);
  _mm256_store_ps(tile[1], c10);
  _mm256_store_ps(tile[1] + 8, c11);
  _mm256_store_ps(tile[2], c20);
  _mm256_store_ps(tile[2] + 8, c21);
  _mm256_store_ps(tile[3], c30);
  _mm256_store_ps(tile[3] + 8, c31);
  _mm256_store_ps(tile[4], c40);
  _mm256_store_ps(tile[4] + 8, c41);
  _mm256_store_ps(tile[5], c50);
  _mm256_store_ps(tile[5] + 8, c51);
  if (nr == kNR) {
    for (std::size_t r = 0; r < mr; ++r) {
      float* crow = c + r * ldc;
      _mm256_storeu_ps(crow, _mm256_add_ps(_mm256_loadu_ps(crow), _mm256_load_ps(tile[r])));
      _mm256_storeu_ps(crow + 8,
                       _mm256_add_ps(_mm256_loadu_ps(crow + 8), _mm256_load_ps(tile[r] + 8)));
    }
  } else {
    for (std::size_t r = 0; r < mr; ++r) {
      float* crow = c + r * ldc;
      for (std::size_t j = 0; j < nr; ++j) crow[j] += tile[r][j];
    }
  }
}

}  // namespace

void gemm(const GemmArgs& g) {
  if (g.m == 0 || g.n == 0) return;
  for (std::size_t i = 0; i < g.m; ++i) {
    float* crow = g.c + i * g.ldc;
    if (g.beta == 0.0f) {
      std::fill(crow, crow + g.n, 0.0f);
    } else if (g.beta != 1.0f) {
      scale(g.n, g.beta, crow, crow);
    }
  }
  if (g.k == 0 || g.alpha == 0.0f) return;

  thread_local std::vector<float> a_pack;
  thread_local std::vector<float> b_pack;
  a_pack.resize(kMC * kKC);
  b_pack.resize(kKC * (kNC + kNR));

  for (std::size_t jc = 0; jc < g.n; jc += kNC) {
    const std::size_t nc = std::min(kNC, g.n - jc);
    for (std::size_t pc = 0; pc < g.k; pc += kKC) {
      const std::size_t kc = std::min(kKC, g.k - pc);
      pack_b(g, pc, kc, jc, nc, b_pack.data());
      for (std::size_t ic = 0; ic < g.m; ic += kMC) {
        const std::size_t mc = std::min(kMC, g.m - ic);
        pack_a(g, ic, mc, pc, kc, a_pack.data());
        for (std::size_t jr = 0; jr < nc; jr += kNR) {
          const std::size_t nr = std::min(kNR, nc - jr);
          const float* bp = b_pack.data() + (jr / kNR) * kc * kNR;
          for (std::size_t ir = 0; ir < mc; ir += kMR) {
            const std::size_t mr = std::min(kMR, mc - ir);
            const float* ap = a_pack.data() + (ir / kMR) * kc * kMR;
            micro_kernel(kc, ap, bp, g.c + (ic + ir) * g.ldc + jc + jr, g.ldc, mr, nr);
          }
        }
      }
    }
  }
}

float dot(const float* x, const float* y, std::size_t n) {
  __m256 acc0 = _mm256_setzero_ps();
  __m256 acc1 = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc0);
    acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i + 8), _mm256_loadu_ps(y + i + 8), acc1);
  }
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc0);
  }
  float acc = hsum(_mm256_add_ps(acc0, acc1));
  for (; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

float sum(const float* x, std::size_t n) {
  __m256 acc0 = _mm256_setzero_ps();
  __m256 acc1 = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    acc0 = _mm256_add_ps(_mm256_loadu_ps(x + i), acc0);
    acc1 = _mm256_add_ps(_mm256_loadu_ps(x + i + 8), acc1);
  }
  for (; i + 8 <= n; i += 8) acc0 = _mm256_add_ps(_mm256_loadu_ps(x + i), acc0);
  float acc = hsum(_mm256_add_ps(acc0, acc1));
  for (; i < n; ++i) acc += x[i];
  return acc;
}

void axpy(std::size_t n, float a, const float* x, float* y) {
  const __m256 va = _mm256_set1_ps(a);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  }
  for (; i < n; ++i) y[i] = std::fma(a, x[i], y[i]);
}

void add(std::size_t n, const float* x, const float* y, float* out) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  }
  for (; i < n; ++i) out[i] = x[i] + y[i];
}

void sub(std::size_t n, const float* x, const float* y, float* out) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(out + i, _mm256_sub_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  }
  for (; i < n; ++i) out[i] = x[i] - y[i];
}

void mul(std::size_t n, const float* x, const float* y, float* out) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  }
  for (; i < n; ++i) out[i] = x[i] * y[i];
}

void scale(std::size_t n, float a, const float* x, float* out) {
  const __m256 va = _mm256_set1_ps(a);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(out + i, _mm256_mul_ps(va, _mm256_loadu_ps(x + i)));
  for (; i < n; ++i) out[i] = a * x[i];
}

void leaky_relu(std::size_t n, const float* x, float slope, float* out) {
  const __m256 vs = _mm256_set1_ps(slope);
  const __m256 zero = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 v = _mm256_loadu_ps(x + i);
    const __m256 pos = _mm256_cmp_ps(v, zero, _CMP_GT_OQ);
    _mm256_storeu_ps(out + i, _mm256_blendv_ps(_mm256_mul_ps(vs, v), v, pos));
  }
  for (; i < n; ++i) out[i] = x[i] > 0.0f ? x[i] : slope * x[i];
}

void leaky_relu_mask(std::size_t n, const float* g, const float* ref, float slope, float* out) {
  const __m256 vs = _mm256_set1_ps(slope);
  const __m256 zero = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 vg = _mm256_loadu_ps(g + i);
    const __m256 pos = _mm256_cmp_ps(_mm256_loadu_ps(ref + i), zero, _CMP_GT_OQ);
    _mm256_storeu_ps(out + i, _mm256_blendv_ps(_mm256_mul_ps(vs, vg), vg, pos));
  }
  for (; i < n; ++i) out[i] = ref[i] > 0.0f ? g[i] : slope * g[i];
}

void adam_step(std::size_t n, float* param, const float* grad, float* m, float* v,
               const AdamArgs& a) {
  const float step = a.lr / a.bias_correction1;
  const float inv_bc2 = 1.0f / a.bias_correction2;
  const __m256 b1 = _mm256_set1_ps(a.beta1);
  const __m256 b2 = _mm256_set1_ps(a.beta2);
  const __m256 one_b1 = _mm256_set1_ps(1.0f - a.beta1);
  const __m256 one_b2 = _mm256_set1_ps(1.0f - a.beta2);
  const __m256 vstep = _mm256_set1_ps(step);
  const __m256 vinv = _mm256_set1_ps(inv_bc2);
  const __m256 veps = _mm256_set1_ps(a.eps);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 g = _mm256_loadu_ps(grad + i);
    __m256 mm = _mm256_mul_ps(b1, _mm256_loadu_ps(m + i));
    mm = _mm256_add_ps(mm, _mm256_mul_ps(one_b1, g));
    __m256 vv = _mm256_mul_ps(b2, _mm256_loadu_ps(v + i));
    vv = _mm256_add_ps(vv, _mm256_mul_ps(_mm256_mul_ps(one_b2, g), g));
    _mm256_storeu_ps(m + i, mm);
    _mm256_storeu_ps(v + i, vv);
    const __m256 denom = _mm256_add_ps(_mm256_sqrt_ps(_mm256_mul_ps(vv, vinv)), veps);
    const __m256 upd = _mm256_div_ps(_mm256_mul_ps(vstep, mm), denom);
    _mm256_storeu_ps(param + i, _mm256_sub_ps(_mm256_loadu_ps(param + i), upd));
  }
  for (; i < n; ++i) {
    m[i] = a.beta1 * m[i] + (1.0f - a.beta1) * grad[i];
    v[i] = a.beta2 * v[i] + (1.0f - a.beta2) * grad[i] * grad[i];
    const float denom = std::sqrt(v[i] * inv_bc2) + a.eps;
    param[i] -= step * m[i] / denom;
  }
}

}  // namespace cdvg::simd::avx2
