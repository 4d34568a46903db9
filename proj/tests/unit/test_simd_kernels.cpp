#include <cmath>
#include <cstring>
#include <vector>

#include "cdvg/core/rng.hpp"
#include "cdvg/simd/kernels.hpp"
#include "doctest.h"

using namespace cdvg;
using simd::Isa;

namespace {

std::vector<float> random_vec(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return v;
}

// Double-precision reference for op(A) op(B).
std::vector<double> reference_gemm(const simd::GemmArgs& g, const std::vector<float>& c0) {
  std::vector<double> c(g.m * g.n);
  for (std::size_t i = 0; i < g.m; ++i) {
    for (std::size_t j = 0; j < g.n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < g.k; ++p) {
        const double a = g.trans_a ? g.a[p * g.lda + i] : g.a[i * g.lda + p];
        const double b = g.trans_b ? g.b[j * g.ldb + p] : g.b[p * g.ldb + j];
        acc += a * b;
      }
      c[i * g.n + j] = g.alpha * acc + (g.beta == 0.0f ? 0.0 : g.beta * c0[i * g.ldc + j]);
    }
  }
  return c;
}

std::vector<Isa> available_isas() {
  std::vector<Isa> isas{Isa::scalar};
  if (simd::supported(Isa::avx2)) isas.push_back(Isa::avx2);
  return isas;
}

}  // namespace

TEST_CASE("gemm matches a double-precision reference for every ISA and transpose") {
  Rng rng(7);
  const std::size_t shapes[][3] = {{1, 1, 1}, {5, 7, 3}, {6, 16, 8}, {13, 33, 17},
                                   {97, 45, 260}, {7, 2100, 5}, {64, 100, 2352}};
  for (Isa isa : available_isas()) {
    const auto& table = simd::table(isa);
    for (const auto& s : shapes) {
      for (int variant = 0; variant < 4; ++variant) {
        simd::GemmArgs g;
        g.m = s[0];
        g.n = s[1];
        g.k = s[2];
        g.trans_a = (variant & 1) != 0;
        g.trans_b = (variant & 2) != 0;
        g.alpha = variant == 3 ? 0.5f : 1.0f;
        g.beta = variant == 2 ? 1.0f : (variant == 1 ? -0.25f : 0.0f);
        auto a = random_vec(rng, g.m * g.k);
        auto b = random_vec(rng, g.k * g.n);
        auto c = random_vec(rng, g.m * g.n);
        const auto c0 = c;
        g.a = a.data();
        g.lda = g.trans_a ? g.m : g.k;
        g.b = b.data();
        g.ldb = g.trans_b ? g.k : g.n;
        g.c = c.data();
        g.ldc = g.n;
        const auto expected = reference_gemm(g, c0);
        table.gemm(g);
        const double tol = 1e-5 * std::sqrt(static_cast<double>(g.k)) + 1e-6;
        for (std::size_t i = 0; i < c.size(); ++i) {
          REQUIRE(std::fabs(c[i] - expected[i]) <= tol * (1.0 + std::fabs(expected[i])));
        }
      }
    }
  }
}

TEST_CASE("elementwise kernels are bit-identical across ISAs") {
  if (!simd::supported(Isa::avx2)) return;
  const auto& ref = simd::scalar_table();
  const auto& fast = simd::table(Isa::avx2);
  Rng rng(11);
  for (std::size_t n : {0u, 1u, 7u, 8u, 9u, 31u, 1000u}) {
    auto x = random_vec(rng, n);
    auto y = random_vec(rng, n);
    std::vector<float> o1(n), o2(n);

    ref.add(n, x.data(), y.data(), o1.data());
    fast.add(n, x.data(), y.data(), o2.data());
    CHECK(o1 == o2);
    ref.sub(n, x.data(), y.data(), o1.data());
    fast.sub(n, x.data(), y.data(), o2.data());
    CHECK(o1 == o2);
    ref.mul(n, x.data(), y.data(), o1.data());
    fast.mul(n, x.data(), y.data(), o2.data());
    CHECK(o1 == o2);
    ref.scale(n, 0.37f, x.data(), o1.data());
    fast.scale(n, 0.37f, x.data(), o2.data());
    CHECK(o1 == o2);
    ref.leaky_relu(n, x.data(), 0.01f, o1.data());
    fast.leaky_relu(n, x.data(), 0.01f, o2.data());
    CHECK(o1 == o2);
    ref.leaky_relu_mask(n, x.data(), y.data(), 0.2f, o1.data());
    fast.leaky_relu_mask(n, x.data(), y.data(), 0.2f, o2.data());
    CHECK(o1 == o2);
  }
}

TEST_CASE("reductions and fused updates agree across ISAs within rounding") {
  if (!simd::supported(Isa::avx2)) return;
  const auto& ref = simd::scalar_table();
  const auto& fast = simd::table(Isa::avx2);
  Rng rng(13);
  for (std::size_t n : {1u, 15u, 16u, 17u, 257u, 4096u}) {
    auto x = random_vec(rng, n);
    auto y = random_vec(rng, n);
    CHECK(ref.dot(x.data(), y.data(), n) ==
          doctest::Approx(fast.dot(x.data(), y.data(), n)).epsilon(1e-4));
    CHECK(ref.sum(x.data(), n) == doctest::Approx(fast.sum(x.data(), n)).epsilon(1e-4));

    auto y1 = y;
    auto y2 = y;
    ref.axpy(n, -0.7f, x.data(), y1.data());
    fast.axpy(n, -0.7f, x.data(), y2.data());
    for (std::size_t i = 0; i < n; ++i) CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-6));

    auto p1 = random_vec(rng, n);
    auto p2 = p1;
    auto m1 = random_vec(rng, n, -0.1, 0.1);
    auto m2 = m1;
    auto v1 = random_vec(rng, n, 0.0, 0.1);
    auto v2 = v1;
    const simd::AdamArgs args{1e-3f, 0.9f, 0.999f, 1e-8f, 1.0f - 0.9f * 0.9f,
                              1.0f - 0.999f * 0.999f};
    ref.adam_step(n, p1.data(), x.data(), m1.data(), v1.data(), args);
    fast.adam_step(n, p2.data(), x.data(), m2.data(), v2.data(), args);
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(p1[i] == doctest::Approx(p2[i]).epsilon(1e-6));
      CHECK(m1[i] == doctest::Approx(m2[i]).epsilon(1e-6));
      CHECK(v1[i] == doctest::Approx(v2[i]).epsilon(1e-6));
    }
  }
}

TEST_CASE("active table can be switched and names its ISA") {
  const Isa before = simd::active().isa;
  simd::set_active(Isa::scalar);
  CHECK(simd::active().isa == Isa::scalar);
  CHECK(simd::isa_name(Isa::scalar) == "scalar");
  simd::set_active(before);
}
