#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "cdvg/core/ops.hpp"
#include "cdvg/core/rng.hpp"
#include "cdvg/debias/contrastive.hpp"
#include "doctest.h"

using namespace cdvg;
using debias::nt_xent;

namespace {

// Direct transcription of the loss: plain exponentials, no stabilization.
double double_loop(const std::vector<double>& z, std::size_t rows, std::size_t dim, double tau) {
  auto sim = [&](std::size_t i, std::size_t j) {
    double dot = 0.0, ni = 0.0, nj = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      dot += z[i * dim + d] * z[j * dim + d];
      ni += z[i * dim + d] * z[i * dim + d];
      nj += z[j * dim + d] * z[j * dim + d];
    }
    return dot / (std::sqrt(ni) * std::sqrt(nj));
  };
  auto ell = [&](std::size_t i, std::size_t j) {
    double denom = 0.0;
    for (std::size_t k = 0; k < rows; ++k) {
      if (k != i) denom += std::exp(sim(i, k) / tau);
    }
    return -std::log(std::exp(sim(i, j) / tau) / denom);
  };
  double total = 0.0;
  for (std::size_t k = 0; k < rows / 2; ++k) total += ell(2 * k, 2 * k + 1) + ell(2 * k + 1, 2 * k);
  return total;
}

std::vector<double> random_rows(Rng& rng, std::size_t rows, std::size_t dim) {
  std::vector<double> z(rows * dim);
  for (double& v : z) v = rng.uniform(-1.0, 1.0);
  return z;
}

double loss_of(const std::vector<double>& z, std::size_t rows, std::size_t dim, double tau) {
  return nt_xent<double>(z, rows, dim, tau);
}

}  // namespace

TEST_CASE("nt_xent matches the double-loop formula on random batches") {
  Rng rng(2024);
  const double taus[] = {0.01, 0.1, 1.0};
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(8), dim = 1 + rng.below(16);
    const double tau = taus[trial % 3];
    auto z = random_rows(rng, 2 * n, dim);
    const double expected = double_loop(z, 2 * n, dim, tau);
    INFO("n=" << n << " dim=" << dim << " tau=" << tau);
    CHECK(std::abs(loss_of(z, 2 * n, dim, tau) - expected) <= 1e-6 * std::max(1.0, std::abs(expected)));
  }
}

TEST_CASE("nt_xent analytic values") {
  std::vector<double> pair{0.3, -1.2, 2.0, 0.7, 0.1, -0.4};
  CHECK(std::abs(loss_of(pair, 2, 3, 0.01)) <= 1e-9);
  CHECK(std::abs(loss_of(pair, 2, 3, 1.0)) <= 1e-9);

  std::vector<double> same;
  for (int r = 0; r < 4; ++r) same.insert(same.end(), {0.5, -0.25, 2.0});
  for (double tau : {0.01, 0.1, 1.0, 7.0}) {
    CHECK(std::abs(loss_of(same, 4, 3, tau) - 4.0 * std::log(3.0)) <= 1e-9);
  }
  CHECK(4.0 * std::log(3.0) == doctest::Approx(4.394449).epsilon(1e-6));
}

TEST_CASE("nt_xent gradient matches central finite differences") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.below(4), dim = 2 + rng.below(5);
    const double tau = trial % 2 ? 0.5 : 0.1;
    auto z = random_rows(rng, 2 * n, dim);
    std::vector<double> g(z.size());
    nt_xent<double>(z, 2 * n, dim, tau, g);
    double diff = 0.0, norm = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double orig = z[i], h = 1e-6;
      z[i] = orig + h;
      const double plus = loss_of(z, 2 * n, dim, tau);
      z[i] = orig - h;
      const double minus = loss_of(z, 2 * n, dim, tau);
      z[i] = orig;
      const double fd = (plus - minus) / (2 * h);
      diff += (g[i] - fd) * (g[i] - fd);
      norm += fd * fd;
    }
    INFO("trial " << trial);
    if (n == 1) {
      CHECK(std::sqrt(diff) <= 1e-6);  // loss is identically zero
    } else {
      CHECK(std::sqrt(diff / norm) <= 1e-4);
    }
  }
}

TEST_CASE("nt_xent is invariant to pair order and positive row scaling") {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + rng.below(6), dim = 1 + rng.below(16);
    auto z = random_rows(rng, 2 * n, dim);
    const double base = loss_of(z, 2 * n, dim, 0.1);

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm.begin(), perm.end());
    std::vector<double> permuted;
    for (std::size_t k : perm) permuted.insert(permuted.end(), z.begin() + 2 * k * dim, z.begin() + (2 * k + 2) * dim);
    CHECK(std::abs(loss_of(permuted, 2 * n, dim, 0.1) - base) <= 1e-9);

    auto scaled = z;
    const std::size_t row = rng.below(2 * n);
    const double c = rng.uniform(0.01, 100.0);
    for (std::size_t d = 0; d < dim; ++d) scaled[row * dim + d] *= c;
    CHECK(std::abs(loss_of(scaled, 2 * n, dim, 0.1) - base) <= 1e-6);
  }
}

TEST_CASE("nt_xent graph op agrees with the double evaluation") {
  Rng rng(13);
  const std::size_t rows = 6, dim = 5;
  Tensor z(Shape{rows, dim});
  for (float& v : z.span()) v = static_cast<float>(rng.uniform(-1, 1));
  const std::vector<double> zd(z.span().begin(), z.span().end());
  std::vector<double> gd(zd.size());
  const double expected = nt_xent<double>(zd, rows, dim, 0.2, gd);

  Var zv = Var::parameter(z);
  Var loss = debias::nt_xent(zv, 0.2f);
  CHECK(loss.item() == doctest::Approx(expected).epsilon(1e-6));
  backward(scale(loss, 3.0f));
  for (std::size_t i = 0; i < zd.size(); ++i) CHECK(zv.grad()[i] == doctest::Approx(3.0 * gd[i]).epsilon(1e-5));
}

TEST_CASE("interleave_rows pairs views and routes gradients back") {
  Tensor a(Shape{2, 2}, std::vector<float>{1, 2, 3, 4});
  Tensor b(Shape{2, 2}, std::vector<float>{5, 6, 7, 8});
  Var av = Var::parameter(a), bv = Var::parameter(b);
  Var z = debias::interleave_rows(av, bv);
  const std::vector<float> expected{1, 2, 5, 6, 3, 4, 7, 8};
  CHECK(std::equal(expected.begin(), expected.end(), z.value().span().begin()));
  Tensor w(Shape{4, 2}, std::vector<float>{1, 2, 3, 4, 5, 6, 7, 8});
  backward(sum(mul(z, Var(w))));
  CHECK(av.grad()[2] == 5.0f);
  CHECK(bv.grad()[0] == 3.0f);
}

TEST_CASE("nt_xent rejects malformed input") {
  std::vector<double> z{1, 0, 0, 0};
  CHECK_THROWS_AS(nt_xent<double>(z, 2, 2, 0.1), std::invalid_argument);  // zero-norm row
  std::vector<double> odd{1, 2, 3};
  CHECK_THROWS_AS(nt_xent<double>(odd, 3, 1, 0.1), std::invalid_argument);
  std::vector<double> ok{1, 2, 3, 4};
  CHECK_THROWS_AS(nt_xent<double>(ok, 2, 2, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(nt_xent<double>(ok, 2, 2, -1.0), std::invalid_argument);
}
