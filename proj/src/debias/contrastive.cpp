#include "cdvg/debias/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace cdvg::debias {

template <typename T>
double nt_xent(std::span<const T> z, std::size_t rows, std::size_t dim, double tau, std::span<T> grad) {
  if (rows == 0 || rows % 2 != 0) {
    throw std::invalid_argument("nt_xent needs an even, non-zero row count, got " + std::to_string(rows));
  }
  if (!(tau > 0.0)) throw std::invalid_argument("nt_xent temperature must be > 0");
  if (z.size() != rows * dim) throw std::invalid_argument("nt_xent: z size does not match rows x dim");

  std::vector<double> u(rows * dim), norm(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    double sq = 0.0;
    for (std::size_t d = 0; d < dim; ++d) sq += static_cast<double>(z[i * dim + d]) * z[i * dim + d];
    norm[i] = std::sqrt(sq);
    if (!(norm[i] > 0.0)) throw std::invalid_argument("nt_xent: row " + std::to_string(i) + " has zero norm");
    for (std::size_t d = 0; d < dim; ++d) u[i * dim + d] = z[i * dim + d] / norm[i];
  }
  std::vector<double> logits(rows * rows);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t k = i; k < rows; ++k) {
      double s = 0.0;
      for (std::size_t d = 0; d < dim; ++d) s += u[i * dim + d] * u[k * dim + d];
      logits[i * rows + k] = logits[k * rows + i] = s / tau;
    }
  }

  // coef[i][k] = d(loss)/d(logit_ik), zero on the diagonal.
  std::vector<double> coef(rows * rows, 0.0);
  double loss = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    const std::size_t pos = i ^ 1;
    const double* row = &logits[i * rows];
    double mx = -INFINITY;
    for (std::size_t k = 0; k < rows; ++k) {
      if (k != i) mx = std::max(mx, row[k]);
    }
    double denom = 0.0;
    for (std::size_t k = 0; k < rows; ++k) {
      if (k != i) denom += std::exp(row[k] - mx);
    }
    loss += mx + std::log(denom) - row[pos];
    for (std::size_t k = 0; k < rows; ++k) {
      if (k != i) coef[i * rows + k] = std::exp(row[k] - mx) / denom;
    }
    coef[i * rows + pos] -= 1.0;
  }

  if (!grad.empty()) {
    if (grad.size() != z.size()) throw std::invalid_argument("nt_xent: grad size mismatch");
    std::vector<double> du(dim);
    for (std::size_t i = 0; i < rows; ++i) {
      std::fill(du.begin(), du.end(), 0.0);
      for (std::size_t k = 0; k < rows; ++k) {
        const double c = (coef[i * rows + k] + coef[k * rows + i]) / tau;
        if (c == 0.0) continue;
        for (std::size_t d = 0; d < dim; ++d) du[d] += c * u[k * dim + d];
      }
      double radial = 0.0;
      for (std::size_t d = 0; d < dim; ++d) radial += du[d] * u[i * dim + d];
      for (std::size_t d = 0; d < dim; ++d) {
        grad[i * dim + d] = static_cast<T>((du[d] - radial * u[i * dim + d]) / norm[i]);
      }
    }
  }
  return loss;
}

template double nt_xent<float>(std::span<const float>, std::size_t, std::size_t, double, std::span<float>);
template double nt_xent<double>(std::span<const double>, std::size_t, std::size_t, double, std::span<double>);

Var nt_xent(const Var& z, float tau) {
  if (z.shape().size() != 2) throw std::invalid_argument("nt_xent expects [2N, d], got " + to_string(z.shape()));
  Tensor dz(z.shape());
  const double loss = nt_xent<float>(z.value().span(), z.dim(0), z.dim(1), tau, dz.span());
  return make_result(
      Tensor::scalar(static_cast<float>(loss)), {z},
      [dz](const Var& g) {
        Tensor d = dz.clone();
        const float s = g.item();
        for (float& v : d.span()) v *= s;
        return std::vector<Var>{Var(std::move(d))};
      },
      "nt_xent", false);
}

Var interleave_rows(const Var& a, const Var& b) {
  if (a.shape() != b.shape() || a.shape().size() != 2) {
    throw std::invalid_argument("interleave_rows: shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  const std::size_t n = a.dim(0), d = a.dim(1);
  Tensor out(Shape{2 * n, d});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.value().data() + i * d, d, out.data() + 2 * i * d);
    std::copy_n(b.value().data() + i * d, d, out.data() + (2 * i + 1) * d);
  }
  return make_result(
      std::move(out), {a, b},
      [n, d](const Var& g) {
        Tensor ga(Shape{n, d}), gb(Shape{n, d});
        for (std::size_t i = 0; i < n; ++i) {
          std::copy_n(g.value().data() + 2 * i * d, d, ga.data() + i * d);
          std::copy_n(g.value().data() + (2 * i + 1) * d, d, gb.data() + i * d);
        }
        return std::vector<Var>{Var(std::move(ga)), Var(std::move(gb))};
      },
      "interleave_rows", false);
}

}  // namespace cdvg::debias
