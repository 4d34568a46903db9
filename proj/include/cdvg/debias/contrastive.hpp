#pragma once

#include <cstddef>
#include <span>

#include "cdvg/core/autograd.hpp"

namespace cdvg::debias {

// NT-Xent over 2N rows of z (row-major, `dim` columns) where rows 2k and 2k+1
// are a positive pair:
//   sum_i -log( exp(sim(i, p(i)) / tau) / sum_{k != i} exp(sim(i, k) / tau) )
// with cosine similarity. Evaluated in double with max-subtraction. When
// `grad` is non-empty it receives d(loss)/dz.
// Throws std::invalid_argument on an odd or zero row count, tau <= 0 or a
// zero-norm row.
template <typename T>
double nt_xent(std::span<const T> z, std::size_t rows, std::size_t dim, double tau, std::span<T> grad = {});

extern template double nt_xent<float>(std::span<const float>, std::size_t, std::size_t, double,
                                      std::span<float>);
extern template double nt_xent<double>(std::span<const double>, std::size_t, std::size_t, double,
                                       std::span<double>);

// Graph op over z: [2N, d]. First-order only.
Var nt_xent(const Var& z, float tau);

// Rows of a and b interleaved as a0, b0, a1, b1, ...
Var interleave_rows(const Var& a, const Var& b);

}  // namespace cdvg::debias
