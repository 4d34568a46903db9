#pragma once

// Central finite-difference helpers shared by unit tests.

#include <cmath>
#include <functional>
#include <vector>

#include "cdvg/core/autograd.hpp"
#include "cdvg/core/rng.hpp"

namespace cdvg::testing {

inline Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (float& v : t.span()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

// Numeric gradient of scalar f with respect to every element of `target`,
// perturbing its storage in place.
inline std::vector<double> numeric_gradient(const std::function<double()>& f, Tensor target,
                                            double h = 1e-2) {
  std::vector<double> out(target.numel());
  for (std::size_t i = 0; i < target.numel(); ++i) {
    const float orig = target[i];
    target[i] = static_cast<float>(orig + h);
    const double plus = f();
    target[i] = static_cast<float>(orig - h);
    const double minus = f();
    target[i] = orig;
    out[i] = (plus - minus) / (2.0 * h);
  }
  return out;
}

// max |a - b| / max(1, |b|)
inline double max_rel_error(const Tensor& analytic, const std::vector<double>& numeric) {
  double worst = 0.0;
  for (std::size_t i = 0; i < numeric.size(); ++i) {
    const double denom = std::max(1.0, std::fabs(numeric[i]));
    worst = std::max(worst, std::fabs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

}  // namespace cdvg::testing
