#include "cdvg/core/cross_entropy.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace cdvg {

template <typename T>
double softmax_cross_entropy(std::span<const T> logits, std::size_t rows, std::size_t classes,
                             std::span<const int> labels, std::span<T> grad) {
  if (rows == 0 || classes == 0) throw std::invalid_argument("cross entropy over empty logits");
  if (logits.size() != rows * classes) {
    throw std::invalid_argument("cross entropy: logits size " + std::to_string(logits.size()) +
                                " != " + std::to_string(rows) + "x" + std::to_string(classes));
  }
  if (labels.size() != rows) {
    throw std::invalid_argument("cross entropy: " + std::to_string(labels.size()) +
                                " labels for " + std::to_string(rows) + " rows");
  }
  if (!grad.empty() && grad.size() != logits.size()) {
    throw std::invalid_argument("cross entropy: gradient buffer size mismatch");
  }
  std::vector<double> prob(classes);
  double total = 0.0;
  const double inv_rows = 1.0 / static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const int label = labels[r];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw std::out_of_range("cross entropy: label " + std::to_string(label) +
                              " outside [0, " + std::to_string(classes) + ")");
    }
    const T* row = logits.data() + r * classes;
    double peak = static_cast<double>(row[0]);
    for (std::size_t k = 1; k < classes; ++k) peak = std::max(peak, static_cast<double>(row[k]));
    double denom = 0.0;
    for (std::size_t k = 0; k < classes; ++k) {
      prob[k] = std::exp(static_cast<double>(row[k]) - peak);
      denom += prob[k];
    }
    const double log_denom = std::log(denom);
    total += log_denom - (static_cast<double>(row[label]) - peak);
    if (!grad.empty()) {
      T* grow = grad.data() + r * classes;
      for (std::size_t k = 0; k < classes; ++k) {
        const double p = prob[k] / denom;
        grow[k] = static_cast<T>((p - (static_cast<int>(k) == label ? 1.0 : 0.0)) * inv_rows);
      }
    }
  }
  return total * inv_rows;
}

template double softmax_cross_entropy<float>(std::span<const float>, std::size_t, std::size_t,
                                             std::span<const int>, std::span<float>);
template double softmax_cross_entropy<double>(std::span<const double>, std::size_t, std::size_t,
                                              std::span<const int>, std::span<double>);

}  // namespace cdvg
