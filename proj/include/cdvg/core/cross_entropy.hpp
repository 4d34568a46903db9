#pragma once

#include <cstddef>
#include <span>

namespace cdvg {

// Mean over rows of -log softmax(logits[r])[labels[r]], evaluated in double
// with max-subtraction. When `grad` is non-empty it receives
// d(mean loss)/d(logits) = (softmax - onehot) / rows.
template <typename T>
double softmax_cross_entropy(std::span<const T> logits, std::size_t rows, std::size_t classes,
                             std::span<const int> labels, std::span<T> grad = {});

extern template double softmax_cross_entropy<float>(std::span<const float>, std::size_t,
                                                    std::size_t, std::span<const int>,
                                                    std::span<float>);
extern template double softmax_cross_entropy<double>(std::span<const double>, std::size_t,
                                                     std::size_t, std::span<const int>,
                                                     std::span<double>);

}  // namespace cdvg
