#pragma once

// Differentiable tensor ops. Unless marked "first order", each backward is
// expressed with ops from this header and supports create_graph.

#include <cstddef>
#include <span>
#include <vector>

#include "cdvg/core/autograd.hpp"

namespace cdvg {

// Elementwise, identical shapes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, float factor);
Var add_scalar(const Var& a, float value);
Var neg(const Var& a);

Var reshape(const Var& a, Shape shape);

// 2-D matrix product of op(a) and op(b).
Var matmul(const Var& a, const Var& b, bool trans_a = false, bool trans_b = false);

// x[n, f] + bias[f]
Var add_row_bias(const Var& x, const Var& bias);
// [n, f] -> [f]
Var sum_rows(const Var& x);
// [f] -> [n, f]
Var broadcast_rows(const Var& v, std::size_t rows);
// [n, m] -> [n]
Var sum_cols(const Var& x);
// [n] -> [n, m]
Var broadcast_cols(const Var& v, std::size_t cols);

// x[n, c, h, w] + bias[c]
Var add_channel_bias(const Var& x, const Var& bias);
// [n, c, h, w] -> [c]
Var sum_channels(const Var& x);
// [c] -> shape (4-D, channel axis 1)
Var broadcast_channels(const Var& v, const Shape& shape);

// Reductions to a single element.
Var sum(const Var& x);
Var mean(const Var& x);
// Single-element -> shape.
Var broadcast_scalar(const Var& s, const Shape& shape);

Var leaky_relu(const Var& x, float slope);
inline Var relu(const Var& x) { return leaky_relu(x, 0.0f); }
// g where ref > 0, slope * g elsewhere; ref is treated as a constant.
Var leaky_relu_mask(const Var& g, const Tensor& ref, float slope);

// First order.
Var tanh(const Var& x);
// First order.
Var sqrt(const Var& x);
// First order; subgradient 0 at 0.
Var abs(const Var& x);
inline Var square(const Var& x) { return mul(x, x); }

struct ConvGeometry {
  std::size_t batch = 0, channels = 0, height = 0, width = 0;
  std::size_t kernel = 1, stride = 1, padding = 0;

  std::size_t out_height() const { return (height + 2 * padding - kernel) / stride + 1; }
  std::size_t out_width() const { return (width + 2 * padding - kernel) / stride + 1; }
  std::size_t col_rows() const { return channels * kernel * kernel; }
  std::size_t col_cols() const { return batch * out_height() * out_width(); }
};

// [n, c, h, w] -> [c*k*k, n*oh*ow]
Var im2col(const Var& x, const ConvGeometry& geom);
// Adjoint of im2col: [c*k*k, n*oh*ow] -> [n, c, h, w], overlapping taps summed.
Var col2im(const Var& cols, const ConvGeometry& geom);

// [c, n*l] -> [n, c, l...] with `shape` the target 4-D shape.
Var cn_to_nc(const Var& x, const Shape& shape);
// [n, c, h, w] -> [c, n*h*w]
Var nc_to_cn(const Var& x);

// Concatenates along axis 1 of 4-D tensors.
Var concat_channels(const Var& a, const Var& b);
Var slice_channels(const Var& x, std::size_t begin, std::size_t end);

// Per-sample, per-channel normalization over (h, w) with affine gamma/beta
// of shape [c]. First order.
Var instance_norm(const Var& x, const Var& gamma, const Var& beta, float eps = 1e-5f);

struct BatchNormStats {
  std::vector<float> mean;
  std::vector<float> var;  // biased
};

// Normalizes over (n, h, w) per channel (4-D) or over n per feature (2-D).
// When `use_stats` is non-null the given statistics are used (inference);
// otherwise batch statistics are computed and written to `batch_stats`.
// First order.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, const BatchNormStats* use_stats,
               BatchNormStats* batch_stats, float eps = 1e-5f);

// Mean softmax cross-entropy of logits[n, k] against integer labels. First
// order.
Var cross_entropy(const Var& logits, std::span<const int> labels);

// [n, c, h, w] -> [n, c]
Var global_avg_pool(const Var& x);

}  // namespace cdvg
