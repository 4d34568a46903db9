#include "cdvg/core/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>

#include "cdvg/core/cross_entropy.hpp"
#include "cdvg/simd/kernels.hpp"

namespace cdvg {
namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + to_string(a.shape()) +
                                " vs " + to_string(b.shape()));
  }
}

void require_rank(const Var& a, std::size_t rank, const char* op) {
  if (a.shape().size() != rank) {
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) +
                                ", got " + to_string(a.shape()));
  }
}

// Embeds x[n, c, h, w] into channels [begin, begin + c) of a zero tensor
// with `total` channels. Adjoint of slice_channels.
Var embed_channels(const Var& x, std::size_t begin, std::size_t total);

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  simd::add(out.numel(), a.value().data(), b.value().data(), out.data());
  return make_result(std::move(out), {a, b},
                     [](const Var& g) { return std::vector<Var>{g, g}; }, "add");
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  simd::sub(out.numel(), a.value().data(), b.value().data(), out.data());
  return make_result(std::move(out), {a, b},
                     [](const Var& g) { return std::vector<Var>{g, neg(g)}; }, "sub");
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  simd::mul(out.numel(), a.value().data(), b.value().data(), out.data());
  return make_result(
      std::move(out), {a, b},
      [a, b](const Var& g) { return std::vector<Var>{mul(g, b), mul(g, a)}; }, "mul");
}

Var scale(const Var& a, float factor) {
  Tensor out(a.shape());
  simd::scale(out.numel(), factor, a.value().data(), out.data());
  return make_result(
      std::move(out), {a},
      [factor](const Var& g) { return std::vector<Var>{scale(g, factor)}; }, "scale");
}

Var add_scalar(const Var& a, float value) {
  Tensor out = a.value().clone();
  for (float& v : out.span()) v += value;
  return make_result(std::move(out), {a}, [](const Var& g) { return std::vector<Var>{g}; },
                     "add_scalar");
}

Var neg(const Var& a) { return scale(a, -1.0f); }

Var reshape(const Var& a, Shape shape) {
  Shape old = a.shape();
  Tensor out = a.value().reshape(std::move(shape));
  return make_result(
      std::move(out), {a},
      [old](const Var& g) { return std::vector<Var>{reshape(g, old)}; }, "reshape");
}

Var matmul(const Var& a, const Var& b, bool trans_a, bool trans_b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = trans_a ? a.dim(1) : a.dim(0);
  const std::size_t k = trans_a ? a.dim(0) : a.dim(1);
  const std::size_t kb = trans_b ? b.dim(1) : b.dim(0);
  const std::size_t n = trans_b ? b.dim(0) : b.dim(1);
  if (k != kb) {
    throw std::invalid_argument("matmul: inner dimension mismatch " + to_string(a.shape()) +
                                (trans_a ? "^T" : "") + " x " + to_string(b.shape()) +
                                (trans_b ? "^T" : ""));
  }
  Tensor out(Shape{m, n});
  simd::GemmArgs args;
  args.trans_a = trans_a;
  args.trans_b = trans_b;
  args.m = m;
  args.n = n;
  args.k = k;
  args.a = a.value().data();
  args.lda = a.dim(1);
  args.b = b.value().data();
  args.ldb = b.dim(1);
  args.c = out.data();
  args.ldc = n;
  simd::gemm(args);
  return make_result(
      std::move(out), {a, b},
      [a, b, trans_a, trans_b](const Var& g) {
        Var da;
        Var db;
        if (a.requires_grad()) {
          da = trans_a ? matmul(b, g, trans_b, true) : matmul(g, b, false, !trans_b);
        }
        if (b.requires_grad()) {
          db = trans_b ? matmul(g, a, true, trans_a) : matmul(a, g, !trans_a, false);
        }
        return std::vector<Var>{da, db};
      },
      "matmul");
}

Var add_row_bias(const Var& x, const Var& bias) {
  require_rank(x, 2, "add_row_bias");
  const std::size_t rows = x.dim(0);
  const std::size_t cols = x.dim(1);
  if (bias.numel() != cols) throw std::invalid_argument("add_row_bias: bias size mismatch");
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    simd::add(cols, x.value().data() + r * cols, bias.value().data(), out.data() + r * cols);
  }
  return make_result(
      std::move(out), {x, bias},
      [](const Var& g) { return std::vector<Var>{g, sum_rows(g)}; }, "add_row_bias");
}

Var sum_rows(const Var& x) {
  require_rank(x, 2, "sum_rows");
  const std::size_t rows = x.dim(0);
  const std::size_t cols = x.dim(1);
  Tensor out(Shape{cols});
  for (std::size_t r = 0; r < rows; ++r) {
    simd::add(cols, out.data(), x.value().data() + r * cols, out.data());
  }
  return make_result(
      std::move(out), {x},
      [rows](const Var& g) { return std::vector<Var>{broadcast_rows(g, rows)}; }, "sum_rows");
}

Var broadcast_rows(const Var& v, std::size_t rows) {
  const std::size_t cols = v.numel();
  Tensor out(Shape{rows, cols});
  for (std::size_t r = 0; r < rows; ++r) {
    std::memcpy(out.data() + r * cols, v.value().data(), cols * sizeof(float));
  }
  Shape vshape = v.shape();
  return make_result(
      std::move(out), {v},
      [vshape](const Var& g) { return std::vector<Var>{reshape(sum_rows(g), vshape)}; },
      "broadcast_rows");
}

Var sum_cols(const Var& x) {
  require_rank(x, 2, "sum_cols");
  const std::size_t rows = x.dim(0);
  const std::size_t cols = x.dim(1);
  Tensor out(Shape{rows});
  for (std::size_t r = 0; r < rows; ++r) out[r] = simd::sum(x.value().data() + r * cols, cols);
  return make_result(
      std::move(out), {x},
      [cols](const Var& g) { return std::vector<Var>{broadcast_cols(g, cols)}; }, "sum_cols");
}

Var broadcast_cols(const Var& v, std::size_t cols) {
  const std::size_t rows = v.numel();
  Tensor out(Shape{rows, cols});
  for (std::size_t r = 0; r < rows; ++r) {
    std::fill(out.data() + r * cols, out.data() + (r + 1) * cols, v.value()[r]);
  }
  Shape vshape = v.shape();
  return make_result(
      std::move(out), {v},
      [vshape](const Var& g) { return std::vector<Var>{reshape(sum_cols(g), vshape)}; },
      "broadcast_cols");
}

Var add_channel_bias(const Var& x, const Var& bias) {
  require_rank(x, 4, "add_channel_bias");
  const std::size_t n = x.dim(0), c = x.dim(1), l = x.dim(2) * x.dim(3);
  if (bias.numel() != c) throw std::invalid_argument("add_channel_bias: bias size mismatch");
  Tensor out(x.shape());
  const float* src = x.value().data();
  float* dst = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const float b = bias.value()[ch];
      const std::size_t off = (i * c + ch) * l;
      for (std::size_t p = 0; p < l; ++p) dst[off + p] = src[off + p] + b;
    }
  }
  return make_result(
      std::move(out), {x, bias},
      [](const Var& g) { return std::vector<Var>{g, sum_channels(g)}; }, "add_channel_bias");
}

Var sum_channels(const Var& x) {
  require_rank(x, 4, "sum_channels");
  const std::size_t n = x.dim(0), c = x.dim(1), l = x.dim(2) * x.dim(3);
  Tensor out(Shape{c});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      out[ch] += simd::sum(x.value().data() + (i * c + ch) * l, l);
    }
  }
  Shape shape = x.shape();
  return make_result(
      std::move(out), {x},
      [shape](const Var& g) { return std::vector<Var>{broadcast_channels(g, shape)}; },
      "sum_channels");
}

Var broadcast_channels(const Var& v, const Shape& shape) {
  if (shape.size() != 4 || v.numel() != shape[1]) {
    throw std::invalid_argument("broadcast_channels: bad target shape " + to_string(shape));
  }
  const std::size_t n = shape[0], c = shape[1], l = shape[2] * shape[3];
  Tensor out(shape);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      float* dst = out.data() + (i * c + ch) * l;
      std::fill(dst, dst + l, v.value()[ch]);
    }
  }
  Shape vshape = v.shape();
  return make_result(
      std::move(out), {v},
      [vshape](const Var& g) { return std::vector<Var>{reshape(sum_channels(g), vshape)}; },
      "broadcast_channels");
}

Var sum(const Var& x) {
  Tensor out = Tensor::scalar(simd::sum(x.value().data(), x.numel()));
  Shape shape = x.shape();
  return make_result(
      std::move(out), {x},
      [shape](const Var& g) { return std::vector<Var>{broadcast_scalar(g, shape)}; }, "sum");
}

Var mean(const Var& x) {
  if (x.numel() == 0) throw std::invalid_argument("mean of empty tensor");
  return scale(sum(x), 1.0f / static_cast<float>(x.numel()));
}

Var broadcast_scalar(const Var& s, const Shape& shape) {
  Tensor out = Tensor::full(shape, s.item());
  Shape sshape = s.shape();
  return make_result(
      std::move(out), {s},
      [sshape](const Var& g) { return std::vector<Var>{reshape(sum(g), sshape)}; },
      "broadcast_scalar");
}

Var leaky_relu(const Var& x, float slope) {
  Tensor out(x.shape());
  simd::leaky_relu(out.numel(), x.value().data(), slope, out.data());
  Tensor ref = x.value();
  return make_result(
      std::move(out), {x},
      [ref, slope](const Var& g) { return std::vector<Var>{leaky_relu_mask(g, ref, slope)}; },
      "leaky_relu");
}

Var leaky_relu_mask(const Var& g, const Tensor& ref, float slope) {
  Tensor out(g.shape());
  simd::leaky_relu_mask(out.numel(), g.value().data(), ref.data(), slope, out.data());
  return make_result(
      std::move(out), {g},
      [ref, slope](const Var& gg) { return std::vector<Var>{leaky_relu_mask(gg, ref, slope)}; },
      "leaky_relu_mask");
}

Var tanh(const Var& x) {
  Tensor out(x.shape());
  const float* src = x.value().data();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(src[i]);
  Tensor y = out;
  return make_result(
      std::move(out), {x},
      [y](const Var& g) {
        Tensor d(g.shape());
        const float* gv = g.value().data();
        for (std::size_t i = 0; i < d.numel(); ++i) d[i] = gv[i] * (1.0f - y[i] * y[i]);
        return std::vector<Var>{Var(std::move(d))};
      },
      "tanh", false);
}

Var sqrt(const Var& x) {
  Tensor out(x.shape());
  const float* src = x.value().data();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::sqrt(src[i]);
  Tensor y = out;
  return make_result(
      std::move(out), {x},
      [y](const Var& g) {
        Tensor d(g.shape());
        const float* gv = g.value().data();
        for (std::size_t i = 0; i < d.numel(); ++i) d[i] = y[i] > 0.0f ? 0.5f * gv[i] / y[i] : 0.0f;
        return std::vector<Var>{Var(std::move(d))};
      },
      "sqrt", false);
}

Var abs(const Var& x) {
  Tensor out(x.shape());
  const float* src = x.value().data();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::fabs(src[i]);
  Tensor ref = x.value();
  return make_result(
      std::move(out), {x},
      [ref](const Var& g) {
        Tensor d(g.shape());
        const float* gv = g.value().data();
        for (std::size_t i = 0; i < d.numel(); ++i) {
          d[i] = ref[i] > 0.0f ? gv[i] : (ref[i] < 0.0f ? -gv[i] : 0.0f);
        }
        return std::vector<Var>{Var(std::move(d))};
      },
      "abs", false);
}

Var im2col(const Var& x, const ConvGeometry& geom) {
  require_rank(x, 4, "im2col");
  if (x.dim(0) != geom.batch || x.dim(1) != geom.channels || x.dim(2) != geom.height ||
      x.dim(3) != geom.width) {
    throw std::invalid_argument("im2col: input " + to_string(x.shape()) +
                                " does not match geometry");
  }
  const std::size_t oh = geom.out_height(), ow = geom.out_width();
  const std::size_t k = geom.kernel, s = geom.stride;
  const auto pad = static_cast<std::ptrdiff_t>(geom.padding);
  const std::size_t cols = geom.col_cols();
  const std::size_t plane = geom.height * geom.width;
  Tensor out(Shape{geom.col_rows(), cols});
  const float* src = x.value().data();
  float* dst = out.data();
  for (std::size_t c = 0; c < geom.channels; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        float* row = dst + ((c * k + ki) * k + kj) * cols;
        for (std::size_t n = 0; n < geom.batch; ++n) {
          const float* img = src + (n * geom.channels + c) * plane;
          float* out_n = row + n * oh * ow;
          for (std::size_t y = 0; y < oh; ++y) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * s + ki) - pad;
            float* out_row = out_n + y * ow;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(geom.height)) continue;
            const float* in_row = img + static_cast<std::size_t>(iy) * geom.width;
            for (std::size_t xo = 0; xo < ow; ++xo) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xo * s + kj) - pad;
              if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(geom.width)) {
                out_row[xo] = in_row[ix];
              }
            }
          }
        }
      }
    }
  }
  return make_result(
      std::move(out), {x},
      [geom](const Var& g) { return std::vector<Var>{col2im(g, geom)}; }, "im2col");
}

Var col2im(const Var& cols_var, const ConvGeometry& geom) {
  require_rank(cols_var, 2, "col2im");
  if (cols_var.dim(0) != geom.col_rows() || cols_var.dim(1) != geom.col_cols()) {
    throw std::invalid_argument("col2im: columns " + to_string(cols_var.shape()) +
                                " do not match geometry");
  }
  const std::size_t oh = geom.out_height(), ow = geom.out_width();
  const std::size_t k = geom.kernel, s = geom.stride;
  const auto pad = static_cast<std::ptrdiff_t>(geom.padding);
  const std::size_t cols = geom.col_cols();
  const std::size_t plane = geom.height * geom.width;
  Tensor out(Shape{geom.batch, geom.channels, geom.height, geom.width});
  const float* src = cols_var.value().data();
  float* dst = out.data();
  for (std::size_t c = 0; c < geom.channels; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        const float* row = src + ((c * k + ki) * k + kj) * cols;
        for (std::size_t n = 0; n < geom.batch; ++n) {
          float* img = dst + (n * geom.channels + c) * plane;
          const float* in_n = row + n * oh * ow;
          for (std::size_t y = 0; y < oh; ++y) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * s + ki) - pad;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(geom.height)) continue;
            float* img_row = img + static_cast<std::size_t>(iy) * geom.width;
            const float* in_row = in_n + y * ow;
            for (std::size_t xo = 0; xo < ow; ++xo) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xo * s + kj) - pad;
              if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(geom.width)) {
                img_row[ix] += in_row[xo];
              }
            }
          }
        }
      }
    }
  }
  return make_result(
      std::move(out), {cols_var},
      [geom](const Var& g) { return std::vector<Var>{im2col(g, geom)}; }, "col2im");
}

Var cn_to_nc(const Var& x, const Shape& shape) {
  require_rank(x, 2, "cn_to_nc");
  if (shape.size() != 4 || x.dim(0) != shape[1] || x.dim(1) != shape[0] * shape[2] * shape[3]) {
    throw std::invalid_argument("cn_to_nc: " + to_string(x.shape()) + " -> " + to_string(shape));
  }
  const std::size_t n = shape[0], c = shape[1], l = shape[2] * shape[3];
  Tensor out(shape);
  const float* src = x.value().data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < n; ++i) {
      std::memcpy(out.data() + (i * c + ch) * l, src + ch * n * l + i * l, l * sizeof(float));
    }
  }
  return make_result(
      std::move(out), {x}, [](const Var& g) { return std::vector<Var>{nc_to_cn(g)}; },
      "cn_to_nc");
}

Var nc_to_cn(const Var& x) {
  require_rank(x, 4, "nc_to_cn");
  const std::size_t n = x.dim(0), c = x.dim(1), l = x.dim(2) * x.dim(3);
  Tensor out(Shape{c, n * l});
  const float* src = x.value().data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < n; ++i) {
      std::memcpy(out.data() + ch * n * l + i * l, src + (i * c + ch) * l, l * sizeof(float));
    }
  }
  Shape shape = x.shape();
  return make_result(
      std::move(out), {x},
      [shape](const Var& g) { return std::vector<Var>{cn_to_nc(g, shape)}; }, "nc_to_cn");
}

Var concat_channels(const Var& a, const Var& b) {
  require_rank(a, 4, "concat_channels");
  require_rank(b, 4, "concat_channels");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw std::invalid_argument("concat_channels: " + to_string(a.shape()) + " vs " +
                                to_string(b.shape()));
  }
  const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), l = a.dim(2) * a.dim(3);
  Tensor out(Shape{n, ca + cb, a.dim(2), a.dim(3)});
  for (std::size_t i = 0; i < n; ++i) {
    std::memcpy(out.data() + i * (ca + cb) * l, a.value().data() + i * ca * l,
                ca * l * sizeof(float));
    std::memcpy(out.data() + (i * (ca + cb) + ca) * l, b.value().data() + i * cb * l,
                cb * l * sizeof(float));
  }
  return make_result(
      std::move(out), {a, b},
      [ca, cb](const Var& g) {
        return std::vector<Var>{slice_channels(g, 0, ca), slice_channels(g, ca, ca + cb)};
      },
      "concat_channels");
}

Var slice_channels(const Var& x, std::size_t begin, std::size_t end) {
  require_rank(x, 4, "slice_channels");
  if (begin >= end || end > x.dim(1)) throw std::out_of_range("slice_channels: bad range");
  const std::size_t n = x.dim(0), c = x.dim(1), l = x.dim(2) * x.dim(3), w = end - begin;
  Tensor out(Shape{n, w, x.dim(2), x.dim(3)});
  for (std::size_t i = 0; i < n; ++i) {
    std::memcpy(out.data() + i * w * l, x.value().data() + (i * c + begin) * l,
                w * l * sizeof(float));
  }
  return make_result(
      std::move(out), {x},
      [begin, c](const Var& g) { return std::vector<Var>{embed_channels(g, begin, c)}; },
      "slice_channels");
}

namespace {

Var embed_channels(const Var& x, std::size_t begin, std::size_t total) {
  const std::size_t n = x.dim(0), w = x.dim(1), l = x.dim(2) * x.dim(3);
  Tensor out(Shape{n, total, x.dim(2), x.dim(3)});
  for (std::size_t i = 0; i < n; ++i) {
    std::memcpy(out.data() + (i * total + begin) * l, x.value().data() + i * w * l,
                w * l * sizeof(float));
  }
  return make_result(
      std::move(out), {x},
      [begin, w](const Var& g) { return std::vector<Var>{slice_channels(g, begin, begin + w)}; },
      "embed_channels");
}

}  // namespace

Var instance_norm(const Var& x, const Var& gamma, const Var& beta, float eps) {
  require_rank(x, 4, "instance_norm");
  const std::size_t n = x.dim(0), c = x.dim(1), l = x.dim(2) * x.dim(3);
  if (gamma.numel() != c || beta.numel() != c) {
    throw std::invalid_argument("instance_norm: affine parameter size mismatch");
  }
  Tensor out(x.shape());
  Tensor xhat(x.shape());
  std::vector<float> inv_std(n * c);
  const float* src = x.value().data();
  for (std::size_t i = 0; i < n * c; ++i) {
    const float* p = src + i * l;
    double m = 0.0;
    for (std::size_t j = 0; j < l; ++j) m += p[j];
    m /= static_cast<double>(l);
    double v = 0.0;
    for (std::size_t j = 0; j < l; ++j) v += (p[j] - m) * (p[j] - m);
    v /= static_cast<double>(l);
    const auto is = static_cast<float>(1.0 / std::sqrt(v + eps));
    inv_std[i] = is;
    const float gm = gamma.value()[i % c];
    const float bt = beta.value()[i % c];
    for (std::size_t j = 0; j < l; ++j) {
      const float h = (p[j] - static_cast<float>(m)) * is;
      xhat[i * l + j] = h;
      out[i * l + j] = gm * h + bt;
    }
  }
  return make_result(
      std::move(out), {x, gamma, beta},
      [xhat, inv_std, gamma, n, c, l](const Var& g) {
        const float* gv = g.value().data();
        Tensor dx(g.shape());
        Tensor dgamma(Shape{c});
        Tensor dbeta(Shape{c});
        for (std::size_t i = 0; i < n * c; ++i) {
          const std::size_t ch = i % c;
          double sg = 0.0, sgx = 0.0;
          for (std::size_t j = 0; j < l; ++j) {
            sg += gv[i * l + j];
            sgx += static_cast<double>(gv[i * l + j]) * xhat[i * l + j];
          }
          dbeta[ch] += static_cast<float>(sg);
          dgamma[ch] += static_cast<float>(sgx);
          const double mg = sg / static_cast<double>(l);
          const double mgx = sgx / static_cast<double>(l);
          const double k = static_cast<double>(gamma.value()[ch]) * inv_std[i];
          for (std::size_t j = 0; j < l; ++j) {
            dx[i * l + j] = static_cast<float>(k * (gv[i * l + j] - mg - xhat[i * l + j] * mgx));
          }
        }
        return std::vector<Var>{Var(std::move(dx)), Var(std::move(dgamma)),
                                Var(std::move(dbeta))};
      },
      "instance_norm", false);
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, const BatchNormStats* use_stats,
               BatchNormStats* batch_stats, float eps) {
  if (x.shape().size() != 2 && x.shape().size() != 4) {
    throw std::invalid_argument("batch_norm: expected rank 2 or 4, got " + to_string(x.shape()));
  }
  const std::size_t n = x.dim(0), c = x.dim(1);
  const std::size_t l = x.shape().size() == 4 ? x.dim(2) * x.dim(3) : 1;
  if (gamma.numel() != c || beta.numel() != c) {
    throw std::invalid_argument("batch_norm: affine parameter size mismatch");
  }
  const std::size_t count = n * l;
  const float* src = x.value().data();
  std::vector<float> mean_c(c), var_c(c);
  if (use_stats != nullptr) {
    mean_c = use_stats->mean;
    var_c = use_stats->var;
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double m = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const float* p = src + (i * c + ch) * l;
        for (std::size_t j = 0; j < l; ++j) m += p[j];
      }
      m /= static_cast<double>(count);
      double v = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const float* p = src + (i * c + ch) * l;
        for (std::size_t j = 0; j < l; ++j) v += (p[j] - m) * (p[j] - m);
      }
      v /= static_cast<double>(count);
      mean_c[ch] = static_cast<float>(m);
      var_c[ch] = static_cast<float>(v);
    }
    if (batch_stats != nullptr) {
      batch_stats->mean = mean_c;
      batch_stats->var = var_c;
    }
  }
  std::vector<float> inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch) inv_std[ch] = 1.0f / std::sqrt(var_c[ch] + eps);

  Tensor out(x.shape());
  Tensor xhat(x.shape());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t off = (i * c + ch) * l;
      for (std::size_t j = 0; j < l; ++j) {
        const float h = (src[off + j] - mean_c[ch]) * inv_std[ch];
        xhat[off + j] = h;
        out[off + j] = gamma.value()[ch] * h + beta.value()[ch];
      }
    }
  }
  const bool fixed_stats = use_stats != nullptr;
  return make_result(
      std::move(out), {x, gamma, beta},
      [xhat, inv_std, gamma, n, c, l, count, fixed_stats](const Var& g) {
        const float* gv = g.value().data();
        std::vector<double> sg(c, 0.0), sgx(c, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t off = (i * c + ch) * l;
            for (std::size_t j = 0; j < l; ++j) {
              sg[ch] += gv[off + j];
              sgx[ch] += static_cast<double>(gv[off + j]) * xhat[off + j];
            }
          }
        }
        Tensor dx(g.shape());
        Tensor dgamma(Shape{c});
        Tensor dbeta(Shape{c});
        for (std::size_t ch = 0; ch < c; ++ch) {
          dbeta[ch] = static_cast<float>(sg[ch]);
          dgamma[ch] = static_cast<float>(sgx[ch]);
        }
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t off = (i * c + ch) * l;
            const double k = static_cast<double>(gamma.value()[ch]) * inv_std[ch];
            const double mg = sg[ch] / static_cast<double>(count);
            const double mgx = sgx[ch] / static_cast<double>(count);
            for (std::size_t j = 0; j < l; ++j) {
              dx[off + j] = fixed_stats
                                ? static_cast<float>(k * gv[off + j])
                                : static_cast<float>(k * (gv[off + j] - mg - xhat[off + j] * mgx));
            }
          }
        }
        return std::vector<Var>{Var(std::move(dx)), Var(std::move(dgamma)),
                                Var(std::move(dbeta))};
      },
      "batch_norm", false);
}

Var cross_entropy(const Var& logits, std::span<const int> labels) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t rows = logits.dim(0), classes = logits.dim(1);
  Tensor dlogits(logits.shape());
  const double loss = softmax_cross_entropy<float>(logits.value().span(), rows, classes, labels,
                                                   dlogits.span());
  return make_result(
      Tensor::scalar(static_cast<float>(loss)), {logits},
      [dlogits](const Var& g) {
        Tensor d(dlogits.shape());
        simd::scale(d.numel(), g.item(), dlogits.data(), d.data());
        return std::vector<Var>{Var(std::move(d))};
      },
      "cross_entropy", false);
}

Var global_avg_pool(const Var& x) {
  require_rank(x, 4, "global_avg_pool");
  const std::size_t n = x.dim(0), c = x.dim(1), l = x.dim(2) * x.dim(3);
  Var flat = reshape(x, Shape{n * c, l});
  return reshape(scale(sum_cols(flat), 1.0f / static_cast<float>(l)), Shape{n, c});
}

}  // namespace cdvg
