#include "cdvg/data/image_ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cdvg::data {
namespace {

// Maps an out-of-range index into [0, n) or returns -1 for zero padding.
long resolve(long i, long n, Border border) {
  if (i >= 0 && i < n) return i;
  if (n == 1) return border == Border::zero ? -1 : 0;
  switch (border) {
    case Border::clamp: return std::clamp(i, 0L, n - 1);
    case Border::zero: return -1;
    case Border::reflect: {
      const long period = 2 * n;
      long m = ((i % period) + period) % period;
      return m < n ? m : period - 1 - m;
    }
    case Border::reflect101: {
      const long period = 2 * n - 2;
      long m = ((i % period) + period) % period;
      return m < n ? m : period - m;
    }
  }
  return -1;
}

float fetch(const ImageF& image, long y, long x, std::size_t c, Border border) {
  const long ry = resolve(y, static_cast<long>(image.height), border);
  const long rx = resolve(x, static_cast<long>(image.width), border);
  if (ry < 0 || rx < 0) return 0.0f;
  return image.at(static_cast<std::size_t>(ry), static_cast<std::size_t>(rx), c);
}

}  // namespace

float sample_bilinear(const ImageF& image, float y, float x, std::size_t channel, Border border) {
  const float fy = std::floor(y), fx = std::floor(x);
  const float wy = y - fy, wx = x - fx;
  const long y0 = static_cast<long>(fy), x0 = static_cast<long>(fx);
  const float v00 = fetch(image, y0, x0, channel, border);
  const float v01 = fetch(image, y0, x0 + 1, channel, border);
  const float v10 = fetch(image, y0 + 1, x0, channel, border);
  const float v11 = fetch(image, y0 + 1, x0 + 1, channel, border);
  return (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11);
}

ImageF gaussian_blur(const ImageF& image, float sigma, Border border) {
  if (sigma <= 0.0f) return image;
  const long radius = static_cast<long>(4.0f * sigma + 0.5f);
  std::vector<float> kernel(2 * radius + 1);
  double total = 0.0;
  for (long i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5f * static_cast<float>(i * i) / (sigma * sigma));
    total += kernel[i + radius];
  }
  for (float& k : kernel) k = static_cast<float>(k / total);

  ImageF tmp(image.height, image.width, image.channels);
  ImageF out(image.height, image.width, image.channels);
  const long h = static_cast<long>(image.height), w = static_cast<long>(image.width);
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x)
      for (std::size_t c = 0; c < image.channels; ++c) {
        float acc = 0.0f;
        for (long i = -radius; i <= radius; ++i) acc += kernel[i + radius] * fetch(image, y, x + i, c, border);
        tmp.at(y, x, c) = acc;
      }
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x)
      for (std::size_t c = 0; c < image.channels; ++c) {
        float acc = 0.0f;
        for (long i = -radius; i <= radius; ++i) acc += kernel[i + radius] * fetch(tmp, y + i, x, c, border);
        out.at(y, x, c) = acc;
      }
  return out;
}

ImageF resize_box(const ImageF& image, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) throw std::invalid_argument("resize_box: empty target");
  ImageF out(height, width, image.channels);
  const double sy = static_cast<double>(image.height) / height;
  const double sx = static_cast<double>(image.width) / width;
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      for (std::size_t c = 0; c < image.channels; ++c) {
        if (sy <= 1.0 && sx <= 1.0) {
          const auto iy = std::min(image.height - 1, static_cast<std::size_t>((y + 0.5) * sy));
          const auto ix = std::min(image.width - 1, static_cast<std::size_t>((x + 0.5) * sx));
          out.at(y, x, c) = image.at(iy, ix, c);
          continue;
        }
        const double y0 = y * sy, y1 = (y + 1) * sy;
        const double x0 = x * sx, x1 = (x + 1) * sx;
        double acc = 0.0, area = 0.0;
        for (auto iy = static_cast<std::size_t>(y0); iy < image.height && iy < y1; ++iy) {
          const double cy = std::min<double>(iy + 1, y1) - std::max<double>(iy, y0);
          for (auto ix = static_cast<std::size_t>(x0); ix < image.width && ix < x1; ++ix) {
            const double cx = std::min<double>(ix + 1, x1) - std::max<double>(ix, x0);
            acc += cy * cx * image.at(iy, ix, c);
            area += cy * cx;
          }
        }
        out.at(y, x, c) = static_cast<float>(acc / area);
      }
    }
  }
  return out;
}

ImageF resize_bilinear(const ImageF& image, std::size_t height, std::size_t width) {
  return crop_resize(image, 0.0f, 0.0f, static_cast<float>(image.height),
                     static_cast<float>(image.width), height, width);
}

ImageF crop_resize(const ImageF& image, float top, float left, float h, float w,
                   std::size_t out_h, std::size_t out_w) {
  ImageF out(out_h, out_w, image.channels);
  const float sy = h / static_cast<float>(out_h), sx = w / static_cast<float>(out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const float src_y = top + (y + 0.5f) * sy - 0.5f;
    for (std::size_t x = 0; x < out_w; ++x) {
      const float src_x = left + (x + 0.5f) * sx - 0.5f;
      for (std::size_t c = 0; c < image.channels; ++c) {
        out.at(y, x, c) = sample_bilinear(image, src_y, src_x, c, Border::clamp);
      }
    }
  }
  return out;
}

std::array<float, 3> rgb_to_hsv(float r, float g, float b) {
  const float mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const float delta = mx - mn;
  float h = 0.0f;
  if (delta > 0.0f) {
    if (mx == r) h = (g - b) / delta;
    else if (mx == g) h = 2.0f + (b - r) / delta;
    else h = 4.0f + (r - g) / delta;
    h /= 6.0f;
    if (h < 0.0f) h += 1.0f;
  }
  const float s = mx > 0.0f ? delta / mx : 0.0f;
  return {h, s, mx};
}

std::array<float, 3> hsv_to_rgb(float h, float s, float v) {
  const float h6 = (h - std::floor(h)) * 6.0f;
  const int i = static_cast<int>(h6) % 6;
  const float f = h6 - std::floor(h6);
  const float p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

ImageF to_gray(const ImageF& image) {
  ImageF out(image.height, image.width, 1);
  for (std::size_t i = 0; i < image.height * image.width; ++i) {
    const float* p = &image.pixels[i * image.channels];
    out.pixels[i] = image.channels >= 3 ? 0.299f * p[0] + 0.587f * p[1] + 0.114f * p[2] : p[0];
  }
  return out;
}

void clip01(ImageF& image) {
  for (float& v : image.pixels) v = std::clamp(v, 0.0f, 1.0f);
}

}  // namespace cdvg::data
