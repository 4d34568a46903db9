#include "cdvg/data/corruptions.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "cdvg/core/errors.hpp"
#include "cdvg/core/rng.hpp"
#include "cdvg/data/image_ops.hpp"

namespace cdvg::data {
namespace {

constexpr std::array<std::string_view, 10> kNames = {
    "snow",     "frost",   "fog",  "brightness", "contrast",
    "spatter", "elastic_transform", "jpeg_compression", "pixelate", "saturate"};

ImageF noise_plane(std::size_t h, std::size_t w, double mean, double stddev, Rng& rng) {
  ImageF plane(h, w, 1);
  for (float& v : plane.pixels) v = static_cast<float>(rng.normal(mean, stddev));
  return plane;
}

// Zoom about the image center by `factor`, keeping the size.
ImageF center_zoom(const ImageF& plane, float factor) {
  ImageF out(plane.height, plane.width, plane.channels);
  const float cy = (plane.height - 1) * 0.5f, cx = (plane.width - 1) * 0.5f;
  for (std::size_t y = 0; y < plane.height; ++y)
    for (std::size_t x = 0; x < plane.width; ++x)
      for (std::size_t c = 0; c < plane.channels; ++c)
        out.at(y, x, c) = sample_bilinear(plane, cy + (y - cy) / factor, cx + (x - cx) / factor, c,
                                          Border::clamp);
  return out;
}

// One-sided Gaussian-weighted streak along `angle_deg`.
ImageF motion_blur(const ImageF& plane, int radius, float sigma, float angle_deg) {
  const float a = angle_deg * std::numbers::pi_v<float> / 180.0f;
  const float dy = std::sin(a), dx = std::cos(a);
  std::vector<float> weights(radius + 1);
  float total = 0.0f;
  for (int i = 0; i <= radius; ++i) {
    weights[i] = std::exp(-0.5f * i * i / (sigma * sigma));
    total += weights[i];
  }
  ImageF out(plane.height, plane.width, plane.channels);
  for (std::size_t y = 0; y < plane.height; ++y)
    for (std::size_t x = 0; x < plane.width; ++x)
      for (std::size_t c = 0; c < plane.channels; ++c) {
        float acc = 0.0f;
        for (int i = 0; i <= radius; ++i) {
          acc += weights[i] * sample_bilinear(plane, y + i * dy, x + i * dx, c, Border::zero);
        }
        out.at(y, x, c) = acc / total;
      }
  return out;
}

// Diamond-square fractal on a power-of-two grid, normalized to [0, 1].
std::vector<double> plasma_fractal(std::size_t size, double decay, Rng& rng) {
  std::vector<double> map(size * size, 0.0);
  auto at = [&](std::size_t y, std::size_t x) -> double& {
    return map[(y % size) * size + (x % size)];
  };
  double wibble = 100.0;
  for (std::size_t step = size; step >= 2; step /= 2) {
    const std::size_t half = step / 2;
    auto wibbled = [&](double sum) { return sum / 4.0 + wibble * rng.uniform(-wibble, wibble); };
    for (std::size_t y = 0; y < size; y += step)
      for (std::size_t x = 0; x < size; x += step)
        at(y + half, x + half) =
            wibbled(at(y, x) + at(y + step, x) + at(y, x + step) + at(y + step, x + step));
    for (std::size_t y = 0; y < size; y += step)
      for (std::size_t x = 0; x < size; x += step) {
        const double up = at(y, x) + at(y, x + step);
        const double down = at(y + half, x + half) + at(y + size - half, x + half);
        at(y, x + half) = wibbled(up + down);
        const double left = at(y, x) + at(y + step, x);
        const double right = at(y + half, x + half) + at(y + half, x + size - half);
        at(y + half, x) = wibbled(left + right);
      }
    wibble /= decay;
  }
  const auto [mn, mx] = std::minmax_element(map.begin(), map.end());
  const double lo = *mn, range = std::max(*mx - *mn, 1e-12);
  for (double& v : map) v = (v - lo) / range;
  return map;
}

// Ice-crystal texture: branching random walks over faint grain, slightly
// blue-tinted.
ImageF frost_texture(std::size_t h, std::size_t w, Rng& rng) {
  ImageF plane(h, w, 1);
  for (float& v : plane.pixels) v = static_cast<float>(0.25 + 0.1 * rng.uniform());
  const int branches = static_cast<int>(h * w / 48);
  for (int b = 0; b < branches; ++b) {
    double y = rng.uniform(0.0, static_cast<double>(h)), x = rng.uniform(0.0, static_cast<double>(w));
    double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const int length = 4 + static_cast<int>(rng.below(10));
    const float brightness = static_cast<float>(rng.uniform(0.5, 1.0));
    for (int s = 0; s < length; ++s) {
      const auto iy = static_cast<long>(y), ix = static_cast<long>(x);
      if (iy >= 0 && ix >= 0 && iy < static_cast<long>(h) && ix < static_cast<long>(w)) {
        float& p = plane.at(iy, ix, 0);
        p = std::max(p, brightness);
      }
      angle += rng.uniform(-0.5, 0.5);
      y += std::sin(angle);
      x += std::cos(angle);
    }
  }
  plane = gaussian_blur(plane, 0.5f);
  ImageF out(h, w, 3);
  const float tint[3] = {0.85f, 0.92f, 1.0f};
  for (std::size_t i = 0; i < h * w; ++i)
    for (int c = 0; c < 3; ++c) out.pixels[i * 3 + c] = plane.pixels[i] * tint[c];
  return out;
}

void map_hsv(ImageF& image, auto&& fn) {
  for (std::size_t i = 0; i < image.height * image.width; ++i) {
    float* p = &image.pixels[i * 3];
    auto hsv = rgb_to_hsv(p[0], p[1], p[2]);
    fn(hsv);
    const auto rgb = hsv_to_rgb(hsv[0], hsv[1], hsv[2]);
    std::copy(rgb.begin(), rgb.end(), p);
  }
}

ImageF snow(const ImageF& x, int s, Rng& rng) {
  struct P { double loc, scale; float zoom, threshold; int radius; float sigma, blend; };
  constexpr P table[5] = {{0.1, 0.2, 1.0f, 0.6f, 8, 3.0f, 0.95f},
                          {0.1, 0.2, 1.0f, 0.5f, 10, 4.0f, 0.9f},
                          {0.15, 0.3, 1.75f, 0.55f, 10, 4.0f, 0.9f},
                          {0.25, 0.3, 2.25f, 0.6f, 12, 6.0f, 0.85f},
                          {0.3, 0.3, 1.25f, 0.65f, 14, 12.0f, 0.8f}};
  const P& c = table[s - 1];
  ImageF layer = center_zoom(noise_plane(x.height, x.width, c.loc, c.scale, rng), c.zoom);
  for (float& v : layer.pixels) v = v < c.threshold ? 0.0f : std::min(v, 1.0f);
  layer = motion_blur(layer, c.radius, c.sigma, static_cast<float>(rng.uniform(-135.0, -45.0)));
  const ImageF gray = to_gray(x);
  ImageF out = x;
  const std::size_t h = x.height, w = x.width;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t xx = 0; xx < w; ++xx) {
      const float flake = layer.at(y, xx, 0) + layer.at(h - 1 - y, w - 1 - xx, 0);
      for (std::size_t ch = 0; ch < x.channels; ++ch) {
        const float v = x.at(y, xx, ch);
        const float lifted = std::max(v, gray.at(y, xx, 0) * 1.5f + 0.5f);
        out.at(y, xx, ch) = c.blend * v + (1 - c.blend) * lifted + flake;
      }
    }
  return out;
}

ImageF frost(const ImageF& x, int s, Rng& rng) {
  constexpr float table[5][2] = {{1.0f, 0.2f}, {1.0f, 0.3f}, {0.9f, 0.4f}, {0.85f, 0.4f}, {0.75f, 0.45f}};
  const ImageF tex = frost_texture(x.height, x.width, rng);
  ImageF out = x;
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    out.pixels[i] = table[s - 1][0] * x.pixels[i] + table[s - 1][1] * tex.pixels[i % tex.pixels.size()];
  }
  return out;
}

ImageF fog(const ImageF& x, int s, Rng& rng) {
  constexpr double table[5][2] = {{0.2, 3.0}, {0.5, 3.0}, {0.75, 2.5}, {1.0, 2.0}, {1.5, 1.75}};
  const double strength = table[s - 1][0];
  std::size_t size = 2;
  while (size < std::max(x.height, x.width)) size *= 2;
  const auto fractal = plasma_fractal(size, table[s - 1][1], rng);
  const float max_val = *std::max_element(x.pixels.begin(), x.pixels.end());
  ImageF out = x;
  for (std::size_t y = 0; y < x.height; ++y)
    for (std::size_t xx = 0; xx < x.width; ++xx)
      for (std::size_t c = 0; c < x.channels; ++c) {
        const double v = x.at(y, xx, c) + strength * fractal[y * size + xx];
        out.at(y, xx, c) = static_cast<float>(v * max_val / (max_val + strength));
      }
  return out;
}

ImageF brightness(const ImageF& x, int s) {
  constexpr float table[5] = {0.05f, 0.1f, 0.15f, 0.2f, 0.3f};
  ImageF out = x;
  map_hsv(out, [&](std::array<float, 3>& hsv) { hsv[2] = std::clamp(hsv[2] + table[s - 1], 0.0f, 1.0f); });
  return out;
}

ImageF contrast(const ImageF& x, int s) {
  constexpr float table[5] = {0.75f, 0.5f, 0.4f, 0.3f, 0.15f};
  ImageF out = x;
  const std::size_t n = x.height * x.width;
  for (std::size_t c = 0; c < x.channels; ++c) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += x.pixels[i * x.channels + c];
    mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      float& v = out.pixels[i * x.channels + c];
      v = static_cast<float>((v - mean) * table[s - 1] + mean);
    }
  }
  return out;
}

ImageF spatter(const ImageF& x, int s, Rng& rng) {
  struct P { double loc, scale; float sigma, threshold, intensity; bool mud; };
  constexpr P table[5] = {{0.62, 0.1, 0.7f, 0.7f, 0.5f, false},
                          {0.65, 0.1, 0.8f, 0.7f, 0.5f, false},
                          {0.65, 0.3, 1.0f, 0.69f, 0.5f, false},
                          {0.65, 0.1, 0.7f, 0.69f, 0.6f, true},
                          {0.65, 0.1, 0.5f, 0.68f, 0.6f, true}};
  const P& c = table[s - 1];
  ImageF liquid = gaussian_blur(noise_plane(x.height, x.width, c.loc, c.scale, rng), c.sigma);
  ImageF out = x;
  if (c.mud) {
    ImageF mask(x.height, x.width, 1);
    for (std::size_t i = 0; i < mask.pixels.size(); ++i) mask.pixels[i] = liquid.pixels[i] > c.threshold ? 1.0f : 0.0f;
    mask = gaussian_blur(mask, c.intensity);
    constexpr float mud[3] = {63 / 255.0f, 42 / 255.0f, 20 / 255.0f};
    for (std::size_t i = 0; i < mask.pixels.size(); ++i) {
      const float m = mask.pixels[i] < 0.8f ? 0.0f : mask.pixels[i];
      for (std::size_t ch = 0; ch < x.channels; ++ch) {
        float& v = out.pixels[i * x.channels + ch];
        v = v * (1 - m) + mud[ch % 3] * m;
      }
    }
    return out;
  }
  // Water droplets: thresholded blobs shaded with a directional emboss.
  for (float& v : liquid.pixels) v = v < c.threshold ? 0.0f : v;
  ImageF shade(x.height, x.width, 1);
  constexpr float emboss[3][3] = {{-2, -1, 0}, {-1, 1, 1}, {0, 1, 2}};
  for (std::size_t y = 0; y < x.height; ++y)
    for (std::size_t xx = 0; xx < x.width; ++xx) {
      float acc = 0.0f;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          acc += emboss[dy + 1][dx + 1] *
                 sample_bilinear(liquid, static_cast<float>(y) + dy, static_cast<float>(xx) + dx, 0, Border::reflect);
      shade.at(y, xx, 0) = std::max(acc, 0.0f) * liquid.at(y, xx, 0);
    }
  shade = gaussian_blur(shade, 0.5f);
  const float peak = std::max(*std::max_element(shade.pixels.begin(), shade.pixels.end()), 1e-6f);
  constexpr float water[3] = {238 / 255.0f, 238 / 255.0f, 175 / 255.0f};
  for (std::size_t i = 0; i < shade.pixels.size(); ++i) {
    const float m = shade.pixels[i] / peak * c.intensity;
    for (std::size_t ch = 0; ch < x.channels; ++ch) out.pixels[i * x.channels + ch] += m * water[ch % 3];
  }
  return out;
}

ImageF elastic(const ImageF& x, int s, Rng& rng) {
  const float size = static_cast<float>(std::min(x.height, x.width));
  constexpr float table[5][3] = {{0.0f, 0.0f, 0.08f}, {0.05f, 0.2f, 0.07f}, {0.08f, 0.06f, 0.06f},
                                 {0.1f, 0.04f, 0.05f}, {0.1f, 0.03f, 0.03f}};
  const float alpha = table[s - 1][0] * size, sigma = table[s - 1][1] * size;
  const float jitter = table[s - 1][2] * size;

  // Random affine fixed by three jittered control points.
  const float cy = x.height / 2.0f, cx = x.width / 2.0f, sq = size / 3.0f;
  const float src[3][2] = {{cx + sq, cy + sq}, {cx + sq, cy - sq}, {cx - sq, cy - sq}};
  float dst[3][2];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) dst[i][j] = src[i][j] + static_cast<float>(rng.uniform(-jitter, jitter));
  // Solve the inverse map dst -> src so each output pixel pulls from the input.
  const double ax = dst[1][0] - dst[0][0], ay = dst[1][1] - dst[0][1];
  const double bx = dst[2][0] - dst[0][0], by = dst[2][1] - dst[0][1];
  const double det = ax * by - bx * ay;
  auto inverse = [&](double px, double py, double& sx, double& sy) {
    const double rx = px - dst[0][0], ry = py - dst[0][1];
    const double u = (rx * by - bx * ry) / det, v = (ax * ry - rx * ay) / det;
    sx = src[0][0] + u * (src[1][0] - src[0][0]) + v * (src[2][0] - src[0][0]);
    sy = src[0][1] + u * (src[1][1] - src[0][1]) + v * (src[2][1] - src[0][1]);
  };
  ImageF warped(x.height, x.width, x.channels);
  for (std::size_t y = 0; y < x.height; ++y)
    for (std::size_t xx = 0; xx < x.width; ++xx) {
      double sx, sy;
      inverse(static_cast<double>(xx), static_cast<double>(y), sx, sy);
      for (std::size_t c = 0; c < x.channels; ++c)
        warped.at(y, xx, c) = sample_bilinear(x, static_cast<float>(sy), static_cast<float>(sx), c, Border::reflect101);
    }

  ImageF ux(x.height, x.width, 1), uy(x.height, x.width, 1);
  for (float& v : ux.pixels) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  for (float& v : uy.pixels) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  if (sigma > 0.0f) {
    ux = gaussian_blur(ux, sigma);
    uy = gaussian_blur(uy, sigma);
  }
  ImageF out(x.height, x.width, x.channels);
  for (std::size_t y = 0; y < x.height; ++y)
    for (std::size_t xx = 0; xx < x.width; ++xx) {
      const float sy = y + alpha * uy.at(y, xx, 0), sx = xx + alpha * ux.at(y, xx, 0);
      for (std::size_t c = 0; c < x.channels; ++c)
        out.at(y, xx, c) = sample_bilinear(warped, sy, sx, c, Border::reflect);
    }
  return out;
}

ImageF jpeg(const ImageF& x, int s) {
  const Image8 encoded = to_u8(x);
  return to_float(decode_jpeg(encode_jpeg(encoded, jpeg_quality(s))));
}

ImageF pixelate(const ImageF& x, int s) {
  constexpr float table[5] = {0.95f, 0.9f, 0.85f, 0.75f, 0.65f};
  const auto h = std::max<std::size_t>(1, static_cast<std::size_t>(x.height * table[s - 1]));
  const auto w = std::max<std::size_t>(1, static_cast<std::size_t>(x.width * table[s - 1]));
  return resize_box(resize_box(x, h, w), x.height, x.width);
}

ImageF saturate(const ImageF& x, int s) {
  constexpr float table[5][2] = {{0.3f, 0.0f}, {0.1f, 0.0f}, {2.0f, 0.0f}, {5.0f, 0.1f}, {20.0f, 0.2f}};
  ImageF out = x;
  map_hsv(out, [&](std::array<float, 3>& hsv) {
    hsv[1] = std::clamp(hsv[1] * table[s - 1][0] + table[s - 1][1], 0.0f, 1.0f);
  });
  return out;
}

}  // namespace

std::string_view corruption_name(Corruption corruption) {
  return kNames[static_cast<std::size_t>(corruption)];
}

Corruption parse_corruption(std::string_view name) {
  for (std::size_t i = 0; i < kNames.size(); ++i) {
    if (kNames[i] == name) return static_cast<Corruption>(i);
  }
  throw ConfigError("unknown corruption '" + std::string(name) + "'");
}

int jpeg_quality(int severity) {
  constexpr int table[5] = {80, 65, 58, 50, 40};
  if (severity < 1 || severity > 5) throw ConfigError("severity must be in 1..5");
  return table[severity - 1];
}

ImageF apply_corruption(const ImageF& image, Corruption corruption, int severity, std::uint64_t seed) {
  if (severity < 1 || severity > 5) {
    throw ConfigError("corruption severity must be in 1..5, got " + std::to_string(severity));
  }
  if (image.channels != 3) throw ConfigError("corruptions expect RGB images");
  Rng rng(seed);
  ImageF out;
  switch (corruption) {
    case Corruption::snow: out = snow(image, severity, rng); break;
    case Corruption::frost: out = frost(image, severity, rng); break;
    case Corruption::fog: out = fog(image, severity, rng); break;
    case Corruption::brightness: out = brightness(image, severity); break;
    case Corruption::contrast: out = contrast(image, severity); break;
    case Corruption::spatter: out = spatter(image, severity, rng); break;
    case Corruption::elastic_transform: out = elastic(image, severity, rng); break;
    case Corruption::jpeg_compression: out = jpeg(image, severity); break;
    case Corruption::pixelate: out = pixelate(image, severity); break;
    case Corruption::saturate: out = saturate(image, severity); break;
  }
  clip01(out);
  return out;
}

}  // namespace cdvg::data
