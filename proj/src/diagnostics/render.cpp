#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>

#include "cdvg/core/errors.hpp"
#include "cdvg/data/batch.hpp"
#include "cdvg/diagnostics/diagnostics.hpp"

namespace cdvg::diagnostics {

namespace {

using Color = std::array<std::uint8_t, 3>;
constexpr Color kBlack{0, 0, 0};
constexpr Color kGrey{200, 200, 200};
constexpr Color kBiasColor{214, 39, 40};
constexpr Color kSignalColor{31, 119, 180};

// 5x7 glyphs, one byte per row, bit 4 leftmost.
using Glyph = std::array<std::uint8_t, 7>;

Glyph glyph(char ch) {
  switch (ch) {
    case '0': return {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E};
    case '1': return {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E};
    case '2': return {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F};
    case '3': return {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E};
    case '4': return {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02};
    case '5': return {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E};
    case '6': return {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E};
    case '7': return {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08};
    case '8': return {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E};
    case '9': return {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C};
    case 'A': return {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11};
    case 'B': return {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E};
    case 'C': return {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E};
    case 'D': return {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C};
    case 'E': return {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F};
    case 'F': return {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10};
    case 'G': return {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F};
    case 'H': return {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11};
    case 'I': return {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E};
    case 'J': return {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C};
    case 'K': return {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11};
    case 'L': return {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F};
    case 'M': return {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11};
    case 'N': return {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11};
    case 'O': return {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E};
    case 'P': return {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10};
    case 'Q': return {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D};
    case 'R': return {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11};
    case 'S': return {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E};
    case 'T': return {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04};
    case 'U': return {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E};
    case 'V': return {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04};
    case 'W': return {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A};
    case 'X': return {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11};
    case 'Y': return {0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04};
    case 'Z': return {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F};
    case '.': return {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C};
    case '-': return {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00};
    case '_': return {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F};
    case '(': return {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02};
    case ')': return {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08};
    case ',': return {0x00, 0x00, 0x00, 0x00, 0x0C, 0x04, 0x08};
    case '\'': return {0x04, 0x04, 0x08, 0x00, 0x00, 0x00, 0x00};
    default: return {};
  }
}

class Canvas {
 public:
  Canvas(std::size_t w, std::size_t h) : image_(h, w, 3, 255) {}

  void set(long x, long y, Color c) {
    if (x < 0 || y < 0 || x >= static_cast<long>(image_.width) || y >= static_cast<long>(image_.height)) return;
    for (std::size_t k = 0; k < 3; ++k) image_.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), k) = c[k];
  }

  void rect(long x0, long y0, long x1, long y1, Color c) {
    for (long y = y0; y <= y1; ++y) {
      for (long x = x0; x <= x1; ++x) set(x, y, c);
    }
  }

  // Bresenham with a square pen.
  void line(long x0, long y0, long x1, long y1, Color c, long pen = 1) {
    const long dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const long sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    long err = dx + dy;
    while (true) {
      rect(x0 - pen / 2, y0 - pen / 2, x0 + (pen - 1) / 2, y0 + (pen - 1) / 2, c);
      if (x0 == x1 && y0 == y1) break;
      const long e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }

  void text(long x, long y, const std::string& s, Color c) {
    for (char ch : s) {
      const Glyph g = glyph(static_cast<char>(std::toupper(static_cast<unsigned char>(ch))));
      for (long r = 0; r < 7; ++r) {
        for (long b = 0; b < 5; ++b) {
          if (g[static_cast<std::size_t>(r)] & (0x10 >> b)) set(x + b, y + r, c);
        }
      }
      x += 6;
    }
  }

  static long text_width(const std::string& s) { return static_cast<long>(s.size()) * 6 - 1; }

  data::Image8 take() { return std::move(image_); }

 private:
  data::Image8 image_;
};

std::string format_tick(double v) {
  char buf[32];
  if (std::abs(v - std::round(v)) < 1e-9 && std::abs(v) >= 10) {
    std::snprintf(buf, sizeof buf, "%.0f", v);
  } else {
    std::snprintf(buf, sizeof buf, "%.1f", v);
  }
  return buf;
}

std::uint8_t to_byte(float v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)); }

}  // namespace

data::Image8 render_probe_chart(const ProbeCurve& curve) {
  curve.validate();
  constexpr long kWidth = 640, kHeight = 400;
  constexpr long kLeft = 60, kRight = 620, kTop = 40, kBottom = 350;
  Canvas canvas(kWidth, kHeight);

  double x_max = 1.0, y_max = 1.0;
  for (const auto& p : curve.points) {
    x_max = std::max(x_max, static_cast<double>(p.iteration));
    y_max = std::max({y_max, p.bias_loss, p.signal_loss});
  }
  y_max = std::ceil(y_max * 1.1 * 2.0) / 2.0;
  const auto px = [&](double it) { return kLeft + std::lround(it / x_max * (kRight - kLeft)); };
  const auto py = [&](double v) { return kBottom - std::lround(std::max(v, 0.0) / y_max * (kBottom - kTop)); };

  for (int t = 0; t <= 5; ++t) {
    const double yv = y_max * t / 5.0;
    const long y = py(yv);
    canvas.line(kLeft, y, kRight, y, kGrey);
    const std::string label = format_tick(yv);
    canvas.text(kLeft - 6 - Canvas::text_width(label), y - 3, label, kBlack);
    const double xv = x_max * t / 5.0;
    const long x = px(xv);
    canvas.line(x, kBottom, x, kBottom + 4, kBlack);
    const std::string xl = format_tick(std::round(xv));
    canvas.text(x - Canvas::text_width(xl) / 2, kBottom + 8, xl, kBlack);
  }
  canvas.line(kLeft, kTop, kLeft, kBottom, kBlack);
  canvas.line(kLeft, kBottom, kRight, kBottom, kBlack);
  canvas.text((kLeft + kRight) / 2 - Canvas::text_width("ITERATION") / 2, kBottom + 24, "ITERATION", kBlack);
  canvas.text(kLeft, kTop - 28, "ORACLE CE LOSS ON G(X, Y')", kBlack);

  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    const auto& a = curve.points[i - 1];
    const auto& b = curve.points[i];
    canvas.line(px(a.iteration), py(a.bias_loss), px(b.iteration), py(b.bias_loss), kBiasColor, 2);
    canvas.line(px(a.iteration), py(a.signal_loss), px(b.iteration), py(b.signal_loss), kSignalColor, 2);
  }
  for (const auto& p : curve.points) {
    canvas.rect(px(p.iteration) - 2, py(p.bias_loss) - 2, px(p.iteration) + 2, py(p.bias_loss) + 2, kBiasColor);
    canvas.rect(px(p.iteration) - 2, py(p.signal_loss) - 2, px(p.iteration) + 2, py(p.signal_loss) + 2,
                kSignalColor);
  }

  const long lx = kRight - 110, ly = kTop + 8;
  canvas.rect(lx, ly, lx + 16, ly + 2, kBiasColor);
  canvas.text(lx + 22, ly - 2, "BIAS_LOSS", kBlack);
  canvas.rect(lx, ly + 14, lx + 16, ly + 16, kSignalColor);
  canvas.text(lx + 22, ly + 12, "SIGNAL_LOSS", kBlack);
  return canvas.take();
}

data::Image8 transformation_grid(const translator::Translator& g, const Tensor& samples, std::size_t pad) {
  if (samples.rank() != 4) throw ConfigError("grid samples must be [n, c, h, w]");
  const std::size_t n = samples.dim(0), c = samples.dim(1), h = samples.dim(2), w = samples.dim(3);
  const std::size_t k = g.num_domains();
  if (c != 1 && c != 3) throw ConfigError("grid samples need 1 or 3 channels");
  data::Image8 grid(n * h + (n + 1) * pad, (k + 1) * w + (k + 2) * pad, c, 255);

  const auto blit = [&](const Tensor& batch, std::size_t column) {
    const std::size_t x0 = pad + column * (w + pad);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t y0 = pad + i * (h + pad);
      const float* img = batch.data() + i * c * h * w;
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          for (std::size_t ch = 0; ch < c; ++ch) grid.at(y0 + y, x0 + x, ch) = to_byte(img[(ch * h + y) * w + x]);
        }
      }
    }
  };

  blit(samples, 0);
  Tensor signed_x = samples.clone();
  data::to_signed_unit(signed_x);
  for (std::size_t j = 0; j < k; ++j) {
    const std::vector<int> targets(n, static_cast<int>(j));
    Tensor out = g.translate(signed_x, targets).clone();
    data::to_unit(out);
    blit(out, j + 1);
  }
  return grid;
}

void render_transformation_grid(const translator::Translator& g, const Tensor& samples,
                                const std::filesystem::path& out_path) {
  if (out_path.has_parent_path()) std::filesystem::create_directories(out_path.parent_path());
  data::write_png(out_path, transformation_grid(g, samples));
}

int decode_palette(std::span<const float> chw, std::size_t height, std::size_t width,
                   const std::vector<data::Rgb>& palette) {
  const std::size_t plane = height * width;
  if (chw.size() != 3 * plane) throw ConfigError("palette decoding needs an RGB image");
  for (const float threshold : {0.5f, 0.1f}) {
    std::array<double, 3> total{};
    std::size_t count = 0;
    for (std::size_t p = 0; p < plane; ++p) {
      const float m = std::max({chw[p], chw[plane + p], chw[2 * plane + p]});
      if (m <= threshold) continue;
      for (std::size_t c = 0; c < 3; ++c) total[c] += chw[c * plane + p];
      ++count;
    }
    if (count == 0) continue;
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t e = 0; e < palette.size(); ++e) {
      double d = 0.0;
      for (std::size_t c = 0; c < 3; ++c) {
        const double diff = total[c] / static_cast<double>(count) * 255.0 - palette[e][c];
        d += diff * diff;
      }
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(e);
      }
    }
    return best;
  }
  return -1;
}

double palette_decode_rate(const translator::Translator& g, const Tensor& samples,
                           const std::vector<data::Rgb>& palette) {
  if (samples.rank() != 4 || samples.dim(1) != 3) throw ConfigError("palette decoding needs [n, 3, h, w] samples");
  const std::size_t n = samples.dim(0), h = samples.dim(2), w = samples.dim(3), k = g.num_domains();
  if (palette.size() < k) throw ConfigError("palette has fewer entries than the generator has domains");
  Tensor signed_x = samples.clone();
  data::to_signed_unit(signed_x);
  std::size_t hits = 0;
  for (std::size_t j = 0; j < k; ++j) {
    const std::vector<int> targets(n, static_cast<int>(j));
    Tensor out = g.translate(signed_x, targets).clone();
    data::to_unit(out);
    for (std::size_t i = 0; i < n; ++i) {
      const auto img = out.span().subspan(i * 3 * h * w, 3 * h * w);
      hits += decode_palette(img, h, w, palette) == static_cast<int>(j) ? 1 : 0;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(n * k);
}

}  // namespace cdvg::diagnostics
