#include "cdvg/data/sources.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "cdvg/core/errors.hpp"
#include "cdvg/core/rng.hpp"

namespace cdvg::data {
namespace {

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset) {
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

struct Point {
  double x, y;
};
using Stroke = std::vector<Point>;

Stroke arc(double cx, double cy, double rx, double ry, double a0, double a1) {
  Stroke s;
  const int steps = std::max(6, static_cast<int>(std::abs(a1 - a0) / 15.0));
  for (int i = 0; i <= steps; ++i) {
    const double a = (a0 + (a1 - a0) * i / steps) * std::numbers::pi / 180.0;
    s.push_back({cx + rx * std::cos(a), cy + ry * std::sin(a)});
  }
  return s;
}

// Digit skeletons in a unit box (x right, y down).
std::vector<Stroke> digit_strokes(int digit) {
  switch (digit) {
    case 0: return {arc(0.5, 0.5, 0.2, 0.33, 0, 360)};
    case 1: return {{{0.4, 0.25}, {0.52, 0.15}, {0.52, 0.85}}};
    case 2: {
      Stroke s = arc(0.5, 0.33, 0.2, 0.17, 200, 360);
      s.push_back({0.3, 0.85});
      s.push_back({0.72, 0.85});
      return {s};
    }
    case 3: return {arc(0.48, 0.32, 0.19, 0.16, 210, 450), arc(0.48, 0.66, 0.21, 0.19, 270, 510)};
    case 4: return {{{0.62, 0.85}, {0.62, 0.15}, {0.28, 0.62}, {0.75, 0.62}}};
    case 5: return {{{0.7, 0.15}, {0.35, 0.15}, {0.32, 0.47}}, arc(0.5, 0.63, 0.2, 0.2, 220, 520)};
    case 6: return {arc(0.5, 0.66, 0.19, 0.19, 0, 360),
                    {{0.65, 0.15}, {0.45, 0.3}, {0.33, 0.5}, {0.31, 0.66}}};
    case 7: return {{{0.28, 0.15}, {0.72, 0.15}, {0.42, 0.85}}};
    case 8: return {arc(0.5, 0.32, 0.16, 0.16, 0, 360), arc(0.5, 0.67, 0.2, 0.18, 0, 360)};
    default: return {arc(0.5, 0.34, 0.19, 0.19, 0, 360), {{0.69, 0.34}, {0.66, 0.6}, {0.55, 0.85}}};
  }
}

double segment_distance(Point p, Point a, Point b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = a.x + t * dx - p.x, ey = a.y + t * dy - p.y;
  return std::sqrt(ex * ex + ey * ey);
}

Image8 render_digit(int digit, Rng& rng) {
  constexpr std::size_t kSize = 28;
  auto strokes = digit_strokes(digit);
  const double angle = rng.uniform(-12.0, 12.0) * std::numbers::pi / 180.0;
  const double scale = rng.uniform(0.85, 1.1), shear = rng.uniform(-0.2, 0.2);
  const double tx = rng.uniform(-0.06, 0.06), ty = rng.uniform(-0.06, 0.06);
  const double radius = rng.uniform(0.045, 0.075) * kSize;
  const double ca = std::cos(angle), sa = std::sin(angle);
  for (auto& stroke : strokes) {
    for (auto& p : stroke) {
      double x = p.x - 0.5 + rng.uniform(-0.02, 0.02), y = p.y - 0.5 + rng.uniform(-0.02, 0.02);
      x += shear * y;
      const double rx = ca * x - sa * y, ry = sa * x + ca * y;
      p = {(rx * scale + 0.5 + tx) * kSize, (ry * scale + 0.5 + ty) * kSize};
    }
  }
  Image8 image(kSize, kSize, 1);
  for (std::size_t y = 0; y < kSize; ++y) {
    for (std::size_t x = 0; x < kSize; ++x) {
      const Point p{x + 0.5, y + 0.5};
      double d = 1e9;
      for (const auto& stroke : strokes)
        for (std::size_t i = 0; i + 1 < stroke.size(); ++i) d = std::min(d, segment_distance(p, stroke[i], stroke[i + 1]));
      const double v = std::clamp(radius - d + 0.5, 0.0, 1.0);
      image.at(y, x, 0) = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  }
  return image;
}

// Membership of (u, v) in [-1, 1]^2 for each object class.
bool object_mask(int cls, double u, double v) {
  const double r = std::sqrt(u * u + v * v);
  switch (cls) {
    case 0: return r < 0.8;
    case 1: return std::abs(u) < 0.7 && std::abs(v) < 0.7;
    case 2: return v < 0.7 && v > -0.8 + 2.2 * std::abs(u);
    case 3: return (std::abs(u) < 0.25 && std::abs(v) < 0.85) || (std::abs(v) < 0.25 && std::abs(u) < 0.85);
    case 4: return r < 0.85 && r > 0.5;
    case 5: return std::abs(u) < 0.8 && std::abs(v) < 0.8 && std::fmod(v + 0.8, 0.54) < 0.27;
    case 6: return std::abs(u) + std::abs(v) < 0.85;
    case 7: {
      const double a = std::atan2(v, u);
      const double spike = 0.45 + 0.4 * std::pow(std::abs(std::cos(2.5 * a)), 3.0);
      return r < spike;
    }
    case 8: return std::hypot(u + 0.42, v) < 0.38 || std::hypot(u - 0.42, v) < 0.38 ||
                   (std::abs(v) < 0.1 && std::abs(u) < 0.45);
    default: return r < 0.8 && std::hypot(u - 0.35, v - 0.1) > 0.6;
  }
}

std::array<double, 3> random_color(Rng& rng) {
  return {rng.uniform(), rng.uniform(), rng.uniform()};
}

double luma(const std::array<double, 3>& c) { return 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]; }

Image8 render_object(int cls, Rng& rng) {
  constexpr std::size_t kSize = 32;
  const auto bg0 = random_color(rng);
  const auto bg1 = random_color(rng);
  auto fg = random_color(rng);
  for (int tries = 0; tries < 16 && std::abs(luma(fg) - 0.5 * (luma(bg0) + luma(bg1))) < 0.25; ++tries) {
    fg = random_color(rng);
  }
  const double angle = rng.uniform(-20.0, 20.0) * std::numbers::pi / 180.0;
  const double scale = rng.uniform(0.55, 0.85);
  const double tx = rng.uniform(-0.15, 0.15), ty = rng.uniform(-0.15, 0.15);
  const double grad_angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double ca = std::cos(angle), sa = std::sin(angle);
  Image8 image(kSize, kSize, 3);
  for (std::size_t y = 0; y < kSize; ++y) {
    for (std::size_t x = 0; x < kSize; ++x) {
      double coverage = 0.0;
      for (int sy = 0; sy < 2; ++sy)
        for (int sx = 0; sx < 2; ++sx) {
          const double px = (x + 0.25 + 0.5 * sx) / kSize * 2.0 - 1.0 - tx;
          const double py = (y + 0.25 + 0.5 * sy) / kSize * 2.0 - 1.0 - ty;
          const double u = (ca * px + sa * py) / scale, v = (-sa * px + ca * py) / scale;
          coverage += object_mask(cls, u, v) ? 0.25 : 0.0;
        }
      const double t = 0.5 + 0.5 * (std::cos(grad_angle) * (x / 31.0 - 0.5) + std::sin(grad_angle) * (y / 31.0 - 0.5));
      for (std::size_t c = 0; c < 3; ++c) {
        const double bg = (1 - t) * bg0[c] + t * bg1[c];
        const double v = (1 - coverage) * bg + coverage * fg[c] + rng.normal(0.0, 0.02);
        image.at(y, x, c) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
      }
    }
  }
  return image;
}

// Classes cycle 0..9 and are then shuffled so every class has ~count/10 samples.
std::vector<int> balanced_labels(std::size_t count, Rng& rng) {
  std::vector<int> labels(count);
  for (std::size_t i = 0; i < count; ++i) labels[i] = static_cast<int>(i % 10);
  rng.shuffle(labels.begin(), labels.end());
  return labels;
}

}  // namespace

SourceImages SourceImages::head(std::size_t n) const {
  SourceImages out;
  n = std::min(n, size());
  out.images.assign(images.begin(), images.begin() + static_cast<long>(n));
  out.labels.assign(labels.begin(), labels.begin() + static_cast<long>(n));
  out.num_classes = num_classes;
  out.origin = origin;
  return out;
}

SourceImages load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto img = read_file(images);
  const auto lab = read_file(labels);
  if (img.size() < 16 || read_be32(img, 0) != 0x803) throw CorruptionError("not an idx3 image file: " + images.string());
  if (lab.size() < 8 || read_be32(lab, 0) != 0x801) throw CorruptionError("not an idx1 label file: " + labels.string());
  const std::size_t n = read_be32(img, 4), h = read_be32(img, 8), w = read_be32(img, 12);
  if (read_be32(lab, 4) != n) throw CorruptionError("idx image/label count mismatch");
  if (img.size() < 16 + n * h * w || lab.size() < 8 + n) throw CorruptionError("truncated idx file");
  SourceImages out;
  out.origin = "idx:" + images.filename().string();
  for (std::size_t i = 0; i < n; ++i) {
    Image8 image(h, w, 1);
    std::copy_n(img.begin() + static_cast<long>(16 + i * h * w), h * w, image.pixels.begin());
    out.images.push_back(std::move(image));
    out.labels.push_back(lab[8 + i]);
    if (out.labels.back() > 9) throw CorruptionError("idx label out of range");
  }
  return out;
}

SourceImages load_cifar10_batches(const std::vector<std::filesystem::path>& batches) {
  constexpr std::size_t kRecord = 1 + 3 * 32 * 32;
  SourceImages out;
  out.origin = "cifar10-binary";
  for (const auto& path : batches) {
    const auto bytes = read_file(path);
    if (bytes.size() % kRecord != 0) throw CorruptionError("truncated CIFAR batch " + path.string());
    for (std::size_t r = 0; r < bytes.size() / kRecord; ++r) {
      const std::uint8_t* rec = bytes.data() + r * kRecord;
      if (rec[0] > 9) throw CorruptionError("CIFAR label out of range in " + path.string());
      Image8 image(32, 32, 3);
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t p = 0; p < 1024; ++p) image.pixels[p * 3 + c] = rec[1 + c * 1024 + p];
      out.images.push_back(std::move(image));
      out.labels.push_back(rec[0]);
    }
  }
  return out;
}

SourceImages render_digits(std::size_t count, std::uint64_t seed) {
  Rng order(mix_seed(seed, 0));
  SourceImages out;
  out.origin = "procedural-digits";
  out.labels = balanced_labels(count, order);
  out.images.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(mix_seed(seed, i + 1));
    out.images.push_back(render_digit(out.labels[i], rng));
  }
  return out;
}

SourceImages render_objects(std::size_t count, std::uint64_t seed) {
  Rng order(mix_seed(seed, 0));
  SourceImages out;
  out.origin = "procedural-objects";
  out.labels = balanced_labels(count, order);
  out.images.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(mix_seed(seed, i + 1));
    out.images.push_back(render_object(out.labels[i], rng));
  }
  return out;
}

SourceImages digit_source(const std::filesystem::path& root, bool train, std::size_t fallback_count,
                          std::uint64_t seed) {
  const std::string prefix = train ? "train" : "t10k";
  const auto images = root / (prefix + "-images-idx3-ubyte");
  const auto labels = root / (prefix + "-labels-idx1-ubyte");
  if (!root.empty() && std::filesystem::exists(images) && std::filesystem::exists(labels)) {
    return load_mnist_idx(images, labels);
  }
  return render_digits(fallback_count, mix_seed(seed, train ? 1 : 2));
}

SourceImages object_source(const std::filesystem::path& root, bool train, std::size_t fallback_count,
                           std::uint64_t seed) {
  const auto dir = root / "cifar-10-batches-bin";
  std::vector<std::filesystem::path> batches;
  if (train) {
    for (int i = 1; i <= 5; ++i) batches.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
  } else {
    batches.push_back(dir / "test_batch.bin");
  }
  const bool present = !root.empty() && std::all_of(batches.begin(), batches.end(), [](const auto& p) {
    return std::filesystem::exists(p);
  });
  if (present) return load_cifar10_batches(batches);
  return render_objects(fallback_count, mix_seed(seed, train ? 1 : 2));
}

}  // namespace cdvg::data
