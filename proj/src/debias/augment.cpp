#include "cdvg/debias/augment.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

#include "cdvg/core/errors.hpp"
#include "cdvg/data/batch.hpp"
#include "cdvg/data/image_ops.hpp"

namespace cdvg::debias {
namespace {

float gray(const data::ImageF& img, std::size_t p) {
  const float* px = &img.pixels[p * 3];
  return 0.299f * px[0] + 0.587f * px[1] + 0.114f * px[2];
}

void blend(data::ImageF& img, float factor, auto&& other) {
  for (std::size_t p = 0; p < img.height * img.width; ++p) {
    for (std::size_t c = 0; c < 3; ++c) {
      float& v = img.pixels[p * 3 + c];
      v = std::clamp(factor * v + (1.0f - factor) * other(p, c), 0.0f, 1.0f);
    }
  }
}

void adjust_brightness(data::ImageF& img, float f) {
  blend(img, f, [](std::size_t, std::size_t) { return 0.0f; });
}

void adjust_contrast(data::ImageF& img, float f) {
  double mean = 0.0;
  for (std::size_t p = 0; p < img.height * img.width; ++p) mean += gray(img, p);
  const auto m = static_cast<float>(mean / static_cast<double>(img.height * img.width));
  blend(img, f, [m](std::size_t, std::size_t) { return m; });
}

void adjust_saturation(data::ImageF& img, float f) {
  const data::ImageF src = img;
  blend(img, f, [&src](std::size_t p, std::size_t) { return gray(src, p); });
}

void adjust_hue(data::ImageF& img, float shift) {
  for (std::size_t p = 0; p < img.height * img.width; ++p) {
    float* px = &img.pixels[p * 3];
    auto hsv = data::rgb_to_hsv(px[0], px[1], px[2]);
    hsv[0] = hsv[0] + shift - std::floor(hsv[0] + shift);
    const auto rgb = data::hsv_to_rgb(hsv[0], hsv[1], hsv[2]);
    std::copy(rgb.begin(), rgb.end(), px);
  }
}

void color_jitter(data::ImageF& img, float strength, Rng& rng) {
  const float bcs = 0.8f * strength, hue = 0.2f * strength;
  const auto b = static_cast<float>(rng.uniform(std::max(0.0f, 1.0f - bcs), 1.0f + bcs));
  const auto c = static_cast<float>(rng.uniform(std::max(0.0f, 1.0f - bcs), 1.0f + bcs));
  const auto s = static_cast<float>(rng.uniform(std::max(0.0f, 1.0f - bcs), 1.0f + bcs));
  const auto h = static_cast<float>(rng.uniform(-hue, hue));
  std::array<int, 4> order{0, 1, 2, 3};
  rng.shuffle(order.begin(), order.end());
  for (int op : order) {
    switch (op) {
      case 0: adjust_brightness(img, b); break;
      case 1: adjust_contrast(img, c); break;
      case 2: adjust_saturation(img, s); break;
      default: adjust_hue(img, h); break;
    }
  }
}

}  // namespace

void AugmentationPolicy::validate() const {
  if (output_size == 0) throw ConfigError("augmentation output_size must be > 0");
  if (!(crop_scale_min > 0.0f) || crop_scale_min > crop_scale_max || crop_scale_max > 1.0f) {
    throw ConfigError("augmentation crop scale must satisfy 0 < min <= max <= 1");
  }
  if (!(crop_ratio_min > 0.0f) || crop_ratio_min > crop_ratio_max) {
    throw ConfigError("augmentation crop ratio must satisfy 0 < min <= max");
  }
  for (float p : {flip_p, jitter_p, grayscale_p}) {
    if (p < 0.0f || p > 1.0f) throw ConfigError("augmentation probabilities must be in [0, 1]");
  }
  if (jitter_strength < 0.0f) throw ConfigError("jitter_strength must be >= 0");
}

AugmentationPolicy colored_mnist_policy() {
  AugmentationPolicy p;
  p.output_size = 28;
  p.horizontal_flip = false;
  p.grayscale_p = 0.0f;
  return p;
}

AugmentationPolicy corrupted_cifar10_policy() {
  AugmentationPolicy p;
  p.output_size = 32;
  p.crop_scale_min = 0.08f;
  p.horizontal_flip = true;
  p.grayscale_p = 0.2f;
  return p;
}

AugmentationPolicy augmentation_policy(data::DatasetName name) {
  return name == data::DatasetName::colored_mnist ? colored_mnist_policy() : corrupted_cifar10_policy();
}

AugmentationPolicy identity_policy(std::size_t output_size) {
  AugmentationPolicy p;
  p.output_size = output_size;
  p.crop_scale_min = p.crop_scale_max = 1.0f;
  p.crop_ratio_min = p.crop_ratio_max = 1.0f;
  p.horizontal_flip = false;
  p.jitter_p = 0.0f;
  p.grayscale_p = 0.0f;
  return p;
}

nlohmann::json to_json(const AugmentationPolicy& p) {
  return {{"output_size", p.output_size},       {"crop_scale_min", p.crop_scale_min},
          {"crop_scale_max", p.crop_scale_max}, {"crop_ratio_min", p.crop_ratio_min},
          {"crop_ratio_max", p.crop_ratio_max}, {"horizontal_flip", p.horizontal_flip},
          {"flip_p", p.flip_p},                 {"jitter_strength", p.jitter_strength},
          {"jitter_p", p.jitter_p},             {"grayscale_p", p.grayscale_p}};
}

AugmentationPolicy policy_from_json(const nlohmann::json& j, AugmentationPolicy p) {
  p.output_size = j.value("output_size", p.output_size);
  p.crop_scale_min = j.value("crop_scale_min", p.crop_scale_min);
  p.crop_scale_max = j.value("crop_scale_max", p.crop_scale_max);
  p.crop_ratio_min = j.value("crop_ratio_min", p.crop_ratio_min);
  p.crop_ratio_max = j.value("crop_ratio_max", p.crop_ratio_max);
  p.horizontal_flip = j.value("horizontal_flip", p.horizontal_flip);
  p.flip_p = j.value("flip_p", p.flip_p);
  p.jitter_strength = j.value("jitter_strength", p.jitter_strength);
  p.jitter_p = j.value("jitter_p", p.jitter_p);
  p.grayscale_p = j.value("grayscale_p", p.grayscale_p);
  return p;
}

data::ImageF augment(const data::ImageF& image, const AugmentationPolicy& policy, Rng& rng) {
  const auto h = static_cast<double>(image.height), w = static_cast<double>(image.width);
  const double area = h * w;
  // Random resized crop: sample area and log-aspect ratio, retry, then fall
  // back to the central full-ratio crop.
  double ch = h, cw = w, top = 0.0, left = 0.0;
  bool found = false;
  for (int attempt = 0; attempt < 10 && !found; ++attempt) {
    const double target = area * rng.uniform(policy.crop_scale_min, policy.crop_scale_max);
    const double log_ratio = rng.uniform(std::log(policy.crop_ratio_min), std::log(policy.crop_ratio_max));
    const double ratio = std::exp(log_ratio);
    const double cand_w = std::sqrt(target * ratio), cand_h = std::sqrt(target / ratio);
    if (cand_w <= w && cand_h <= h) {
      cw = cand_w;
      ch = cand_h;
      top = rng.uniform(0.0, h - ch);
      left = rng.uniform(0.0, w - cw);
      found = true;
    }
  }
  data::ImageF out = data::crop_resize(image, static_cast<float>(top), static_cast<float>(left),
                                       static_cast<float>(ch), static_cast<float>(cw), policy.output_size,
                                       policy.output_size);
  if (policy.horizontal_flip && rng.bernoulli(policy.flip_p)) {
    for (std::size_t y = 0; y < out.height; ++y) {
      for (std::size_t x = 0; x < out.width / 2; ++x) {
        for (std::size_t c = 0; c < out.channels; ++c) std::swap(out.at(y, x, c), out.at(y, out.width - 1 - x, c));
      }
    }
  }
  if (out.channels == 3) {
    if (rng.bernoulli(policy.jitter_p)) color_jitter(out, policy.jitter_strength, rng);
    if (rng.bernoulli(policy.grayscale_p)) {
      for (std::size_t p = 0; p < out.height * out.width; ++p) {
        const float g = gray(out, p);
        std::fill_n(&out.pixels[p * 3], 3, g);
      }
    }
  }
  return out;
}

Tensor augment_batch(const Tensor& batch, const AugmentationPolicy& policy, std::uint64_t seed) {
  auto images = data::unpack_images(batch, data::PixelRange::unit);
  for (std::size_t i = 0; i < images.size(); ++i) {
    Rng rng(mix_seed(seed, i));
    images[i] = augment(images[i], policy, rng);
  }
  return data::pack_images(images, data::PixelRange::unit);
}

int sample_target_domain(long k, Rng& rng) {
  if (k <= 0) throw std::invalid_argument("sample_target_domain: K must be >= 1, got " + std::to_string(k));
  return static_cast<int>(rng.below(static_cast<std::size_t>(k)));
}

}  // namespace cdvg::debias
