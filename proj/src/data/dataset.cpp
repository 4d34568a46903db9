#include "cdvg/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "cdvg/core/errors.hpp"
#include "cdvg/core/rng.hpp"
#include "cdvg/data/corruptions.hpp"

namespace cdvg::data {
namespace {

constexpr std::uint64_t split_stream(Split split) { return 0x5EED0000u + static_cast<std::uint64_t>(split); }

// Bias label per sample: aligned for the train split except the
// bias-free subset; uniform for unbiased splits.
std::vector<int> assign_bias(const SourceImages& source, const DatasetConfig& config, Split split,
                             std::size_t modes) {
  const std::size_t n = source.size();
  const std::uint64_t stream_seed = mix_seed(config.seed, split_stream(split));
  std::vector<int> bias(n);
  if (split != Split::train) {
    for (std::size_t i = 0; i < n; ++i) {
      Rng rng(mix_seed(stream_seed, i));
      bias[i] = static_cast<int>(rng.below(modes));
    }
    return bias;
  }
  for (std::size_t i = 0; i < n; ++i) bias[i] = source.labels[i];
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(mix_seed(stream_seed, ~std::uint64_t{0}));
  shuffle_rng.shuffle(order.begin(), order.end());
  const std::size_t n_free = bias_free_target(config.ratio, n);
  for (std::size_t j = 0; j < n_free; ++j) {
    const std::size_t i = order[j];
    Rng rng(mix_seed(stream_seed, i));
    auto other = static_cast<int>(rng.below(modes - 1));
    if (other >= source.labels[i]) ++other;
    bias[i] = other;
  }
  return bias;
}

void check_source(const SourceImages& source) {
  if (source.images.size() != source.labels.size()) throw ConfigError("source images/labels size mismatch");
  for (int label : source.labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= source.num_classes) {
      throw ConfigError("source label " + std::to_string(label) + " out of range");
    }
  }
}

// Per-sample stream for jitter and corruption noise, independent of the
// bias assignment stream.
Rng sample_rng(const DatasetConfig& config, Split split, std::size_t index) {
  return Rng(mix_seed(mix_seed(config.seed, split_stream(split) + 0x100), index));
}

}  // namespace

std::vector<Rgb> default_palette() {
  return {Rgb{230, 25, 75},  Rgb{60, 180, 75},   Rgb{255, 225, 25}, Rgb{0, 130, 200},
          Rgb{245, 130, 48}, Rgb{145, 30, 180},  Rgb{70, 240, 240}, Rgb{240, 50, 230},
          Rgb{128, 128, 255}, Rgb{255, 255, 255}};
}

bool is_canonical_ratio(double ratio) {
  return std::any_of(kCanonicalRatios.begin(), kCanonicalRatios.end(),
                     [&](double r) { return std::abs(r - ratio) < 1e-12; });
}

void DatasetConfig::validate(std::size_t num_classes) const {
  if (!(ratio >= 0.0 && ratio <= 1.0)) {
    throw ConfigError("ratio must lie in [0, 1], got " + std::to_string(ratio));
  }
  if (name == DatasetName::colored_mnist) {
    if (palette.size() != num_classes) {
      throw ConfigError("palette has " + std::to_string(palette.size()) + " colors but the source has " +
                        std::to_string(num_classes) + " classes");
    }
    if (std::set<Rgb>(palette.begin(), palette.end()).size() != palette.size()) {
      throw ConfigError("palette colors must be pairwise distinct");
    }
    if (color_jitter < 0.0) throw ConfigError("color_jitter must be non-negative");
  } else if (severity < 1 || severity > 5) {
    throw ConfigError("severity must be in 1..5, got " + std::to_string(severity));
  }
}

std::size_t BiasedDataset::bias_free_count() const {
  return static_cast<std::size_t>(
      std::count_if(samples.begin(), samples.end(), [](const Sample& s) { return s.bias_free; }));
}

std::string_view to_string(DatasetName name) {
  return name == DatasetName::colored_mnist ? "colored_mnist" : "corrupted_cifar10";
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::unbiased_test: return "unbiased_test";
    default: return "unbiased_train";
  }
}

DatasetName parse_dataset_name(std::string_view text) {
  if (text == "colored_mnist") return DatasetName::colored_mnist;
  if (text == "corrupted_cifar10") return DatasetName::corrupted_cifar10;
  throw ConfigError("unknown dataset '" + std::string(text) + "' (expected colored_mnist or corrupted_cifar10)");
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "unbiased_test") return Split::unbiased_test;
  if (text == "unbiased_train") return Split::unbiased_train;
  throw ConfigError("unknown split '" + std::string(text) + "'");
}

std::size_t bias_free_target(double ratio, std::size_t n) {
  return static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
}

BiasedDataset build_colored_mnist(const SourceImages& source, const DatasetConfig& config, Split split) {
  if (config.name != DatasetName::colored_mnist) throw ConfigError("config is not for colored_mnist");
  check_source(source);
  config.validate(source.num_classes);
  for (const auto& image : source.images) {
    if (image.channels != 1) throw ConfigError("colored_mnist needs grayscale source digits");
  }
  const auto bias = assign_bias(source, config, split, source.num_classes);
  BiasedDataset out{config, split, source.num_classes, source.origin, {}};
  out.samples.resize(source.size());
  for (std::size_t i = 0; i < source.size(); ++i) {
    Rng rng = sample_rng(config, split, i);
    const Rgb& base = config.palette[static_cast<std::size_t>(bias[i])];
    std::array<double, 3> tint{};
    for (std::size_t c = 0; c < 3; ++c) {
      const double jitter = std::clamp(rng.normal(0.0, config.color_jitter), -3.0 * config.color_jitter,
                                       3.0 * config.color_jitter);
      tint[c] = std::clamp(base[c] / 255.0 + jitter, 0.0, 1.0);
    }
    const Image8& gray = source.images[i];
    Image8 image(gray.height, gray.width, 3);
    for (std::size_t p = 0; p < gray.pixels.size(); ++p) {
      for (std::size_t c = 0; c < 3; ++c) {
        image.pixels[p * 3 + c] = static_cast<std::uint8_t>(std::lround(gray.pixels[p] * tint[c]));
      }
    }
    out.samples[i] = {std::move(image), source.labels[i], bias[i], bias[i] != source.labels[i]};
  }
  return out;
}

BiasedDataset build_corrupted_cifar10(const SourceImages& source, const DatasetConfig& config, Split split) {
  if (config.name != DatasetName::corrupted_cifar10) throw ConfigError("config is not for corrupted_cifar10");
  check_source(source);
  if (source.num_classes != kCorruptions.size()) {
    throw ConfigError("corrupted_cifar10 needs a 10-class source, got " + std::to_string(source.num_classes));
  }
  config.validate(source.num_classes);
  for (const auto& image : source.images) {
    if (image.channels != 3 || image.height != 32 || image.width != 32) {
      throw ConfigError("corrupted_cifar10 needs 32x32 RGB source images");
    }
  }
  const auto bias = assign_bias(source, config, split, kCorruptions.size());
  BiasedDataset out{config, split, source.num_classes, source.origin, {}};
  out.samples.resize(source.size());
  for (std::size_t i = 0; i < source.size(); ++i) {
    Rng rng = sample_rng(config, split, i);
    const Corruption corruption = kCorruptions[static_cast<std::size_t>(bias[i])];
    Image8 image = to_u8(apply_corruption(to_float(source.images[i]), corruption, config.severity, rng.next()));
    out.samples[i] = {std::move(image), source.labels[i], bias[i], bias[i] != source.labels[i]};
  }
  return out;
}

BiasedDataset build_dataset(const SourceImages& source, const DatasetConfig& config, Split split) {
  return config.name == DatasetName::colored_mnist ? build_colored_mnist(source, config, split)
                                                   : build_corrupted_cifar10(source, config, split);
}

BiasedDataset exclude_bias_free(const BiasedDataset& dataset) {
  BiasedDataset out{dataset.config, dataset.split, dataset.num_classes, dataset.source_origin, {}};
  out.config.ratio = 0.0;
  out.config.construction = "exclude_bias_free:" + std::to_string(dataset.config.ratio);
  for (const auto& s : dataset.samples) {
    if (!s.bias_free) out.samples.push_back(s);
  }
  return out;
}

}  // namespace cdvg::data
