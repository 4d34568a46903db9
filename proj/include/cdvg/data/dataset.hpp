#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "cdvg/data/image.hpp"
#include "cdvg/data/sources.hpp"

namespace cdvg::data {

enum class DatasetName { colored_mnist, corrupted_cifar10 };
enum class Split { train, unbiased_test, unbiased_train };

using Rgb = std::array<std::uint8_t, 3>;

// Ten well-separated colors; class k is biased toward entry k.
std::vector<Rgb> default_palette();

inline constexpr std::array<double, 5> kCanonicalRatios = {0.0, 0.005, 0.01, 0.02, 0.05};
bool is_canonical_ratio(double ratio);

struct DatasetConfig {
  DatasetName name = DatasetName::colored_mnist;
  double ratio = 0.0;
  std::uint64_t seed = 0;
  int severity = 4;                            // corrupted_cifar10
  std::vector<Rgb> palette = default_palette();  // colored_mnist
  double color_jitter = 0.05;                  // per-channel std of the tint
  // "direct", or "exclude_bias_free:<rho>" when derived from a ratio-rho set
  // by dropping its bias-free samples.
  std::string construction = "direct";

  // Throws ConfigError on out-of-range ratio/severity or a bad palette.
  void validate(std::size_t num_classes) const;
};

struct Sample {
  Image8 image;
  int class_label = 0;
  int bias_label = 0;
  bool bias_free = false;

  bool operator==(const Sample&) const = default;
};

struct BiasedDataset {
  DatasetConfig config;
  Split split = Split::train;
  std::size_t num_classes = 10;
  std::string source_origin;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  std::size_t bias_free_count() const;
};

std::string_view to_string(DatasetName name);
std::string_view to_string(Split split);
DatasetName parse_dataset_name(std::string_view text);
Split parse_split(std::string_view text);

// Number of bias-free samples in a train split of size n.
std::size_t bias_free_target(double ratio, std::size_t n);

// Colorizes grayscale digits. The train split is biased with exactly
// bias_free_target(ratio, N) bias-free samples; unbiased splits draw the
// color uniformly per sample.
BiasedDataset build_colored_mnist(const SourceImages& source, const DatasetConfig& config,
                                  Split split = Split::train);

// Applies corruption kCorruptions[bias_label] to 32x32 RGB images, with the
// same ratio bookkeeping as build_colored_mnist.
BiasedDataset build_corrupted_cifar10(const SourceImages& source, const DatasetConfig& config,
                                      Split split = Split::train);

BiasedDataset build_dataset(const SourceImages& source, const DatasetConfig& config, Split split);

// Drops every bias-free sample, giving a ratio-0 set derived from a
// ratio-rho one.
BiasedDataset exclude_bias_free(const BiasedDataset& dataset);

}  // namespace cdvg::data
