#pragma once

#include <array>
#include <cstdint>
#include <string_view>

#include "cdvg/data/image.hpp"

namespace cdvg::data {

enum class Corruption {
  snow,
  frost,
  fog,
  brightness,
  contrast,
  spatter,
  elastic_transform,
  jpeg_compression,
  pixelate,
  saturate,
};

// Class k of Corrupted CIFAR-10 is biased toward kCorruptions[k].
inline constexpr std::array<Corruption, 10> kCorruptions = {
    Corruption::snow,     Corruption::frost,   Corruption::fog,
    Corruption::brightness, Corruption::contrast, Corruption::spatter,
    Corruption::elastic_transform, Corruption::jpeg_compression, Corruption::pixelate,
    Corruption::saturate,
};

std::string_view corruption_name(Corruption corruption);
// Throws ConfigError naming `name` when it is not a known corruption.
Corruption parse_corruption(std::string_view name);

// JPEG quality used at each severity.
int jpeg_quality(int severity);

// Applies `corruption` at severity 1-5 to an RGB image in [0, 1]. Random
// components are drawn from `seed` only, so the result is a pure function of
// the arguments. Output has the input's shape and lies in [0, 1].
ImageF apply_corruption(const ImageF& image, Corruption corruption, int severity,
                        std::uint64_t seed);

}  // namespace cdvg::data
