#pragma once

#include <array>

#include "cdvg/data/image.hpp"

namespace cdvg::data {

enum class Border { reflect, reflect101, clamp, zero };

// Bilinear sample at fractional (y, x) in pixel-center coordinates.
float sample_bilinear(const ImageF& image, float y, float x, std::size_t channel, Border border);

// Separable Gaussian blur per channel, kernel truncated at 4 sigma.
ImageF gaussian_blur(const ImageF& image, float sigma, Border border = Border::reflect);

// Area-averaging resize (box filter with fractional coverage) when
// shrinking, nearest-center when enlarging.
ImageF resize_box(const ImageF& image, std::size_t height, std::size_t width);

// Bilinear resize with half-pixel centers.
ImageF resize_bilinear(const ImageF& image, std::size_t height, std::size_t width);

// Crops [top, top+h) x [left, left+w) with fractional bounds, resampled
// bilinearly to out_h x out_w.
ImageF crop_resize(const ImageF& image, float top, float left, float h, float w,
                   std::size_t out_h, std::size_t out_w);

// HSV with all components in [0, 1].
std::array<float, 3> rgb_to_hsv(float r, float g, float b);
std::array<float, 3> hsv_to_rgb(float h, float s, float v);

// Luma (0.299, 0.587, 0.114) of an RGB image, single channel.
ImageF to_gray(const ImageF& image);

void clip01(ImageF& image);

}  // namespace cdvg::data
