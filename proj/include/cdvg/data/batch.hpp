#pragma once

#include <span>
#include <vector>

#include "cdvg/core/tensor.hpp"
#include "cdvg/data/dataset.hpp"

namespace cdvg::data {

enum class PixelRange { unit, signed_unit };  // [0, 1] or [-1, 1]

// Packs dataset[indices] into an [n, c, h, w] tensor.
Tensor pack_images(const BiasedDataset& dataset, std::span<const std::size_t> indices, PixelRange range);
Tensor pack_images(std::span<const ImageF> images, PixelRange range);

std::vector<int> class_labels(const BiasedDataset& dataset, std::span<const std::size_t> indices);
std::vector<int> bias_labels(const BiasedDataset& dataset, std::span<const std::size_t> indices);

// [n, c, h, w] tensor in `range` back to per-sample [0, 1] images.
std::vector<ImageF> unpack_images(const Tensor& batch, PixelRange range);

// Converts between [0, 1] and [-1, 1] in place.
void to_signed_unit(Tensor& t);
void to_unit(Tensor& t);

}  // namespace cdvg::data
