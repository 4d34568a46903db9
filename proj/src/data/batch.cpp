#include "cdvg/data/batch.hpp"

#include <stdexcept>

namespace cdvg::data {

Tensor pack_images(const BiasedDataset& dataset, std::span<const std::size_t> indices, PixelRange range) {
  if (indices.empty()) throw std::invalid_argument("pack_images: empty batch");
  const Image8& first = dataset.samples.at(indices[0]).image;
  const std::size_t h = first.height, w = first.width, c = first.channels;
  Tensor out(Shape{indices.size(), c, h, w});
  const float scale = range == PixelRange::unit ? 1.0f / 255.0f : 2.0f / 255.0f;
  const float shift = range == PixelRange::unit ? 0.0f : -1.0f;
  float* dst = out.data();
  for (std::size_t n = 0; n < indices.size(); ++n) {
    const Image8& img = dataset.samples.at(indices[n]).image;
    if (img.height != h || img.width != w || img.channels != c) {
      throw std::invalid_argument("pack_images: mixed image shapes");
    }
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < h * w; ++p)
        dst[((n * c + ch) * h * w) + p] = img.pixels[p * c + ch] * scale + shift;
  }
  return out;
}

Tensor pack_images(std::span<const ImageF> images, PixelRange range) {
  if (images.empty()) throw std::invalid_argument("pack_images: empty batch");
  const std::size_t h = images[0].height, w = images[0].width, c = images[0].channels;
  Tensor out(Shape{images.size(), c, h, w});
  float* dst = out.data();
  for (std::size_t n = 0; n < images.size(); ++n)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < h * w; ++p) {
        const float v = images[n].pixels[p * c + ch];
        dst[((n * c + ch) * h * w) + p] = range == PixelRange::unit ? v : 2.0f * v - 1.0f;
      }
  return out;
}

std::vector<int> class_labels(const BiasedDataset& dataset, std::span<const std::size_t> indices) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(dataset.samples.at(i).class_label);
  return out;
}

std::vector<int> bias_labels(const BiasedDataset& dataset, std::span<const std::size_t> indices) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(dataset.samples.at(i).bias_label);
  return out;
}

std::vector<ImageF> unpack_images(const Tensor& batch, PixelRange range) {
  const std::size_t n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  std::vector<ImageF> out;
  out.reserve(n);
  const float* src = batch.data();
  for (std::size_t i = 0; i < n; ++i) {
    ImageF img(h, w, c);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < h * w; ++p) {
        const float v = src[((i * c + ch) * h * w) + p];
        img.pixels[p * c + ch] = range == PixelRange::unit ? v : 0.5f * (v + 1.0f);
      }
    out.push_back(std::move(img));
  }
  return out;
}

void to_signed_unit(Tensor& t) {
  for (float& v : t.span()) v = 2.0f * v - 1.0f;
}

void to_unit(Tensor& t) {
  for (float& v : t.span()) v = 0.5f * (v + 1.0f);
}

}  // namespace cdvg::data
