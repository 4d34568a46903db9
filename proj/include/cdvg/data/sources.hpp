#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cdvg/data/image.hpp"

namespace cdvg::data {

// Labeled clean images that a biased dataset is synthesized from.
struct SourceImages {
  std::vector<Image8> images;
  std::vector<int> labels;
  std::size_t num_classes = 10;
  std::string origin;  // recorded in dataset metadata

  std::size_t size() const { return images.size(); }
  // First n samples (or all when n >= size()).
  SourceImages head(std::size_t n) const;
};

// MNIST IDX pair (idx3 images, idx1 labels).
SourceImages load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

// CIFAR-10 binary batches: records of 1 label byte + 3072 planar RGB bytes.
SourceImages load_cifar10_batches(const std::vector<std::filesystem::path>& batches);

// Procedurally rendered handwriting-like digits, 28x28 grayscale.
SourceImages render_digits(std::size_t count, std::uint64_t seed);

// Procedurally rendered 10-class shape photographs, 32x32 RGB.
SourceImages render_objects(std::size_t count, std::uint64_t seed);

// Loads {train,t10k}-{images-idx3,labels-idx1}-ubyte from `root` when present,
// otherwise renders `fallback_count` procedural digits.
SourceImages digit_source(const std::filesystem::path& root, bool train, std::size_t fallback_count,
                          std::uint64_t seed);

// Loads cifar-10-batches-bin/{data_batch_1..5,test_batch}.bin under `root`
// when present, otherwise renders `fallback_count` procedural objects.
SourceImages object_source(const std::filesystem::path& root, bool train, std::size_t fallback_count,
                           std::uint64_t seed);

}  // namespace cdvg::data
