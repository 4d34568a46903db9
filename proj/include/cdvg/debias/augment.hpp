#pragma once

#include <cstddef>

#include "cdvg/core/rng.hpp"
#include "cdvg/core/tensor.hpp"
#include "cdvg/data/dataset.hpp"
#include "cdvg/data/image.hpp"
#include "json.hpp"

namespace cdvg::debias {

// Random resized crop, optional horizontal flip, then color distortion
// (brightness, contrast, saturation and hue jitter in random order, followed
// by optional grayscale). Images in [0, 1].
struct AugmentationPolicy {
  std::size_t output_size = 28;
  float crop_scale_min = 0.5f;   // area fraction of the source
  float crop_scale_max = 1.0f;
  float crop_ratio_min = 3.0f / 4.0f;
  float crop_ratio_max = 4.0f / 3.0f;
  bool horizontal_flip = false;
  float flip_p = 0.5f;
  float jitter_strength = 0.5f;  // brightness/contrast/saturation 0.8s, hue 0.2s
  float jitter_p = 0.8f;
  float grayscale_p = 0.0f;

  void validate() const;
};

AugmentationPolicy colored_mnist_policy();
AugmentationPolicy corrupted_cifar10_policy();
AugmentationPolicy augmentation_policy(data::DatasetName name);
// Full-image crop, no flip, no color distortion.
AugmentationPolicy identity_policy(std::size_t output_size);

nlohmann::json to_json(const AugmentationPolicy& policy);
AugmentationPolicy policy_from_json(const nlohmann::json& j, AugmentationPolicy base = {});

data::ImageF augment(const data::ImageF& image, const AugmentationPolicy& policy, Rng& rng);

// Per-sample augmentation of an [n, c, h, w] batch in [0, 1]; sample i uses
// its own stream derived from (seed, i).
Tensor augment_batch(const Tensor& batch, const AugmentationPolicy& policy, std::uint64_t seed);

// Uniform domain in [0, k). Throws std::invalid_argument when k <= 0.
int sample_target_domain(long k, Rng& rng);

}  // namespace cdvg::debias
