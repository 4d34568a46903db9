#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

#include "cdvg/data/dataset.hpp"
#include "cdvg/nn/module.hpp"
#include "json.hpp"

namespace cdvg::debias {

// Anything that maps [n, c, h, w] images in [0, 1] to [n, K] class logits.
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual std::size_t num_classes() const = 0;
  // Inference mode, no graph recorded.
  virtual Tensor predict_logits(const Tensor& x) = 0;
};

enum class EncoderKind { mlp, resnet18 };

struct ModelConfig {
  EncoderKind encoder = EncoderKind::mlp;
  std::size_t image_size = 28;
  std::size_t channels = 3;
  std::size_t num_classes = 10;
  std::size_t mlp_hidden = 100;
  std::size_t mlp_layers = 3;
  std::size_t resnet_width = 64;
  // Projection head widths from the representation to z; ReLU between layers.
  std::vector<std::size_t> head_dims{100, 100};

  std::size_t representation_dim() const;
  void validate() const;
};

ModelConfig colored_mnist_model();
ModelConfig corrupted_cifar10_model();
ModelConfig model_profile(data::DatasetName name);

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});

class Encoder : public nn::Module {
 public:
  virtual Var forward(const Var& x) = 0;
};

// Flatten, then mlp_layers x (Linear, ReLU).
class MlpEncoder : public Encoder {
 public:
  MlpEncoder(const ModelConfig& config, Rng& rng);
  Var forward(const Var& x) override;

 private:
  std::vector<std::unique_ptr<nn::Linear>> layers_;
};

class BasicBlock : public nn::Module {
 public:
  BasicBlock(std::size_t in, std::size_t out, std::size_t stride, Rng& rng);
  Var forward(const Var& x);

 private:
  nn::Conv2d conv1_, conv2_;
  nn::BatchNorm bn1_, bn2_;
  std::unique_ptr<nn::Conv2d> shortcut_;
  std::unique_ptr<nn::BatchNorm> shortcut_bn_;
};

// 18-layer residual network for small images: 3x3 stem, four stages of two
// basic blocks (width w, 2w, 4w, 8w), global average pooling.
class ResNet18Encoder : public Encoder {
 public:
  ResNet18Encoder(const ModelConfig& config, Rng& rng);
  Var forward(const Var& x) override;

 private:
  std::unique_ptr<nn::Conv2d> stem_;
  std::unique_ptr<nn::BatchNorm> stem_bn_;
  std::vector<std::unique_ptr<BasicBlock>> blocks_;
};

class DebiasModel : public nn::Module, public Classifier {
 public:
  DebiasModel(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::size_t num_classes() const override { return config_.num_classes; }

  Var encode(const Var& x) { return encoder_->forward(x); }
  Var classify(const Var& h) const { return classifier_->forward(h); }
  Var project(const Var& h) const;
  Tensor predict_logits(const Tensor& x) override;

  // model.json + weights.ckpt
  void save(const std::filesystem::path& dir);
  static std::unique_ptr<DebiasModel> load(const std::filesystem::path& dir);

 private:
  ModelConfig config_;
  std::unique_ptr<Encoder> encoder_;
  std::unique_ptr<nn::Linear> classifier_;
  std::vector<std::unique_ptr<nn::Linear>> head_;
};

}  // namespace cdvg::debias
