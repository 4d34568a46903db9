#include "cdvg/debias/model.hpp"

#include <fstream>

#include "cdvg/core/errors.hpp"
#include "cdvg/nn/checkpoint.hpp"

namespace cdvg::debias {

std::size_t ModelConfig::representation_dim() const {
  return encoder == EncoderKind::mlp ? mlp_hidden : 8 * resnet_width;
}

void ModelConfig::validate() const {
  if (image_size == 0 || channels == 0 || num_classes == 0) throw ConfigError("model dimensions must be > 0");
  if (encoder == EncoderKind::mlp && (mlp_hidden == 0 || mlp_layers == 0)) {
    throw ConfigError("mlp encoder needs mlp_hidden and mlp_layers > 0");
  }
  if (encoder == EncoderKind::resnet18 && resnet_width == 0) throw ConfigError("resnet_width must be > 0");
  if (head_dims.size() < 2) throw ConfigError("head_dims needs at least input and output widths");
  if (head_dims.front() != representation_dim()) {
    throw ConfigError("head_dims[0] = " + std::to_string(head_dims.front()) + " but the encoder emits " +
                      std::to_string(representation_dim()));
  }
}

ModelConfig colored_mnist_model() { return {}; }

ModelConfig corrupted_cifar10_model() {
  ModelConfig c;
  c.encoder = EncoderKind::resnet18;
  c.image_size = 32;
  c.head_dims = {512, 512, 128};
  return c;
}

ModelConfig model_profile(data::DatasetName name) {
  return name == data::DatasetName::colored_mnist ? colored_mnist_model() : corrupted_cifar10_model();
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"encoder", c.encoder == EncoderKind::mlp ? "mlp" : "resnet18"},
          {"image_size", c.image_size},
          {"channels", c.channels},
          {"num_classes", c.num_classes},
          {"mlp_hidden", c.mlp_hidden},
          {"mlp_layers", c.mlp_layers},
          {"resnet_width", c.resnet_width},
          {"head_dims", c.head_dims}};
}

ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig c) {
  if (j.contains("encoder")) {
    const auto name = j.at("encoder").get<std::string>();
    if (name == "mlp") {
      c.encoder = EncoderKind::mlp;
    } else if (name == "resnet18") {
      c.encoder = EncoderKind::resnet18;
    } else {
      throw ConfigError("encoder: unknown kind '" + name + "' (expected mlp or resnet18)");
    }
  }
  c.image_size = j.value("image_size", c.image_size);
  c.channels = j.value("channels", c.channels);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.mlp_hidden = j.value("mlp_hidden", c.mlp_hidden);
  c.mlp_layers = j.value("mlp_layers", c.mlp_layers);
  c.resnet_width = j.value("resnet_width", c.resnet_width);
  c.head_dims = j.value("head_dims", c.head_dims);
  return c;
}

MlpEncoder::MlpEncoder(const ModelConfig& config, Rng& rng) {
  std::size_t in = config.channels * config.image_size * config.image_size;
  for (std::size_t i = 0; i < config.mlp_layers; ++i) {
    layers_.push_back(std::make_unique<nn::Linear>(in, config.mlp_hidden, rng));
    register_module("fc" + std::to_string(i), layers_.back().get());
    in = config.mlp_hidden;
  }
}

Var MlpEncoder::forward(const Var& x) {
  Var h = reshape(x, {x.dim(0), x.numel() / x.dim(0)});
  for (const auto& layer : layers_) h = relu(layer->forward(h));
  return h;
}

BasicBlock::BasicBlock(std::size_t in, std::size_t out, std::size_t stride, Rng& rng)
    : conv1_(in, out, 3, stride, 1, rng, false), conv2_(out, out, 3, 1, 1, rng, false), bn1_(out), bn2_(out) {
  register_module("conv1", &conv1_);
  register_module("bn1", &bn1_);
  register_module("conv2", &conv2_);
  register_module("bn2", &bn2_);
  if (stride != 1 || in != out) {
    shortcut_ = std::make_unique<nn::Conv2d>(in, out, 1, stride, 0, rng, false);
    shortcut_bn_ = std::make_unique<nn::BatchNorm>(out);
    register_module("shortcut", shortcut_.get());
    register_module("shortcut_bn", shortcut_bn_.get());
  }
}

Var BasicBlock::forward(const Var& x) {
  Var h = relu(bn1_.forward(conv1_.forward(x)));
  h = bn2_.forward(conv2_.forward(h));
  Var skip = shortcut_ ? shortcut_bn_->forward(shortcut_->forward(x)) : x;
  return relu(add(h, skip));
}

ResNet18Encoder::ResNet18Encoder(const ModelConfig& config, Rng& rng) {
  const std::size_t w = config.resnet_width;
  stem_ = std::make_unique<nn::Conv2d>(config.channels, w, 3, 1, 1, rng, false);
  stem_bn_ = std::make_unique<nn::BatchNorm>(w);
  register_module("stem", stem_.get());
  register_module("stem_bn", stem_bn_.get());
  std::size_t in = w;
  for (std::size_t stage = 0; stage < 4; ++stage) {
    const std::size_t out = w << stage;
    for (std::size_t b = 0; b < 2; ++b) {
      const std::size_t stride = (stage > 0 && b == 0) ? 2 : 1;
      blocks_.push_back(std::make_unique<BasicBlock>(in, out, stride, rng));
      register_module("layer" + std::to_string(stage + 1) + "." + std::to_string(b), blocks_.back().get());
      in = out;
    }
  }
}

Var ResNet18Encoder::forward(const Var& x) {
  Var h = relu(stem_bn_->forward(stem_->forward(x)));
  for (const auto& block : blocks_) h = block->forward(h);
  return global_avg_pool(h);
}

DebiasModel::DebiasModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng enc_rng(mix_seed(seed, 1)), cls_rng(mix_seed(seed, 2)), head_rng(mix_seed(seed, 3));
  if (config.encoder == EncoderKind::mlp) {
    encoder_ = std::make_unique<MlpEncoder>(config, enc_rng);
  } else {
    encoder_ = std::make_unique<ResNet18Encoder>(config, enc_rng);
  }
  classifier_ = std::make_unique<nn::Linear>(config.representation_dim(), config.num_classes, cls_rng);
  register_module("encoder", encoder_.get());
  register_module("classifier", classifier_.get());
  for (std::size_t i = 0; i + 1 < config.head_dims.size(); ++i) {
    head_.push_back(std::make_unique<nn::Linear>(config.head_dims[i], config.head_dims[i + 1], head_rng));
    register_module("head" + std::to_string(i), head_.back().get());
  }
}

Var DebiasModel::project(const Var& h) const {
  Var z = h;
  for (std::size_t i = 0; i < head_.size(); ++i) {
    z = head_[i]->forward(z);
    if (i + 1 < head_.size()) z = relu(z);
  }
  return z;
}

Tensor DebiasModel::predict_logits(const Tensor& x) {
  const bool was_training = training();
  set_training(false);
  NoGradGuard guard;
  Tensor logits = classify(encode(Var(x))).value();
  set_training(was_training);
  return logits;
}

void DebiasModel::save(const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nn::save_checkpoint(*this, dir / "weights.ckpt");
  std::ofstream(dir / "model.json") << to_json(config_).dump(2) << "\n";
}

std::unique_ptr<DebiasModel> DebiasModel::load(const std::filesystem::path& dir) {
  const auto meta = dir / "model.json";
  if (!std::filesystem::exists(meta)) throw MissingArtifactError("no model at " + dir.string());
  auto model = std::make_unique<DebiasModel>(model_config_from_json(nlohmann::json::parse(std::ifstream(meta))), 0);
  nn::load_checkpoint(*model, dir / "weights.ckpt");
  return model;
}

}  // namespace cdvg::debias
