#include <cmath>
#include <fstream>
#include <stdexcept>

#include "cdvg/core/cross_entropy.hpp"
#include "cdvg/core/errors.hpp"
#include "cdvg/nn/checkpoint.hpp"
#include "cdvg/translator/translator.hpp"

namespace cdvg::translator {
namespace {

constexpr float kLeakySlope = 0.01f;

void check_domains(std::span<const int> domains, std::size_t n, std::size_t k) {
  if (domains.size() != n) {
    throw std::invalid_argument("translate: " + std::to_string(domains.size()) + " domains for " +
                                std::to_string(n) + " images");
  }
  for (int d : domains) {
    if (d < 0 || static_cast<std::size_t>(d) >= k) {
      throw std::out_of_range("target domain " + std::to_string(d) + " outside [0, " + std::to_string(k) + ")");
    }
  }
}

// K one-hot planes of the input's spatial size.
Tensor domain_planes(const Shape& x_shape, std::span<const int> domains, std::size_t k) {
  const std::size_t n = x_shape[0], hw = x_shape[2] * x_shape[3];
  Tensor planes(Shape{n, k, x_shape[2], x_shape[3]}, 0.0f);
  for (std::size_t i = 0; i < n; ++i) {
    float* p = planes.data() + (i * k + static_cast<std::size_t>(domains[i])) * hw;
    std::fill(p, p + hw, 1.0f);
  }
  return planes;
}

}  // namespace

Tensor IdentityTranslator::translate(const Tensor& x, std::span<const int> domains) const {
  check_domains(domains, x.dim(0), domains_);
  return x.clone();
}

ResidualBlock::ResidualBlock(std::size_t channels, Rng& rng)
    : conv1_(channels, channels, 3, 1, 1, rng, false),
      conv2_(channels, channels, 3, 1, 1, rng, false),
      norm1_(channels),
      norm2_(channels) {
  register_module("conv1", &conv1_);
  register_module("norm1", &norm1_);
  register_module("conv2", &conv2_);
  register_module("norm2", &norm2_);
}

Var ResidualBlock::forward(const Var& x) const {
  Var h = relu(norm1_.forward(conv1_.forward(x)));
  return add(x, norm2_.forward(conv2_.forward(h)));
}

Generator::Generator(const TranslatorArch& arch, Rng& rng) : arch_(arch) {
  std::size_t c = arch.g_conv_dim;
  stem_ = std::make_unique<nn::Conv2d>(arch.channels + arch.num_domains, c, 7, 1, 3, rng, false);
  stem_norm_ = std::make_unique<nn::InstanceNorm2d>(c);
  register_module("stem", stem_.get());
  register_module("stem_norm", stem_norm_.get());
  for (int i = 0; i < 2; ++i) {
    down_.push_back(std::make_unique<nn::Conv2d>(c, 2 * c, 4, 2, 1, rng, false));
    down_norm_.push_back(std::make_unique<nn::InstanceNorm2d>(2 * c));
    register_module("down" + std::to_string(i), down_.back().get());
    register_module("down_norm" + std::to_string(i), down_norm_.back().get());
    c *= 2;
  }
  for (std::size_t i = 0; i < arch.g_blocks; ++i) {
    blocks_.push_back(std::make_unique<ResidualBlock>(c, rng));
    register_module("block" + std::to_string(i), blocks_.back().get());
  }
  for (int i = 0; i < 2; ++i) {
    up_.push_back(std::make_unique<nn::ConvTranspose2d>(c, c / 2, 4, 2, 1, rng, false));
    up_norm_.push_back(std::make_unique<nn::InstanceNorm2d>(c / 2));
    register_module("up" + std::to_string(i), up_.back().get());
    register_module("up_norm" + std::to_string(i), up_norm_.back().get());
    c /= 2;
  }
  head_ = std::make_unique<nn::Conv2d>(c, arch.channels, 7, 1, 3, rng, false);
  register_module("head", head_.get());
}

Var Generator::forward(const Var& x, std::span<const int> domains) const {
  if (x.shape().size() != 4 || x.dim(1) != arch_.channels) {
    throw std::invalid_argument("generator input must be [n, " + std::to_string(arch_.channels) +
                                ", h, w], got " + to_string(x.shape()));
  }
  check_domains(domains, x.dim(0), arch_.num_domains);
  Var h = concat_channels(x, Var(domain_planes(x.shape(), domains, arch_.num_domains)));
  h = relu(stem_norm_->forward(stem_->forward(h)));
  for (std::size_t i = 0; i < down_.size(); ++i) h = relu(down_norm_[i]->forward(down_[i]->forward(h)));
  for (const auto& block : blocks_) h = block->forward(h);
  for (std::size_t i = 0; i < up_.size(); ++i) h = relu(up_norm_[i]->forward(up_[i]->forward(h)));
  return tanh(head_->forward(h));
}

Discriminator::Discriminator(const TranslatorArch& arch, Rng& rng) : arch_(arch) {
  std::size_t c_in = arch.channels, c = arch.d_conv_dim, size = arch.image_size;
  for (std::size_t i = 0; i < arch.d_repeat; ++i) {
    trunk_.push_back(std::make_unique<nn::Conv2d>(c_in, c, 4, 2, 1, rng, true));
    register_module("conv" + std::to_string(i), trunk_.back().get());
    size = (size + 2 - 4) / 2 + 1;
    c_in = c;
    c *= 2;
  }
  if (size == 0) throw ConfigError("d_repeat too deep for image size " + std::to_string(arch.image_size));
  src_head_ = std::make_unique<nn::Conv2d>(c_in, 1, 3, 1, 1, rng, false);
  cls_head_ = std::make_unique<nn::Conv2d>(c_in, arch.num_domains, size, 1, 0, rng, false);
  register_module("src", src_head_.get());
  register_module("cls", cls_head_.get());
}

DiscriminatorOutput Discriminator::forward(const Var& x) const {
  Var h = x;
  for (const auto& conv : trunk_) h = leaky_relu(conv->forward(h), kLeakySlope);
  Var cls = cls_head_->forward(h);
  return {src_head_->forward(h), reshape(cls, {x.dim(0), arch_.num_domains})};
}

TranslationModel::TranslationModel(const TranslatorArch& arch, std::uint64_t seed) : arch_(arch) {
  Rng g_rng(mix_seed(seed, 1)), d_rng(mix_seed(seed, 2));
  generator_ = std::make_unique<Generator>(arch, g_rng);
  discriminator_ = std::make_unique<Discriminator>(arch, d_rng);
}

Tensor TranslationModel::translate(const Tensor& x, std::span<const int> domains) const {
  check_domains(domains, x.dim(0), arch_.num_domains);
  NoGradGuard guard;
  return generator_->forward(Var(x), domains).value();
}

void TranslationModel::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  nn::save_checkpoint(*generator_, dir / "G.ckpt");
  nn::save_checkpoint(*discriminator_, dir / "D.ckpt");
  std::ofstream(dir / "arch.json") << to_json(arch_).dump(2) << "\n";
}

void TranslationModel::save_generator(const std::filesystem::path& path) const {
  nn::save_checkpoint(*generator_, path);
}

void TranslationModel::load_generator(const std::filesystem::path& path) {
  nn::load_checkpoint(*generator_, path);
}

std::unique_ptr<TranslationModel> TranslationModel::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "arch.json");
  if (!in) {
    throw MissingArtifactError("no translator at " + dir.string() + " (run `cdvg train-translator` first)");
  }
  auto model = std::make_unique<TranslationModel>(arch_from_json(nlohmann::json::parse(in)), 0);
  nn::load_checkpoint(*model->generator_, dir / "G.ckpt");
  nn::load_checkpoint(*model->discriminator_, dir / "D.ckpt");
  return model;
}

Var domain_classification_loss(const Var& logits, std::span<const int> targets) {
  return cross_entropy(logits, targets);
}

template <typename T>
double domain_classification_loss(std::span<const T> logits, std::size_t rows, std::size_t domains,
                                  std::span<const int> targets, std::span<T> grad) {
  return softmax_cross_entropy<T>(logits, rows, domains, targets, grad);
}

template double domain_classification_loss<float>(std::span<const float>, std::size_t, std::size_t,
                                                  std::span<const int>, std::span<float>);
template double domain_classification_loss<double>(std::span<const double>, std::size_t, std::size_t,
                                                   std::span<const int>, std::span<double>);

}  // namespace cdvg::translator
