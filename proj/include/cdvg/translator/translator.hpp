#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cdvg/core/rng.hpp"
#include "cdvg/data/dataset.hpp"
#include "cdvg/nn/module.hpp"
#include "cdvg/nn/optim.hpp"
#include "json.hpp"

namespace cdvg::translator {

// Anything that maps (images in [-1, 1], target domains) to images of the
// same shape in [-1, 1].
class Translator {
 public:
  virtual ~Translator() = default;
  virtual std::size_t num_domains() const = 0;
  // x: [n, c, h, w]; domains.size() == n.
  virtual Tensor translate(const Tensor& x, std::span<const int> domains) const = 0;
};

class IdentityTranslator : public Translator {
 public:
  explicit IdentityTranslator(std::size_t domains) : domains_(domains) {}
  std::size_t num_domains() const override { return domains_; }
  Tensor translate(const Tensor& x, std::span<const int> domains) const override;

 private:
  std::size_t domains_;
};

struct TranslatorArch {
  std::size_t image_size = 28;
  std::size_t channels = 3;
  std::size_t num_domains = 10;
  std::size_t g_conv_dim = 64;
  std::size_t d_conv_dim = 64;
  std::size_t g_blocks = 6;   // residual blocks in the generator bottleneck
  std::size_t d_repeat = 6;   // strided convolutions in the discriminator
};

struct TranslatorConfig {
  std::size_t iterations = 200000;
  std::size_t batch_size = 16;
  float lr_g = 1e-4f;
  float lr_d = 1e-4f;
  float beta1 = 0.5f;
  float beta2 = 0.999f;
  float lambda_cls = 1.0f;
  float lambda_rec = 10.0f;
  float lambda_gp = 10.0f;
  std::size_t n_critic = 5;
  bool horizontal_flip = true;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 250;
  std::size_t log_every = 10;

  void validate() const;
};

// Dataset profiles: architecture and schedule for a dataset family. The
// "desk" variants shrink channel widths for CPU runs.
struct TranslatorProfile {
  TranslatorArch arch;
  TranslatorConfig config;
};
TranslatorProfile colored_mnist_profile();
TranslatorProfile corrupted_cifar10_profile();
TranslatorProfile translator_profile(data::DatasetName name);
// Same profile with both networks' base width set to conv_dim.
TranslatorProfile desk_scale(TranslatorProfile profile, std::size_t conv_dim = 16);

nlohmann::json to_json(const TranslatorArch& arch);
nlohmann::json to_json(const TranslatorConfig& config);
TranslatorArch arch_from_json(const nlohmann::json& j);
TranslatorConfig translator_config_from_json(const nlohmann::json& j, TranslatorConfig base = {});

class ResidualBlock : public nn::Module {
 public:
  ResidualBlock(std::size_t channels, Rng& rng);
  Var forward(const Var& x) const;

 private:
  nn::Conv2d conv1_, conv2_;
  nn::InstanceNorm2d norm1_, norm2_;
};

// Conditional encoder/bottleneck/decoder; the target domain enters as K
// constant one-hot planes concatenated to the input.
class Generator : public nn::Module {
 public:
  Generator(const TranslatorArch& arch, Rng& rng);
  Var forward(const Var& x, std::span<const int> domains) const;

 private:
  TranslatorArch arch_;
  std::unique_ptr<nn::Conv2d> stem_;
  std::unique_ptr<nn::InstanceNorm2d> stem_norm_;
  std::vector<std::unique_ptr<nn::Conv2d>> down_;
  std::vector<std::unique_ptr<nn::InstanceNorm2d>> down_norm_;
  std::vector<std::unique_ptr<ResidualBlock>> blocks_;
  std::vector<std::unique_ptr<nn::ConvTranspose2d>> up_;
  std::vector<std::unique_ptr<nn::InstanceNorm2d>> up_norm_;
  std::unique_ptr<nn::Conv2d> head_;
};

struct DiscriminatorOutput {
  Var src;  // [n, 1, h', w'] realness map
  Var cls;  // [n, K] domain logits
};

class Discriminator : public nn::Module {
 public:
  Discriminator(const TranslatorArch& arch, Rng& rng);
  DiscriminatorOutput forward(const Var& x) const;

 private:
  TranslatorArch arch_;
  std::vector<std::unique_ptr<nn::Conv2d>> trunk_;
  std::unique_ptr<nn::Conv2d> src_head_, cls_head_;
};

class TranslationModel : public Translator {
 public:
  TranslationModel(const TranslatorArch& arch, std::uint64_t seed);

  std::size_t num_domains() const override { return arch_.num_domains; }
  // Deterministic, no graph recorded. Throws std::out_of_range on a bad domain.
  Tensor translate(const Tensor& x, std::span<const int> domains) const override;

  const TranslatorArch& arch() const { return arch_; }
  Generator& generator() { return *generator_; }
  const Generator& generator() const { return *generator_; }
  Discriminator& discriminator() { return *discriminator_; }

  void save(const std::filesystem::path& dir) const;
  // Generator only, for checkpoint streams.
  void save_generator(const std::filesystem::path& path) const;
  void load_generator(const std::filesystem::path& path);
  static std::unique_ptr<TranslationModel> load(const std::filesystem::path& dir);

 private:
  TranslatorArch arch_;
  std::unique_ptr<Generator> generator_;
  std::unique_ptr<Discriminator> discriminator_;
};

// Mean -log softmax(logits)[target] over rows.
Var domain_classification_loss(const Var& logits, std::span<const int> targets);
template <typename T>
double domain_classification_loss(std::span<const T> logits, std::size_t rows, std::size_t domains,
                                  std::span<const int> targets, std::span<T> grad = {});

// Mean |x - G(G(x, target), source)| for any generator callable.
using GeneratorFn = std::function<Var(const Var&, std::span<const int>)>;
Var cycle_reconstruction_loss(const GeneratorFn& g, const Var& x, std::span<const int> target,
                              std::span<const int> source);

struct StepLosses {
  double adv_d = 0.0;   // critic loss incl. weighted gradient penalty
  double adv_g = 0.0;
  double cls_d = 0.0;
  double cls_g = 0.0;
  double rec = 0.0;
};

class GanTrainer {
 public:
  GanTrainer(TranslationModel& model, const TranslatorConfig& config);

  // One critic update; every n_critic-th call (and the first) also one
  // generator update. x in [-1, 1], labels are the domain labels of x.
  // Throws DivergenceError on a non-finite loss.
  StepLosses step(const Tensor& x, std::span<const int> labels, Rng& rng);

  std::size_t iteration() const { return iteration_; }
  // Continue a run after `it` completed steps whose latest losses were `last`.
  void resume(std::size_t it, const StepLosses& last) {
    iteration_ = it;
    last_ = last;
  }
  nn::Adam& g_optimizer() { return g_opt_; }
  nn::Adam& d_optimizer() { return d_opt_; }

 private:
  TranslationModel& model_;
  TranslatorConfig config_;
  nn::Adam g_opt_, d_opt_;
  std::size_t iteration_ = 0;
  StepLosses last_;
};

struct TranslatorHooks {
  // After each checkpoint: (iteration, generator checkpoint path).
  std::function<void(std::size_t, const std::filesystem::path&)> on_checkpoint;
  // Every log_every iterations: (iteration, latest losses).
  std::function<void(std::size_t, const StepLosses&)> on_log;
};

struct TranslatorRun {
  std::unique_ptr<TranslationModel> model;
  std::vector<std::pair<std::size_t, std::filesystem::path>> checkpoints;
  StepLosses final_losses;
};

// Trains on the biased train split using class labels as domains, writing
// under out_dir:
//   model/            final G and D
//   checkpoints/G_<iteration>.ckpt   every checkpoint_every iterations (and 0)
//   state/            latest G, D and optimizer state for resume
//   losses.csv        iteration,adv_d,adv_g,cls_d,cls_g,rec
//   translator.json   arch, config, dataset hash, final losses
// An interrupted run resumes from state/.
TranslatorRun train_translator(const data::BiasedDataset& dataset, const TranslatorArch& arch,
                               const TranslatorConfig& config, const std::filesystem::path& out_dir,
                               const std::string& dataset_hash = "", const TranslatorHooks& hooks = {});

}  // namespace cdvg::translator
