#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cdvg/data/dataset.hpp"
#include "cdvg/debias/augment.hpp"
#include "cdvg/debias/model.hpp"
#include "cdvg/eval/eval.hpp"
#include "cdvg/nn/optim.hpp"
#include "cdvg/translator/translator.hpp"
#include "json.hpp"

namespace cdvg::debias {

enum class Ablation { full, no_G, no_CL };
std::string_view to_string(Ablation ablation);
// Accepts full, no_G / no-g / no_g, no_CL / no-cl / no_cl.
Ablation parse_ablation(std::string_view text);

struct TrainConfig {
  float lambda_cl = 1.0f;
  float tau = 0.01f;
  std::size_t batch_size = 256;
  std::size_t epochs = 200;
  float lr = 1e-3f;
  float lr_floor_factor = 1e-3f;  // cosine annealing ends at lr * factor
  Ablation ablation = Ablation::full;
  std::uint64_t seed = 0;
  // Precompute G(x, k) for every training sample and domain when it fits.
  std::size_t translation_cache_mb = 1024;

  void validate() const;
};

TrainConfig colored_mnist_train_config();
TrainConfig corrupted_cifar10_train_config();
TrainConfig train_profile(data::DatasetName name);

nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

// (images in [0, 1], targets) -> bias-transformed images in [0, 1].
using TransformFn = std::function<Tensor(const Tensor& x, std::span<const int> targets)>;

// Adapts a translator working in [-1, 1].
TransformFn translator_transform(const translator::Translator& g);

// G(x_i, k) for every sample i and domain k, computed once. Lookups return
// exactly what the translator returns for that sample.
class TranslationCache {
 public:
  TranslationCache(const translator::Translator& g, const data::BiasedDataset& dataset, std::size_t batch = 256);
  Tensor lookup(std::span<const std::size_t> indices, std::span<const int> targets) const;
  static std::size_t bytes_needed(const data::BiasedDataset& dataset, std::size_t domains);

  // Raw float dump tagged with `key` (identifies generator and dataset).
  void save(const std::filesystem::path& path, const std::string& key) const;
  // Null when the file is absent or was written for a different key or shape.
  static std::unique_ptr<TranslationCache> load(const std::filesystem::path& path, const std::string& key,
                                                const data::BiasedDataset& dataset, std::size_t domains);

 private:
  TranslationCache() = default;

  std::size_t domains_ = 0, per_image_ = 0;
  Shape image_shape_;
  std::vector<float> values_;  // [sample][domain][c*h*w]
};

// Everything one step consumes; views are cached so losses can be recomputed.
struct StepBatch {
  Tensor x, x_trans;     // originals and bias-transformed images
  Tensor view, view_trans;
  std::vector<int> labels, targets;
};

// Samples y' uniformly, applies `transform` (identity when empty), then two
// independent augmentation draws.
StepBatch make_step_batch(const Tensor& x, std::span<const int> labels, std::size_t num_domains,
                          const TransformFn& transform, const AugmentationPolicy& policy, Rng& rng);

struct CdvgLosses {
  double ce_orig = 0.0;
  double ce_trans = 0.0;
  double cl = 0.0;  // NT-Xent summed over the 2N views, divided by N
  double total = 0.0;
};

// Builds the objective ce_orig + ce_trans + lambda * cl on the batch views.
// `total` receives the graph; cl is skipped for no_CL.
CdvgLosses cdvg_objective(DebiasModel& model, const StepBatch& batch, const TrainConfig& config, Var* total);

// One optimizer update of encoder, classifier and projection head. The
// transform is never updated. Throws DivergenceError on a non-finite loss.
CdvgLosses cdvg_step(DebiasModel& model, nn::Adam& optimizer, const StepBatch& batch, const TrainConfig& config);

// Plain cross-entropy update; `copies` independent forward passes of the same
// batch are summed (copies = 2 is the double-CE reference step).
double vanilla_step(DebiasModel& model, nn::Adam& optimizer, const Tensor& x, std::span<const int> labels,
                    std::size_t copies = 1);

struct RunContext {
  std::string method;        // vanilla, cdvg, cdvg-no-g, cdvg-no-cl
  nlohmann::json upstream;   // provenance hashes, copied into run.json
  nlohmann::json cell;       // seed-independent settings that define the table cell
  std::function<void(const eval::EpochRecord&)> on_epoch;
  // Optional on-disk translation cache shared between runs; reused when its
  // key matches, written otherwise.
  std::filesystem::path cache_file;
  std::string cache_key;
};

struct RunResult {
  std::unique_ptr<DebiasModel> model;
  eval::RunMetrics metrics;
};

// Writes under out_dir: metrics.ndjson (one record per epoch), model/ and
// run.json (written last). Evaluates unbiased test accuracy every epoch.
RunResult train_cdvg(const data::BiasedDataset& train, const data::BiasedDataset& test,
                     const translator::Translator* generator, const ModelConfig& model_config,
                     const TrainConfig& config, const AugmentationPolicy& policy,
                     const std::filesystem::path& out_dir, const RunContext& context);

RunResult train_vanilla(const data::BiasedDataset& train, const data::BiasedDataset& test,
                        const ModelConfig& model_config, const TrainConfig& config,
                        const std::filesystem::path& out_dir, const RunContext& context);

}  // namespace cdvg::debias
