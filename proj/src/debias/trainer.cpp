#include "cdvg/debias/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <unistd.h>

#include "cdvg/core/errors.hpp"
#include "cdvg/core/hash.hpp"
#include "cdvg/data/batch.hpp"
#include "cdvg/debias/contrastive.hpp"

namespace cdvg::debias {
namespace {

using StepFn = std::function<CdvgLosses(DebiasModel&, nn::Adam&, std::span<const std::size_t>, Rng&)>;

void check_inputs(const data::BiasedDataset& train, const data::BiasedDataset& test, const ModelConfig& mc) {
  if (train.split != data::Split::train) {
    throw ProvenanceError("training expects the biased train split, got " + std::string(data::to_string(train.split)));
  }
  if (test.split != data::Split::unbiased_test) {
    throw ProvenanceError("evaluation expects the unbiased test split, got " + std::string(data::to_string(test.split)));
  }
  if (train.samples.empty() || test.samples.empty()) throw ConfigError("empty train or test set");
  if (mc.num_classes != train.num_classes || test.num_classes != train.num_classes) {
    throw ConfigError("model has " + std::to_string(mc.num_classes) + " classes, train set " +
                      std::to_string(train.num_classes) + ", test set " + std::to_string(test.num_classes));
  }
  const auto& img = train.samples.front().image;
  if (img.height != mc.image_size || img.width != mc.image_size || img.channels != mc.channels) {
    throw ConfigError("model image_size/channels do not match the dataset images");
  }
}

nlohmann::json without_seed(nlohmann::json j) {
  j.erase("seed");
  return j;
}

RunResult run_training(const data::BiasedDataset& train, const data::BiasedDataset& test,
                       const ModelConfig& model_config, const TrainConfig& config, const nlohmann::json& extra,
                       const std::filesystem::path& out_dir, const RunContext& context, const StepFn& step) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  fs::remove(out_dir / "run.json");

  RunResult result;
  result.model = std::make_unique<DebiasModel>(model_config, mix_seed(config.seed, 0x30DE1));
  nn::Adam optimizer(result.model->parameters(), {config.lr, 0.9f, 0.999f, 1e-8f});

  nlohmann::json cell = context.cell;
  cell["method"] = context.method;
  cell["train_config"] = without_seed(to_json(config));
  cell["model_config"] = to_json(model_config);
  for (const auto& [key, value] : extra.items()) cell[key] = value;
  auto& metrics = result.metrics;
  metrics.dataset = std::string(data::to_string(train.config.name));
  metrics.ratio = train.config.ratio;
  metrics.method = context.method;
  metrics.seed = config.seed;
  metrics.config_hash = sha256_hex(cell.dump());

  std::ofstream log(out_dir / "metrics.ndjson", std::ios::trunc);
  const std::size_t n = train.size();
  const std::size_t steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const std::size_t total_steps = steps_per_epoch * config.epochs;
  const float floor = config.lr * config.lr_floor_factor;
  std::vector<std::size_t> order(n);
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t global = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(mix_seed(config.seed, 0xE90C0000 + epoch));
    shuffle_rng.shuffle(order.begin(), order.end());
    eval::EpochRecord record;
    record.epoch = epoch;
    for (std::size_t start = 0; start < n; start += config.batch_size, ++global) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(config.batch_size, n - start));
      optimizer.set_lr(nn::cosine_lr(config.lr, floor, global, total_steps));
      record.lr = optimizer.lr();
      Rng rng(mix_seed(config.seed, 0x57E90000 + global));
      const CdvgLosses l = step(*result.model, optimizer, idx, rng);
      const double w = static_cast<double>(idx.size()) / static_cast<double>(n);
      record.ce_orig += w * l.ce_orig;
      record.ce_trans += w * l.ce_trans;
      record.cl += w * l.cl;
    }
    record.test_acc = eval::unbiased_accuracy(*result.model, test);
    record.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log << eval::to_json(record).dump() << '\n';
    log.flush();
    metrics.epochs.push_back(record);
    if (context.on_epoch) context.on_epoch(record);
  }

  result.model->save(out_dir / "model");
  nlohmann::json run{{"dataset", metrics.dataset},
                     {"ratio", metrics.ratio},
                     {"method", metrics.method},
                     {"seed", metrics.seed},
                     {"config_hash", metrics.config_hash},
                     {"train_config", to_json(config)},
                     {"model_config", to_json(model_config)},
                     {"cell", cell},
                     {"upstream", context.upstream},
                     {"epochs", config.epochs},
                     {"complete", true}};
  if (!metrics.epochs.empty()) {
    run["final_test_acc"] = metrics.last().test_acc;
    run["best_test_acc"] = metrics.best().test_acc;
    run["best_epoch"] = metrics.best().epoch;
  }
  for (const auto& [key, value] : extra.items()) run[key] = value;
  std::ofstream(out_dir / "run.json.tmp") << run.dump(2) << "\n";
  fs::rename(out_dir / "run.json.tmp", out_dir / "run.json");
  return result;
}

}  // namespace

std::string_view to_string(Ablation a) {
  switch (a) {
    case Ablation::full: return "full";
    case Ablation::no_G: return "no_G";
    case Ablation::no_CL: return "no_CL";
  }
  return "full";
}

Ablation parse_ablation(std::string_view text) {
  if (text == "full") return Ablation::full;
  if (text == "no_G" || text == "no-g" || text == "no_g") return Ablation::no_G;
  if (text == "no_CL" || text == "no-cl" || text == "no_cl") return Ablation::no_CL;
  throw ConfigError("ablation: unknown value '" + std::string(text) + "' (expected full, no-g or no-cl)");
}

void TrainConfig::validate() const {
  if (lambda_cl < 0.0f) throw ConfigError("lambda must be >= 0");
  if (!(tau > 0.0f)) throw ConfigError("tau must be > 0");
  if (batch_size == 0) throw ConfigError("batch_size must be > 0");
  if (!(lr > 0.0f)) throw ConfigError("lr must be > 0");
  if (!(lr_floor_factor >= 0.0f) || lr_floor_factor > 1.0f) throw ConfigError("lr_floor_factor must be in [0, 1]");
}

TrainConfig colored_mnist_train_config() { return {}; }

TrainConfig corrupted_cifar10_train_config() {
  TrainConfig c;
  c.epochs = 500;
  return c;
}

TrainConfig train_profile(data::DatasetName name) {
  return name == data::DatasetName::colored_mnist ? colored_mnist_train_config() : corrupted_cifar10_train_config();
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"lambda_cl", c.lambda_cl}, {"tau", c.tau},
          {"batch_size", c.batch_size}, {"epochs", c.epochs},
          {"lr", c.lr}, {"lr_floor_factor", c.lr_floor_factor},
          {"ablation", to_string(c.ablation)}, {"seed", c.seed},
          {"translation_cache_mb", c.translation_cache_mb}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
  c.lambda_cl = j.value("lambda_cl", c.lambda_cl);
  c.tau = j.value("tau", c.tau);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.lr = j.value("lr", c.lr);
  c.lr_floor_factor = j.value("lr_floor_factor", c.lr_floor_factor);
  if (j.contains("ablation")) c.ablation = parse_ablation(j.at("ablation").get<std::string>());
  c.seed = j.value("seed", c.seed);
  c.translation_cache_mb = j.value("translation_cache_mb", c.translation_cache_mb);
  return c;
}

TransformFn translator_transform(const translator::Translator& g) {
  return [&g](const Tensor& x, std::span<const int> targets) {
    Tensor signed_x = x.clone();
    data::to_signed_unit(signed_x);
    Tensor out = g.translate(signed_x, targets);
    data::to_unit(out);
    return out;
  };
}

TranslationCache::TranslationCache(const translator::Translator& g, const data::BiasedDataset& dataset,
                                   std::size_t batch)
    : domains_(g.num_domains()) {
  if (dataset.samples.empty()) return;
  const auto& img = dataset.samples.front().image;
  image_shape_ = {img.channels, img.height, img.width};
  per_image_ = img.channels * img.height * img.width;
  values_.resize(dataset.size() * domains_ * per_image_);
  const TransformFn transform = translator_transform(g);
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < dataset.size(); start += batch) {
    idx.resize(std::min(batch, dataset.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const Tensor x = data::pack_images(dataset, idx, data::PixelRange::unit);
    for (std::size_t k = 0; k < domains_; ++k) {
      const std::vector<int> targets(idx.size(), static_cast<int>(k));
      const Tensor out = transform(x, targets);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        std::memcpy(&values_[((idx[i] * domains_) + k) * per_image_], out.data() + i * per_image_,
                    per_image_ * sizeof(float));
      }
    }
  }
}

Tensor TranslationCache::lookup(std::span<const std::size_t> indices, std::span<const int> targets) const {
  if (indices.size() != targets.size()) throw std::invalid_argument("TranslationCache: index/target count mismatch");
  Tensor out(Shape{indices.size(), image_shape_[0], image_shape_[1], image_shape_[2]});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= domains_) {
      throw std::out_of_range("TranslationCache: domain " + std::to_string(targets[i]) + " out of range");
    }
    std::memcpy(out.data() + i * per_image_, &values_[(indices[i] * domains_ + targets[i]) * per_image_],
                per_image_ * sizeof(float));
  }
  return out;
}

std::size_t TranslationCache::bytes_needed(const data::BiasedDataset& dataset, std::size_t domains) {
  if (dataset.samples.empty()) return 0;
  return dataset.size() * domains * dataset.samples.front().image.pixels.size() * sizeof(float);
}

namespace {
constexpr char kCacheMagic[8] = {'C', 'D', 'V', 'G', 'T', 'C', '1', '\n'};
}

void TranslationCache::save(const std::filesystem::path& path, const std::string& key) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary);
    out.write(kCacheMagic, sizeof kCacheMagic);
    const std::uint64_t header[6] = {key.size(), values_.size() / std::max<std::size_t>(1, domains_ * per_image_),
                                     domains_, image_shape_.at(0), image_shape_.at(1), image_shape_.at(2)};
    out.write(reinterpret_cast<const char*>(header), sizeof header);
    out.write(key.data(), static_cast<std::streamsize>(key.size()));
    out.write(reinterpret_cast<const char*>(values_.data()), static_cast<std::streamsize>(values_.size() * sizeof(float)));
    if (!out) throw std::runtime_error("failed to write translation cache " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::unique_ptr<TranslationCache> TranslationCache::load(const std::filesystem::path& path, const std::string& key,
                                                         const data::BiasedDataset& dataset, std::size_t domains) {
  std::ifstream in(path, std::ios::binary);
  if (!in || dataset.samples.empty()) return nullptr;
  char magic[sizeof kCacheMagic];
  std::uint64_t header[6];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kCacheMagic, sizeof magic) != 0) return nullptr;
  if (!in.read(reinterpret_cast<char*>(header), sizeof header)) return nullptr;
  const auto& img = dataset.samples.front().image;
  if (header[0] != key.size() || header[1] != dataset.size() || header[2] != domains || header[3] != img.channels ||
      header[4] != img.height || header[5] != img.width) {
    return nullptr;
  }
  std::string stored(key.size(), '\0');
  if (!in.read(stored.data(), static_cast<std::streamsize>(stored.size())) || stored != key) return nullptr;
  std::unique_ptr<TranslationCache> cache(new TranslationCache());
  cache->domains_ = domains;
  cache->image_shape_ = {img.channels, img.height, img.width};
  cache->per_image_ = img.channels * img.height * img.width;
  cache->values_.resize(dataset.size() * domains * cache->per_image_);
  if (!in.read(reinterpret_cast<char*>(cache->values_.data()),
               static_cast<std::streamsize>(cache->values_.size() * sizeof(float)))) {
    return nullptr;
  }
  return cache;
}

StepBatch make_step_batch(const Tensor& x, std::span<const int> labels, std::size_t num_domains,
                          const TransformFn& transform, const AugmentationPolicy& policy, Rng& rng) {
  StepBatch b;
  b.x = x;
  b.labels.assign(labels.begin(), labels.end());
  b.targets.resize(labels.size());
  for (int& t : b.targets) t = sample_target_domain(static_cast<long>(num_domains), rng);
  b.x_trans = transform ? transform(x, b.targets) : x.clone();
  const std::uint64_t s1 = rng.next(), s2 = rng.next();
  b.view = augment_batch(b.x, policy, s1);
  b.view_trans = augment_batch(b.x_trans, policy, s2);
  return b;
}

CdvgLosses cdvg_objective(DebiasModel& model, const StepBatch& batch, const TrainConfig& config, Var* total) {
  const std::size_t n = batch.labels.size();
  Var h = model.encode(Var(batch.view));
  Var h_trans = model.encode(Var(batch.view_trans));
  Var ce_orig = cross_entropy(model.classify(h), batch.labels);
  Var ce_trans = cross_entropy(model.classify(h_trans), batch.labels);
  Var loss = add(ce_orig, ce_trans);
  CdvgLosses out;
  out.ce_orig = ce_orig.item();
  out.ce_trans = ce_trans.item();
  if (config.ablation != Ablation::no_CL) {
    Var z = interleave_rows(model.project(h), model.project(h_trans));
    Var cl = scale(nt_xent(z, config.tau), 1.0f / static_cast<float>(n));
    out.cl = cl.item();
    loss = add(loss, scale(cl, config.lambda_cl));
  }
  out.total = loss.item();
  if (total != nullptr) *total = loss;
  return out;
}

CdvgLosses cdvg_step(DebiasModel& model, nn::Adam& optimizer, const StepBatch& batch, const TrainConfig& config) {
  optimizer.zero_grad();
  Var total;
  const CdvgLosses l = cdvg_objective(model, batch, config, &total);
  if (!std::isfinite(l.total)) {
    throw DivergenceError("debias step produced a non-finite loss: ce_orig=" + std::to_string(l.ce_orig) +
                          " ce_trans=" + std::to_string(l.ce_trans) + " cl=" + std::to_string(l.cl));
  }
  backward(total);
  optimizer.step();
  return l;
}

double vanilla_step(DebiasModel& model, nn::Adam& optimizer, const Tensor& x, std::span<const int> labels,
                    std::size_t copies) {
  optimizer.zero_grad();
  Var loss;
  for (std::size_t c = 0; c < copies; ++c) {
    Var ce = cross_entropy(model.classify(model.encode(Var(x))), labels);
    loss = loss.defined() ? add(loss, ce) : ce;
  }
  const double value = loss.item();
  if (!std::isfinite(value)) throw DivergenceError("vanilla step produced a non-finite loss");
  backward(loss);
  optimizer.step();
  return value;
}

RunResult train_cdvg(const data::BiasedDataset& train, const data::BiasedDataset& test,
                     const translator::Translator* generator, const ModelConfig& model_config,
                     const TrainConfig& config, const AugmentationPolicy& policy,
                     const std::filesystem::path& out_dir, const RunContext& context) {
  config.validate();
  policy.validate();
  check_inputs(train, test, model_config);
  if (policy.output_size != model_config.image_size) throw ConfigError("augmentation output_size must match the model");
  const bool use_g = config.ablation != Ablation::no_G;
  if (use_g && generator == nullptr) throw ConfigError("a generator is required unless ablation is no_G");
  if (use_g && generator->num_domains() != train.num_classes) {
    throw ConfigError("generator has " + std::to_string(generator->num_domains()) + " domains but the dataset has " +
                      std::to_string(train.num_classes) + " classes");
  }

  std::unique_ptr<TranslationCache> cache;
  if (use_g && TranslationCache::bytes_needed(train, train.num_classes) <= config.translation_cache_mb << 20) {
    if (!context.cache_file.empty()) {
      cache = TranslationCache::load(context.cache_file, context.cache_key, train, train.num_classes);
    }
    if (!cache) {
      cache = std::make_unique<TranslationCache>(*generator, train);
      if (!context.cache_file.empty()) cache->save(context.cache_file, context.cache_key);
    }
  }
  const TransformFn direct = use_g ? translator_transform(*generator) : TransformFn{};

  StepFn step = [&](DebiasModel& model, nn::Adam& opt, std::span<const std::size_t> idx, Rng& rng) {
    const Tensor x = data::pack_images(train, idx, data::PixelRange::unit);
    const auto labels = data::class_labels(train, idx);
    TransformFn transform = direct;
    if (cache) transform = [&](const Tensor&, std::span<const int> t) { return cache->lookup(idx, t); };
    const StepBatch batch = make_step_batch(x, labels, train.num_classes, transform, policy, rng);
    return cdvg_step(model, opt, batch, config);
  };
  return run_training(train, test, model_config, config, {{"policy", to_json(policy)}}, out_dir, context, step);
}

RunResult train_vanilla(const data::BiasedDataset& train, const data::BiasedDataset& test,
                        const ModelConfig& model_config, const TrainConfig& config,
                        const std::filesystem::path& out_dir, const RunContext& context) {
  config.validate();
  check_inputs(train, test, model_config);
  StepFn step = [&](DebiasModel& model, nn::Adam& opt, std::span<const std::size_t> idx, Rng&) {
    const Tensor x = data::pack_images(train, idx, data::PixelRange::unit);
    const auto labels = data::class_labels(train, idx);
    CdvgLosses l;
    l.ce_orig = l.total = vanilla_step(model, opt, x, labels);
    return l;
  };
  return run_training(train, test, model_config, config, nlohmann::json::object(), out_dir, context, step);
}

}  // namespace cdvg::debias
