#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "cdvg/core/errors.hpp"
#include "cdvg/core/ops.hpp"
#include "cdvg/data/batch.hpp"
#include "cdvg/data/dataset_io.hpp"
#include "cdvg/diagnostics/diagnostics.hpp"
#include "cdvg/nn/optim.hpp"

namespace cdvg::diagnostics {

namespace {

std::vector<int> oracle_labels(const data::BiasedDataset& ds, std::span<const std::size_t> idx, LabelKind kind) {
  return kind == LabelKind::bias ? data::bias_labels(ds, idx) : data::class_labels(ds, idx);
}

double accuracy(debias::Classifier& model, const data::BiasedDataset& ds, std::span<const std::size_t> idx,
                LabelKind kind) {
  if (idx.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < idx.size(); begin += 500) {
    const auto chunk = idx.subspan(begin, std::min<std::size_t>(500, idx.size() - begin));
    const Tensor logits = model.predict_logits(data::pack_images(ds, chunk, data::PixelRange::unit));
    const auto labels = oracle_labels(ds, chunk, kind);
    const std::size_t k = logits.dim(1);
    for (std::size_t r = 0; r < chunk.size(); ++r) {
      const float* row = logits.data() + r * k;
      const auto best = static_cast<int>(std::max_element(row, row + k) - row);
      correct += best == labels[r] ? 1 : 0;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(idx.size());
}

// Cross-entropy against the uniform distribution over K classes.
Var uniform_cross_entropy(const Var& logits) {
  const std::size_t rows = logits.value().dim(0), k = logits.value().dim(1);
  Var total;
  for (std::size_t c = 0; c < k; ++c) {
    std::vector<int> labels(rows, static_cast<int>(c));
    Var ce = cross_entropy(logits, labels);
    total = total.defined() ? add(total, ce) : ce;
  }
  return scale(total, 1.0f / static_cast<float>(k));
}

// Moves each image by up to `max_shift` pixels in x and y, filling with 0.
void random_shift(Tensor& batch, std::size_t max_shift, Rng& rng) {
  if (max_shift == 0) return;
  const std::size_t n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  const auto span = static_cast<long>(2 * max_shift + 1);
  std::vector<float> plane(h * w);
  for (std::size_t i = 0; i < n; ++i) {
    const long dy = static_cast<long>(rng.below(static_cast<std::size_t>(span))) - static_cast<long>(max_shift);
    const long dx = static_cast<long>(rng.below(static_cast<std::size_t>(span))) - static_cast<long>(max_shift);
    for (std::size_t ch = 0; ch < c; ++ch) {
      float* img = batch.data() + (i * c + ch) * h * w;
      std::fill(plane.begin(), plane.end(), 0.0f);
      for (long y = 0; y < static_cast<long>(h); ++y) {
        const long sy = y - dy;
        if (sy < 0 || sy >= static_cast<long>(h)) continue;
        for (long x = 0; x < static_cast<long>(w); ++x) {
          const long sx = x - dx;
          if (sx >= 0 && sx < static_cast<long>(w)) plane[y * w + x] = img[sy * w + sx];
        }
      }
      std::copy(plane.begin(), plane.end(), img);
    }
  }
}

}  // namespace

std::string_view to_string(LabelKind kind) { return kind == LabelKind::bias ? "bias" : "signal"; }

LabelKind parse_label_kind(std::string_view text) {
  if (text == "bias") return LabelKind::bias;
  if (text == "signal") return LabelKind::signal;
  throw ConfigError("unknown oracle label kind '" + std::string(text) + "' (expected bias or signal)");
}

void OracleConfig::validate() const {
  if (epochs == 0) throw ConfigError("oracle epochs must be positive");
  if (batch_size == 0) throw ConfigError("oracle batch_size must be positive");
  if (!(lr > 0.0f)) throw ConfigError("oracle lr must be positive");
  if (!(held_out_fraction > 0.0 && held_out_fraction < 1.0)) {
    throw ConfigError("oracle held_out_fraction must lie in (0, 1)");
  }
}

nlohmann::json to_json(const OracleConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"held_out_fraction", c.held_out_fraction},
          {"outlier_exposure", c.outlier_exposure},
          {"outliers_per_batch", c.outliers_per_batch},
          {"max_shift", c.max_shift},
          {"seed", c.seed}};
}

OracleConfig oracle_config_from_json(const nlohmann::json& j, OracleConfig c) {
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.held_out_fraction = j.value("held_out_fraction", c.held_out_fraction);
  c.outlier_exposure = j.value("outlier_exposure", c.outlier_exposure);
  c.outliers_per_batch = j.value("outliers_per_batch", c.outliers_per_batch);
  c.max_shift = j.value("max_shift", c.max_shift);
  c.seed = j.value("seed", c.seed);
  return c;
}

Tensor outlier_batch(std::size_t n, std::size_t channels, std::size_t size, Rng& rng) {
  Tensor out(Shape{n, channels, size, size});
  const std::size_t plane = size * size;
  const std::size_t coarse = std::max<std::size_t>(2, size / 4);
  for (std::size_t i = 0; i < n; ++i) {
    float* img = out.data() + i * channels * plane;
    switch (rng.below(4)) {
      case 0:  // colour noise
        for (std::size_t p = 0; p < channels * plane; ++p) img[p] = static_cast<float>(rng.uniform());
        break;
      case 1:  // grey noise
        for (std::size_t p = 0; p < plane; ++p) {
          const auto v = static_cast<float>(rng.uniform());
          for (std::size_t c = 0; c < channels; ++c) img[c * plane + p] = v;
        }
        break;
      case 2: {  // smooth colour noise
        std::vector<float> grid(channels * coarse * coarse);
        for (auto& v : grid) v = static_cast<float>(rng.uniform());
        const double step = static_cast<double>(coarse - 1) / static_cast<double>(size - 1);
        for (std::size_t c = 0; c < channels; ++c) {
          for (std::size_t y = 0; y < size; ++y) {
            const double gy = y * step;
            const auto y0 = std::min(static_cast<std::size_t>(gy), coarse - 2);
            const double fy = gy - y0;
            for (std::size_t x = 0; x < size; ++x) {
              const double gx = x * step;
              const auto x0 = std::min(static_cast<std::size_t>(gx), coarse - 2);
              const double fx = gx - x0;
              const float* g = grid.data() + c * coarse * coarse;
              const double top = g[y0 * coarse + x0] * (1 - fx) + g[y0 * coarse + x0 + 1] * fx;
              const double bot = g[(y0 + 1) * coarse + x0] * (1 - fx) + g[(y0 + 1) * coarse + x0 + 1] * fx;
              img[c * plane + y * size + x] = static_cast<float>(top * (1 - fy) + bot * fy);
            }
          }
        }
        break;
      }
      default: {  // flat grey with mild noise
        const double level = rng.uniform(0.2, 0.8);
        for (std::size_t p = 0; p < channels * plane; ++p) {
          img[p] = static_cast<float>(std::clamp(level + rng.normal(0.0, 0.05), 0.0, 1.0));
        }
      }
    }
  }
  return out;
}

OracleClassifier train_oracle(const data::BiasedDataset& unbiased, LabelKind kind, const debias::ModelConfig& model,
                              const OracleConfig& config) {
  if (unbiased.split == data::Split::train) {
    throw ProvenanceError("oracles must be trained on an unbiased split, got the biased train split (ratio " +
                          std::to_string(unbiased.config.ratio) + ")");
  }
  config.validate();
  model.validate();
  if (unbiased.size() < 2) throw ConfigError("oracle training set needs at least 2 samples");
  if (model.num_classes != unbiased.num_classes) {
    throw ConfigError("oracle model has " + std::to_string(model.num_classes) + " classes but the dataset has " +
                      std::to_string(unbiased.num_classes));
  }
  const auto& first = unbiased.samples.front().image;
  if (first.height != model.image_size || first.channels != model.channels) {
    throw ConfigError("oracle model expects " + std::to_string(model.image_size) + "px images with " +
                      std::to_string(model.channels) + " channels");
  }

  std::vector<std::size_t> order(unbiased.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng split_rng(mix_seed(config.seed, 0x04AC1E));
  split_rng.shuffle(order.begin(), order.end());
  const auto held = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(config.held_out_fraction * static_cast<double>(order.size()))), 1,
      order.size() - 1);
  std::vector<std::size_t> held_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(held));
  std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(held), order.end());

  OracleClassifier oracle;
  oracle.label_kind = kind;
  oracle.provenance = data::dataset_fingerprint(unbiased);
  oracle.model = std::make_unique<debias::DebiasModel>(model, mix_seed(config.seed, 0x0AC1E));
  auto& net = *oracle.model;
  nn::Adam optimizer(net.parameters(), {config.lr, 0.9f, 0.999f, 1e-8f});
  Rng outlier_rng(mix_seed(config.seed, 0x0E71E5));
  Rng shift_rng(mix_seed(config.seed, 0x5A1F7));
  const std::size_t batches = (train_idx.size() + config.batch_size - 1) / config.batch_size;
  const std::size_t total_steps = batches * config.epochs;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Rng shuffle_rng(mix_seed(config.seed, 0x0AC0000 + epoch));
    shuffle_rng.shuffle(train_idx.begin(), train_idx.end());
    for (std::size_t begin = 0; begin < train_idx.size(); begin += config.batch_size) {
      const auto idx = std::span(train_idx).subspan(begin, std::min(config.batch_size, train_idx.size() - begin));
      const auto labels = oracle_labels(unbiased, idx, kind);
      Tensor x = data::pack_images(unbiased, idx, data::PixelRange::unit);
      random_shift(x, config.max_shift, shift_rng);
      optimizer.set_lr(nn::cosine_lr(config.lr, config.lr * 1e-2f, step++, total_steps));
      optimizer.zero_grad();
      Var loss = cross_entropy(net.classify(net.encode(Var(x))), labels);
      if (config.outlier_exposure && config.outliers_per_batch > 0) {
        const Tensor noise = outlier_batch(config.outliers_per_batch, model.channels, model.image_size, outlier_rng);
        loss = add(loss, scale(uniform_cross_entropy(net.classify(net.encode(Var(noise)))), 0.5f));
      }
      if (!std::isfinite(loss.item())) {
        throw DivergenceError("oracle training diverged at epoch " + std::to_string(epoch));
      }
      backward(loss);
      optimizer.step();
    }
  }

  oracle.held_out_accuracy = accuracy(net, unbiased, held_idx, kind);
  oracle.sidecar = {{"label_kind", std::string(to_string(kind))},
                    {"provenance", oracle.provenance},
                    {"held_out_accuracy", oracle.held_out_accuracy},
                    {"held_out_size", held_idx.size()},
                    {"train_size", train_idx.size()},
                    {"dataset",
                     {{"name", std::string(data::to_string(unbiased.config.name))},
                      {"split", std::string(data::to_string(unbiased.split))},
                      {"seed", unbiased.config.seed}}},
                    {"config", to_json(config)},
                    {"model", debias::to_json(model)}};
  return oracle;
}

void OracleClassifier::save(const std::filesystem::path& dir) const {
  if (!model) throw ConfigError("cannot save an empty oracle");
  std::filesystem::create_directories(dir);
  model->save(dir / "model");
  const auto tmp = dir / "oracle.json.tmp";
  std::ofstream(tmp) << sidecar.dump(2) << "\n";
  std::filesystem::rename(tmp, dir / "oracle.json");
}

OracleClassifier OracleClassifier::load(const std::filesystem::path& dir) {
  const auto meta_path = dir / "oracle.json";
  if (!std::filesystem::exists(meta_path)) {
    throw MissingArtifactError("no oracle at " + dir.string() + "; run `cdvg diagnose` to train one");
  }
  OracleClassifier oracle;
  try {
    std::ifstream in(meta_path);
    oracle.sidecar = nlohmann::json::parse(in);
    oracle.label_kind = parse_label_kind(oracle.sidecar.at("label_kind").get<std::string>());
    oracle.provenance = oracle.sidecar.at("provenance").get<std::string>();
    oracle.held_out_accuracy = oracle.sidecar.at("held_out_accuracy").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError("bad oracle sidecar " + meta_path.string() + ": " + e.what());
  }
  oracle.model = debias::DebiasModel::load(dir / "model");
  return oracle;
}

}  // namespace cdvg::diagnostics
