#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cdvg/data/dataset.hpp"
#include "cdvg/data/image.hpp"
#include "cdvg/debias/model.hpp"
#include "cdvg/translator/translator.hpp"
#include "json.hpp"

namespace cdvg::diagnostics {

enum class LabelKind { bias, signal };
std::string_view to_string(LabelKind kind);
LabelKind parse_label_kind(std::string_view text);

struct OracleConfig {
  std::size_t epochs = 40;
  std::size_t batch_size = 256;
  float lr = 1e-3f;
  double held_out_fraction = 0.1;
  // Synthetic noise images fitted toward the uniform prediction, so that
  // off-manifold inputs score near ln K.
  bool outlier_exposure = true;
  std::size_t outliers_per_batch = 64;
  // Random translation of training images by up to this many pixels.
  std::size_t max_shift = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const OracleConfig& config);
OracleConfig oracle_config_from_json(const nlohmann::json& j, OracleConfig base = {});

struct OracleClassifier : debias::Classifier {
  std::unique_ptr<debias::DebiasModel> model;
  LabelKind label_kind = LabelKind::bias;
  std::string provenance;  // fingerprint of the unbiased training set
  double held_out_accuracy = 0.0;
  nlohmann::json sidecar;  // config, split sizes, provenance

  std::size_t num_classes() const override { return model->num_classes(); }
  Tensor predict_logits(const Tensor& x) override { return model->predict_logits(x); }

  // model/ + oracle.json
  void save(const std::filesystem::path& dir) const;
  static OracleClassifier load(const std::filesystem::path& dir);
};

// Trains on an unbiased split only (ProvenanceError otherwise) and records
// the accuracy on a seeded held-out fraction.
OracleClassifier train_oracle(const data::BiasedDataset& unbiased, LabelKind kind, const debias::ModelConfig& model,
                              const OracleConfig& config);

// Noise images in [0, 1], [n, c, size, size], used for outlier exposure.
Tensor outlier_batch(std::size_t n, std::size_t channels, std::size_t size, Rng& rng);

struct ProbePoint {
  std::size_t iteration = 0;
  double bias_loss = 0.0;
  double signal_loss = 0.0;
};

struct ProbeCurve {
  std::vector<ProbePoint> points;
  // Strictly increasing iterations, finite losses.
  void validate() const;
};

struct ProbeSet {
  Tensor images;             // [n, c, h, w] in [0, 1]
  std::vector<int> targets;  // y', fixed for every checkpoint
};

// `n` samples and y' drawn once from `seed`.
ProbeSet make_probe_set(const data::BiasedDataset& dataset, std::size_t n, std::size_t num_domains,
                        std::uint64_t seed);

// Mean CE of both oracles against y' on G(x, y').
ProbePoint probe_translator(const translator::Translator& g, debias::Classifier& bias_oracle,
                            debias::Classifier& signal_oracle, const ProbeSet& probe);

// One point per generator checkpoint, ordered by iteration. Throws
// ConfigError when the oracles and the generator disagree on K.
ProbeCurve measure_bias_signal_losses(const std::vector<std::pair<std::size_t, std::filesystem::path>>& checkpoints,
                                      const translator::TranslatorArch& arch, debias::Classifier& bias_oracle,
                                      debias::Classifier& signal_oracle, const ProbeSet& probe);

void write_probe_csv(const ProbeCurve& curve, const std::filesystem::path& path);
ProbeCurve read_probe_csv(const std::filesystem::path& path);

// Line chart of both series against translator iterations, with a legend.
data::Image8 render_probe_chart(const ProbeCurve& curve);

// Rows are samples; column 0 holds the originals and column j + 1 the
// translation to domain j. samples: [n, c, h, w] in [0, 1]. Tiles are
// separated by `pad` white pixels.
data::Image8 transformation_grid(const translator::Translator& g, const Tensor& samples, std::size_t pad = 2);
void render_transformation_grid(const translator::Translator& g, const Tensor& samples,
                                const std::filesystem::path& out_path);

// Nearest palette entry to the mean foreground colour of an image in [0, 1].
int decode_palette(std::span<const float> chw, std::size_t height, std::size_t width,
                   const std::vector<data::Rgb>& palette);

// Fraction of translated tiles G(x, j) that decode to palette entry j.
double palette_decode_rate(const translator::Translator& g, const Tensor& samples,
                           const std::vector<data::Rgb>& palette);

}  // namespace cdvg::diagnostics
