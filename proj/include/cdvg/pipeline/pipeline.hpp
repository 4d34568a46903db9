#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "cdvg/data/dataset.hpp"
#include "cdvg/debias/augment.hpp"
#include "cdvg/debias/model.hpp"
#include "cdvg/debias/trainer.hpp"
#include "cdvg/diagnostics/diagnostics.hpp"
#include "cdvg/eval/eval.hpp"
#include "cdvg/translator/translator.hpp"
#include "json.hpp"

namespace cdvg::pipeline {

struct DiagnosticsConfig {
  std::size_t probe_size = 512;
  std::size_t grid_samples = 8;
  std::uint64_t seed = 0;
};

// Everything a pipeline stage needs. Profiles fill the per-dataset defaults;
// a JSON file and command-line flags override them in that order.
struct ExperimentConfig {
  data::DatasetName dataset = data::DatasetName::colored_mnist;
  double ratio = 0.0;
  std::uint64_t data_seed = 0;
  std::uint64_t translator_seed = 0;
  std::uint64_t seed = 0;  // debiasing run
  std::string method = "cdvg";
  std::filesystem::path out = "runs";
  std::filesystem::path mnist_root = "data/mnist";
  std::filesystem::path cifar_root = "data/cifar10";
  std::size_t fallback_train = 8000;  // procedural source sizes when no files exist
  std::size_t fallback_test = 2000;
  int severity = 4;

  translator::TranslatorArch translator_arch;
  translator::TranslatorConfig translator;
  debias::ModelConfig model;
  debias::TrainConfig train;
  debias::AugmentationPolicy augment;
  diagnostics::OracleConfig oracle;
  DiagnosticsConfig diagnostics;
};

// Profile defaults for a dataset.
ExperimentConfig experiment_profile(data::DatasetName dataset);

// Applies a JSON document on top of `base`. Unknown fields and wrong types
// raise ConfigError naming the field path (e.g. "train.lr").
ExperimentConfig apply_json(const nlohmann::json& j, ExperimentConfig base);
nlohmann::json to_json(const ExperimentConfig& config);

std::string ratio_dir(double ratio);

// <out>/<dataset>/<ratio>/<method>/<seed>/
struct Layout {
  std::filesystem::path out;
  data::DatasetName dataset;
  double ratio;

  std::filesystem::path cell(const std::string& method, std::uint64_t seed) const;
  std::filesystem::path data(std::uint64_t data_seed, data::Split split) const;
  std::filesystem::path translator(std::uint64_t translator_seed) const;
  std::filesystem::path diagnostics(std::uint64_t translator_seed) const;
  std::filesystem::path run(const std::string& method, std::uint64_t seed) const;
};
Layout layout(const ExperimentConfig& config);

struct Logger {
  bool json = false;
  std::function<void(const std::string&)> sink;  // stderr when empty
  void info(const std::string& message, const nlohmann::json& fields = nlohmann::json::object()) const;
  void warn(const std::string& message, const nlohmann::json& fields = nlohmann::json::object()) const;
  void log(const char* level, const std::string& message, const nlohmann::json& fields) const;
};

struct StageOptions {
  bool force = false;
  Logger logger;
};

struct StageResult {
  std::filesystem::path dir;
  bool skipped = false;  // already complete with the same configuration
  nlohmann::json sidecar;
};

// Holds <dir>/.lock for the lifetime of the object; throws when another
// process holds it.
class CellLock {
 public:
  explicit CellLock(const std::filesystem::path& dir);
  ~CellLock();
  CellLock(const CellLock&) = delete;
  CellLock& operator=(const CellLock&) = delete;

 private:
  std::filesystem::path path_;
};

// Each stage writes stage.json (effective config, upstream hashes) last.
StageResult run_synth(const ExperimentConfig& config, const StageOptions& options);
StageResult run_train_translator(const ExperimentConfig& config, const StageOptions& options);
// method: vanilla, cdvg, cdvg-no-g, cdvg-no-cl
StageResult run_train(const ExperimentConfig& config, const StageOptions& options);
StageResult run_diagnose(const ExperimentConfig& config, const StageOptions& options);
StageResult run_eval(const ExperimentConfig& config, const StageOptions& options);
StageResult run_grid(const ExperimentConfig& config, const std::filesystem::path& output, const StageOptions& options);

// Aggregates every run directory (holding run.json) matched by the glob
// patterns; writes <output_prefix>.csv and <output_prefix>.txt.
eval::AggregateReport run_report(const std::vector<std::string>& patterns, const std::filesystem::path& output_prefix,
                                 const StageOptions& options);

debias::Ablation method_ablation(const std::string& method);
// Canonical method name for a base method and ablation.
std::string method_name(const std::string& method, debias::Ablation ablation);

// Loaders that turn a missing upstream artifact into an error naming the
// subcommand that produces it.
data::BiasedDataset load_split(const ExperimentConfig& config, data::Split split);
std::unique_ptr<translator::TranslationModel> load_translator(const ExperimentConfig& config);

}  // namespace cdvg::pipeline
